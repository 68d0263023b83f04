"""
Gradient-check suites for orchestrating finite-difference verification.
Each suite builds a tiny float64 model for one area and checks every entry
of every parameter it owns; the manager runs one suite or all of them.
"""
from typing import Callable, Dict, List, Optional

import numpy as np

from captrfuse.core import ops
from captrfuse.core.gradcheck import GradCheckReport, grad_check
from captrfuse.core.tensor import Tensor, parameter, precision
from captrfuse.exceptions import ConfigError
from captrfuse.logger import log
from captrfuse.nn.attention import DecoderLayer, EncoderLayer, sinusoidal_positions
from captrfuse.nn.captioner import CaptionTransformer
from captrfuse.nn.classifier import ClassifierHead, FusionClassifier, FusionMode, LanguageEncoder
from captrfuse.text.vocabulary import Vocabulary

SuiteResult = Dict[str, GradCheckReport]


class GradCheckSuite:
    name: str = "base"
    description: str = "Base gradient-check suite."
    max_entries: Optional[int] = None
    retries: int = 2

    def cases(self, rng: np.random.Generator) -> Dict[str, tuple]:
        """Case name -> (closure, parameter list)."""
        raise NotImplementedError("Suite must implement cases()")

    def run(self, seed: int = 0) -> SuiteResult:
        rng = np.random.default_rng(seed)
        results: SuiteResult = {}
        with precision("float64"):
            for case, (f, params) in self.cases(rng).items():
                report = grad_check(f, params, max_entries=self.max_entries, seed=seed, retries=self.retries)
                results[case] = report
                level = "INFO" if report.passed else "ERROR"
                log.log(level, f"gradcheck {self.name}.{case}: checked={report.checked} max_error={report.max_error:.2e}")
                if report.retried:
                    log.warning(
                        f"gradcheck {self.name}.{case}: {len(report.retried)} entries needed a smaller step "
                        f"(first at param {report.retried[0][0]}, index {report.retried[0][1]})"
                    )
        return results


def _tiny_vocab(size: int = 8) -> Vocabulary:
    return Vocabulary.build([f"w{i}" for i in range(size - 4)])


def _projection_loss(out: Tensor, weights: np.ndarray) -> Tensor:
    # Layer-normalised outputs sum to a constant; a fixed random projection does not.
    return ops.sum(ops.mul(out, weights))


class TensorSuite(GradCheckSuite):
    name = "tensor"
    description = "Primitive operations composed into scalars."

    def cases(self, rng: np.random.Generator) -> Dict[str, tuple]:
        W = parameter(rng.normal(size=(4, 3)))
        x = parameter(rng.normal(size=3))
        b = parameter(rng.normal(size=4))
        gamma = parameter(rng.uniform(0.5, 1.5, size=4))
        beta = parameter(rng.normal(size=4))
        logits = parameter(rng.normal(size=(5, 6)))
        targets = rng.integers(0, 6, size=5)
        mask = np.array([True, True, False, True, False])
        table = parameter(rng.normal(size=(6, 4)))
        image = parameter(rng.uniform(size=(2, 6, 6)))
        kernel = parameter(rng.normal(size=(3, 2, 3, 3)))
        kernel_bias = parameter(rng.normal(size=3))
        proj = rng.normal(size=(3, 3, 3))

        def squared_norm():
            y = W @ x
            return ops.sum(ops.mul(y, y))

        def composite():
            h = ops.tanh(W @ x + b)
            normed = ops.layer_norm(ops.reshape(h, (1, 4)), gamma, beta)
            mixed = ops.concat([normed, ops.reshape(ops.softmax(h), (1, 4))], axis=0)
            return ops.mean(ops.relu(mixed + 0.1)) + ops.sum(ops.log_softmax(h)[0:2])

        def cross_entropy():
            return ops.masked_cross_entropy(logits, targets, mask)

        def lookup():
            rows = ops.embedding(table, [1, 3, 3, 5])
            return ops.sum(ops.mul(ops.transpose(rows), ops.transpose(rows)))

        def convolution():
            out = ops.conv2d(image, kernel, kernel_bias, stride=2, padding=1)
            return _projection_loss(out, proj)

        return {
            "squared_norm": (squared_norm, [W, x]),
            "composite": (composite, [W, x, b, gamma, beta]),
            "masked_cross_entropy": (cross_entropy, [logits]),
            "embedding": (lookup, [table]),
            "conv2d": (convolution, [image, kernel, kernel_bias]),
        }


class AttentionSuite(GradCheckSuite):
    name = "attention"
    description = "Encoder and decoder layers with positions and a key mask."

    def cases(self, rng: np.random.Generator) -> Dict[str, tuple]:
        d, n, m = 8, 5, 4
        encoder = EncoderLayer(d, 2, 0.0, rng)
        decoder = DecoderLayer(d, 2, 0.0, rng)
        X = parameter(rng.normal(size=(d, n)))
        memory = parameter(rng.normal(size=(d, m)))
        key_mask = np.array([1, 1, 1, 0, 0])
        P = sinusoidal_positions(d, n)
        P_mem = sinusoidal_positions(d, (2, 2))
        w_enc = rng.normal(size=(d, n))

        def encoder_loss():
            return _projection_loss(encoder(X, P, key_mask=key_mask), w_enc)

        def decoder_loss():
            return _projection_loss(decoder(X, memory, P, P_mem), w_enc)

        return {
            "encoder_layer": (encoder_loss, encoder.parameters() + [X]),
            "decoder_layer": (decoder_loss, decoder.parameters() + [X, memory]),
        }


class CaptionerSuite(GradCheckSuite):
    name = "captioner"
    description = "Masked caption loss end to end on a 3×16×16 image (pixels excluded)."

    def cases(self, rng: np.random.Generator) -> Dict[str, tuple]:
        vocab = _tiny_vocab()
        model = CaptionTransformer(
            vocab=vocab, d=8, n_heads=2, n_encoder_layers=1, n_decoder_layers=1,
            length=6, channels=[4, 4, 4], dropout=0.0, rng=rng,
        ).eval()
        image = rng.uniform(size=(3, 16, 16))
        caption = [4, 5, 5]
        return {"caption_loss": (lambda: model.loss(image, caption), model.parameters())}


class ClassifierSuite(GradCheckSuite):
    name = "classifier"
    description = "Sentence-pair encoder with EF, LF and PairQA heads."

    def cases(self, rng: np.random.Generator) -> Dict[str, tuple]:
        vocab = Vocabulary.build(["negative", "neutral", "positive", "alice", "red", "saw"])
        ids = {t: vocab.token_to_id(t) for t in ("alice", "red", "saw")}
        sentence, target, caption = [ids["saw"], ids["alice"]], [ids["alice"]], [ids["red"], ids["red"]]
        labels = ("negative", "neutral", "positive")

        def build(mode: FusionMode) -> FusionClassifier:
            encoder = LanguageEncoder(vocab, d=8, n_heads=2, n_layers=1, length=8, dropout=0.0, rng=rng)
            in_features = 2 * encoder.d if mode is FusionMode.LF else encoder.d
            classes = 2 if mode is FusionMode.PAIR_QA else len(labels)
            return FusionClassifier(encoder, ClassifierHead(classes, in_features, 0.0, rng), mode, labels).eval()

        cases = {}
        for mode in (FusionMode.EF, FusionMode.LF, FusionMode.PAIR_QA):
            model = build(mode)
            cases[f"{mode.value.lower()}_loss"] = (
                lambda model=model: model.loss(sentence, target, caption, 1),
                model.parameters(),
            )
        return cases


class SuiteManager:
    """Manages all available gradient-check suites."""

    def __init__(self):
        self.suites: Dict[str, GradCheckSuite] = {}

    def register(self, suite: GradCheckSuite) -> None:
        if suite.name in self.suites:
            log.warning(f"Suite {suite.name} already registered, overwriting")
        self.suites[suite.name] = suite
        log.debug(f"Registered gradcheck suite: {suite.name}")

    def get(self, name: str) -> GradCheckSuite:
        if name not in self.suites:
            raise ConfigError(f"unknown gradcheck module {name!r}; expected one of {self.names()}")
        return self.suites[name]

    def names(self) -> List[str]:
        return list(self.suites)

    def run(self, name: str = "all", seed: int = 0) -> Dict[str, SuiteResult]:
        selected = self.names() if name == "all" else [self.get(name).name]
        return {n: self.suites[n].run(seed) for n in selected}

    @staticmethod
    def passed(results: Dict[str, SuiteResult]) -> bool:
        return all(report.passed for suite in results.values() for report in suite.values())

    @staticmethod
    def summary(results: Dict[str, SuiteResult]) -> Dict[str, Dict[str, dict]]:
        return {n: {case: r.summary() for case, r in suite.items()} for n, suite in results.items()}


def _default_manager(factories: List[Callable[[], GradCheckSuite]]) -> SuiteManager:
    manager = SuiteManager()
    for factory in factories:
        manager.register(factory())
    return manager


# Global suite manager instance
suite_manager = _default_manager([TensorSuite, AttentionSuite, CaptionerSuite, ClassifierSuite])
