"""
Two-phase training.

Phase 1 updates the captioner (backbone, attention layers, vocabulary head) on
(image, caption) pairs. Phase 2 freezes the captioner, decodes every image once
and updates only the language encoder and classifier head.
"""
import dataclasses
import hashlib
import math
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from captrfuse.config import TrainConfig
from captrfuse.core import ops
from captrfuse.core.tensor import Tensor, backward, no_grad, precision
from captrfuse.exceptions import ConfigError, ContractError, PhaseViolationError, TrainingDivergedError
from captrfuse.logger import log
from captrfuse.models.samples import CaptionPair, MultimodalSample
from captrfuse.nn.captioner import CaptionTransformer, decode_caption, token_accuracy
from captrfuse.nn.classifier import FusionClassifier, FusionMode, sample_tokens
from captrfuse.nn.module import Module
from captrfuse.services.checkpoint import (
    CAPTIONER_PHASE,
    CLASSIFIER_PHASE,
    PHASE_GROUPS,
    Checkpoint,
    build_checkpoint,
    parameter_group,
    save_checkpoint,
)
from captrfuse.services.evaluation import accuracy, predict_records
from captrfuse.services.optimizer import AdamW
from captrfuse.text.tokenizer import tokenize
from captrfuse.text.vocabulary import TokenSequence, Vocabulary

CAPTIONER_FIELDS = (
    "caption_d_model",
    "caption_heads",
    "caption_encoder_layers",
    "caption_decoder_layers",
    "backbone_channels",
    "image_size",
)

CaptionCache = Dict[str, TokenSequence]


class PhaseAuditor:
    """Hashes every parameter outside the active phase after each optimizer step."""

    def __init__(self, phase: str, trainable: Mapping[str, Tensor], frozen: Mapping[str, Tensor]):
        allowed = PHASE_GROUPS[phase]
        outside = sorted(name for name in trainable if parameter_group(name) not in allowed)
        if outside:
            raise PhaseViolationError(f"{phase} phase may not update {outside[:5]}")
        self.phase = phase
        self.frozen = dict(frozen)
        self._digests = self._digest()
        self.checks = 0

    def _digest(self) -> Dict[str, str]:
        return {name: hashlib.sha256(p.data.tobytes()).hexdigest() for name, p in self.frozen.items()}

    def check(self, step: int) -> None:
        current = self._digest()
        changed = sorted(name for name, digest in current.items() if digest != self._digests[name])
        self.checks += 1
        log.bind(audit=True, phase=self.phase, step=step).debug(
            f"{len(current)} frozen tensors verified, {len(changed)} changed"
        )
        if changed:
            raise PhaseViolationError(f"step {step} of the {self.phase} phase changed frozen {changed[:5]}")


def prefixed_parameters(prefix: str, model: Module) -> Dict[str, Tensor]:
    return {f"{prefix}.{name}": p for name, p in model.named_parameters()}


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def total_steps(n: int, batch_size: int, epochs: int) -> int:
    return math.ceil(n / batch_size) * epochs


def _check_finite(loss: float, step: int) -> None:
    if not math.isfinite(loss):
        log.error(f"Training diverged at step {step}: loss={loss}")
        raise TrainingDivergedError(step, loss)


# ----------------------------------------------------------------------
# Phase 1
# ----------------------------------------------------------------------
def pretrain_captioner(
    caption_dataset: Sequence[CaptionPair],
    config: TrainConfig,
    vocab: Vocabulary,
    out_dir: Optional[Path] = None,
    frozen: Optional[Mapping[str, Tensor]] = None,
) -> Checkpoint:
    """Minimise the masked caption loss; returns the final-epoch checkpoint.

    ``frozen`` names parameters outside the captioner that the audit must see
    unchanged (a classifier sharing the process, for instance).
    """
    if not caption_dataset:
        raise ConfigError("caption dataset is empty")
    steps = total_steps(len(caption_dataset), config.caption_batch_size, config.caption_epochs)
    shuffle_rng = np.random.default_rng(config.seed)
    dropout_rng = np.random.default_rng([config.seed, 1])

    with precision(config.dtype):
        model = CaptionTransformer.from_config(config, vocab, np.random.default_rng(config.seed))
        targets = [tokenize(pair.caption, vocab) for pair in caption_dataset]
        trainable = prefixed_parameters(CAPTIONER_PHASE, model)
        optimizer = AdamW(list(trainable.values()), config, config.caption_learning_rate, steps)
        auditor = PhaseAuditor(CAPTIONER_PHASE, trainable, frozen or {}) if config.audit_phases else None
        log.info(
            f"Pretraining captioner: {len(caption_dataset)} pairs, {model.num_parameters()} parameters, "
            f"{steps} steps"
        )

        step_losses: List[float] = []
        history = []
        model.train()
        for epoch in range(1, config.caption_epochs + 1):
            for batch in _batches(len(caption_dataset), config.caption_batch_size, shuffle_rng):
                optimizer.zero_grad()
                batch_loss = 0.0
                for i in batch:
                    loss = model.loss(caption_dataset[i].image, targets[i], dropout_rng)
                    backward(ops.scale(loss, 1.0 / len(batch)))
                    batch_loss += loss.item() / len(batch)
                _check_finite(batch_loss, optimizer.state.step + 1)
                lr = optimizer.step()
                step_losses.append(batch_loss)
                if auditor is not None:
                    auditor.check(optimizer.state.step)
                log.debug(f"captioner step {optimizer.state.step}/{steps} loss={batch_loss:.4f} lr={lr:.2e}")

            model.eval()
            token_acc = token_accuracy(model, [(p.image, t) for p, t in zip(caption_dataset, targets)])
            model.train()
            epoch_loss = float(np.mean(step_losses[-math.ceil(len(caption_dataset) / config.caption_batch_size):]))
            history.append({"epoch": epoch, "loss": epoch_loss, "token_accuracy": token_acc})
            log.info(f"Captioner epoch {epoch}/{config.caption_epochs}: loss={epoch_loss:.4f} token_acc={token_acc:.3f}")
            if out_dir is not None:
                save_checkpoint(build_checkpoint(config, model, metrics={"epoch": epoch}), Path(out_dir) / "captioner")

    model.eval()
    checkpoint = build_checkpoint(
        config,
        model,
        metrics={
            "history": history,
            "step_losses": step_losses,
            "token_accuracy": history[-1]["token_accuracy"],
            "audited_steps": 0 if auditor is None else auditor.checks,
        },
    )
    if out_dir is not None:
        save_checkpoint(checkpoint, Path(out_dir) / "captioner")
    return checkpoint


# ----------------------------------------------------------------------
# Phase 2
# ----------------------------------------------------------------------
def classifier_config(config: TrainConfig, captioner_config: TrainConfig) -> TrainConfig:
    """Classifier config with the captioner's dimensions, so the combined checkpoint rebuilds."""
    update = {name: getattr(captioner_config, name) for name in CAPTIONER_FIELDS}
    update["caption_length"] = captioner_config.caption_len
    return config.model_copy(update=update)


def decode_captions(captioner: CaptionTransformer, samples: Sequence[MultimodalSample]) -> CaptionCache:
    """One frozen decode per sample."""
    if captioner.training:
        raise ContractError("captions must be decoded with the captioner in eval mode")
    return {s.sample_id: decode_caption(s.image, captioner) for s in samples}


def _encode_samples(
    samples: Sequence[MultimodalSample], vocab: Vocabulary, labels: Sequence[str], captions: CaptionCache
) -> List[Tuple[TokenSequence, TokenSequence, TokenSequence, int]]:
    encoded = []
    for s in samples:
        if s.label not in labels:
            raise ConfigError(f"sample {s.sample_id} has label {s.label!r} outside {list(labels)}")
        sentence, target = sample_tokens(s, vocab)
        encoded.append((sentence, target, captions.get(s.sample_id, []), labels.index(s.label)))
    return encoded


def dataset_loss(
    classifier: FusionClassifier,
    samples: Sequence[MultimodalSample],
    captions: CaptionCache,
) -> float:
    """Mean negative log-likelihood over samples in eval mode."""
    encoded = _encode_samples(samples, classifier.vocab, classifier.labels, captions)
    with no_grad():
        return float(np.mean([classifier.loss(*row).item() for row in encoded]))


def train_classifier(
    sentiment_dataset: Sequence[MultimodalSample],
    captioner_ckpt: Checkpoint,
    config: TrainConfig,
    mode: FusionMode,
    labels: Sequence[str],
    dev_dataset: Optional[Sequence[MultimodalSample]] = None,
    out_dir: Optional[Path] = None,
) -> Checkpoint:
    """Fine-tune encoder and head with the captioner frozen.

    The returned checkpoint holds both models at the epoch with the best dev
    accuracy (train accuracy when no dev split is given).
    """
    if captioner_ckpt is None:
        raise ConfigError("classifier training needs a captioner checkpoint")
    if not sentiment_dataset:
        raise ConfigError("sentiment dataset is empty")
    mode = FusionMode(mode)
    labels = tuple(labels)
    config = classifier_config(config, captioner_ckpt.config)
    captioner_ckpt = dataclasses.replace(captioner_ckpt, config=config)
    steps = total_steps(len(sentiment_dataset), config.batch_size, config.epochs)
    shuffle_rng = np.random.default_rng(config.seed)
    dropout_rng = np.random.default_rng([config.seed, 2])

    with precision(config.dtype):
        captioner = captioner_ckpt.captioner().requires_grad_(False)
        dev_dataset = list(dev_dataset or [])
        captions = decode_captions(captioner, list(sentiment_dataset) + dev_dataset) if mode.uses_image else {}
        classifier = FusionClassifier.from_config(
            config, captioner_ckpt.vocab, mode, labels, np.random.default_rng(config.seed)
        )
        encoded = _encode_samples(sentiment_dataset, classifier.vocab, labels, captions)

        trainable = prefixed_parameters(CLASSIFIER_PHASE, classifier)
        optimizer = AdamW(list(trainable.values()), config, config.learning_rate, steps)
        auditor = (
            PhaseAuditor(CLASSIFIER_PHASE, trainable, prefixed_parameters(CAPTIONER_PHASE, captioner))
            if config.audit_phases
            else None
        )
        log.info(
            f"Training {mode.value} classifier: {len(encoded)} samples, "
            f"{classifier.num_parameters()} parameters, {steps} steps"
        )

        history = []
        best: Optional[Dict] = None
        for epoch in range(1, config.epochs + 1):
            classifier.train()
            epoch_losses = []
            for batch in _batches(len(encoded), config.batch_size, shuffle_rng):
                optimizer.zero_grad()
                batch_loss = 0.0
                for i in batch:
                    loss = classifier.loss(*encoded[i], rng=dropout_rng)
                    backward(ops.scale(loss, 1.0 / len(batch)))
                    batch_loss += loss.item() / len(batch)
                _check_finite(batch_loss, optimizer.state.step + 1)
                lr = optimizer.step()
                epoch_losses.append(batch_loss)
                if auditor is not None:
                    auditor.check(optimizer.state.step)
                log.debug(f"classifier step {optimizer.state.step}/{steps} loss={batch_loss:.4f} lr={lr:.2e}")

            classifier.eval()
            train_acc = accuracy(predict_records(classifier, sentiment_dataset, captions))
            dev_acc = accuracy(predict_records(classifier, dev_dataset, captions)) if dev_dataset else None
            record = {
                "epoch": epoch,
                "loss": float(np.mean(epoch_losses)),
                "train_accuracy": train_acc,
                "dev_accuracy": dev_acc,
            }
            history.append(record)
            log.info(
                f"Classifier epoch {epoch}/{config.epochs}: loss={record['loss']:.4f} "
                f"train_acc={train_acc:.3f}" + ("" if dev_acc is None else f" dev_acc={dev_acc:.3f}")
            )
            score = train_acc if dev_acc is None else dev_acc
            if best is None or score > best["score"]:
                best = {"score": score, "epoch": epoch, "state": classifier.state_dict()}

        classifier.load_state_dict(best["state"])
        classifier.eval()

    metrics = {
        "best_epoch": best["epoch"],
        "selection_accuracy": best["score"],
        "history": history,
        "audited_steps": 0 if auditor is None else auditor.checks,
    }
    log.info(f"Selected epoch {best['epoch']} (accuracy {best['score']:.3f})")
    checkpoint = build_checkpoint(config, captioner, classifier, metrics=metrics)
    if out_dir is not None:
        save_checkpoint(checkpoint, Path(out_dir) / "classifier")
    return checkpoint


def run_seeds(
    train: Sequence[MultimodalSample],
    dev: Sequence[MultimodalSample],
    test: Sequence[MultimodalSample],
    captioner_ckpt: Checkpoint,
    config: TrainConfig,
    mode: FusionMode,
    labels: Sequence[str],
    seeds: Sequence[int],
) -> Dict[str, object]:
    """Repeat phase 2 over seeds; test accuracy mean and standard deviation."""
    accuracies = []
    for seed in seeds:
        checkpoint = train_classifier(train, captioner_ckpt, config.model_copy(update={"seed": seed}), mode, labels, dev)
        classifier = checkpoint.classifier()
        captioner = checkpoint.captioner()
        with precision(checkpoint.config.dtype):
            captions = decode_captions(captioner, test) if FusionMode(mode).uses_image else {}
            acc = accuracy(predict_records(classifier, test, captions))
        log.info(f"{FusionMode(mode).value} seed {seed}: test accuracy {acc:.3f}")
        accuracies.append(acc)
    return {
        "mode": FusionMode(mode).value,
        "seeds": list(seeds),
        "accuracies": accuracies,
        "mean": float(np.mean(accuracies)),
        "std": float(np.std(accuracies)),
    }
