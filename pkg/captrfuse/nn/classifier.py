"""
Language-encoder side of the fusion model.

A sentence pair is embedded (token + segment + learned position), run through
masked self-attention layers and pooled at position 0. Fusion modes decide
which pairs are built for a sample:

    EF      (sentence, target + caption)            one pass
    LF      (sentence, target) | (caption, target)   two passes, concatenated
    TEXT    (sentence, target)                       one pass, no image
    PairQA  (sentence, label-word + target) per label, binary head each
"""
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from captrfuse.config import TrainConfig
from captrfuse.core import ops
from captrfuse.core.tensor import Tensor, no_grad
from captrfuse.exceptions import ContractError, ParameterError, ShapeError
from captrfuse.models.samples import MultimodalSample
from captrfuse.nn.attention import EncoderLayer
from captrfuse.nn.captioner import CaptionTransformer, decode_caption
from captrfuse.nn.module import Module, uniform, zeros
from captrfuse.text.pairs import SentencePairEncoding, build_aux_sentence, build_sentence_pair
from captrfuse.text.tokenizer import tokenize
from captrfuse.text.vocabulary import TokenSequence, Vocabulary


class FusionMode(str, Enum):
    EF = "EF"
    LF = "LF"
    PAIR_QA = "PairQA"
    TEXT = "TEXT"

    @property
    def passes(self) -> int:
        """Encoder passes per sample for a three-label task."""
        return {FusionMode.EF: 1, FusionMode.TEXT: 1, FusionMode.LF: 2, FusionMode.PAIR_QA: 3}[self]

    @property
    def uses_image(self) -> bool:
        return self in (FusionMode.EF, FusionMode.LF)


class LanguageEncoder(Module):
    def __init__(
        self,
        vocab: Vocabulary,
        d: int,
        n_heads: int,
        n_layers: int,
        length: int,
        dropout: float,
        rng: np.random.Generator,
    ):
        self.vocab = vocab
        self.length = length
        self.token_embedding = uniform(rng, (vocab.size, d), fan_in=d)
        self.segment_embedding = uniform(rng, (2, d), fan_in=d)
        self.position_embedding = uniform(rng, (length, d), fan_in=d)
        self.layers = [EncoderLayer(d, n_heads, dropout, rng) for _ in range(n_layers)]
        self.pooler_weight = uniform(rng, (d, d), fan_in=d)
        self.pooler_bias = zeros(d)
        self.forward_passes = 0

    @classmethod
    def from_config(cls, config: TrainConfig, vocab: Vocabulary, rng: np.random.Generator) -> "LanguageEncoder":
        return cls(
            vocab=vocab,
            d=config.d_model,
            n_heads=config.n_heads,
            n_layers=config.n_layers,
            length=config.max_length,
            dropout=config.attention_dropout,
            rng=rng,
        )

    @property
    def d(self) -> int:
        return self.token_embedding.shape[1]

    def forward(self, pair: SentencePairEncoding, rng: Optional[np.random.Generator] = None) -> Tensor:
        if len(pair) != self.length:
            raise ShapeError(f"pair length {len(pair)} does not match encoder length {self.length}")
        self.forward_passes += 1
        embedded = (
            ops.embedding(self.token_embedding, pair.ids)
            + ops.embedding(self.segment_embedding, pair.segments)
            + self.position_embedding
        )
        x = embedded.T
        for layer in self.layers:
            x = layer(x, None, key_mask=pair.mask, rng=rng)
        return ops.tanh(self.pooler_weight @ x[:, 0] + self.pooler_bias)


def encode_pair(pair: SentencePairEncoding, params: LanguageEncoder, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Pooled [CLS] representation of one sentence pair."""
    return params(pair, rng)


class ClassifierHead(Module):
    """softmax(W dropout(h) / temperature); no bias."""

    def __init__(self, num_classes: int, in_features: int, dropout: float, rng: np.random.Generator):
        if num_classes < 2:
            raise ParameterError(f"a classifier head needs at least 2 classes, got {num_classes}")
        self.weight = uniform(rng, (num_classes, in_features), fan_in=in_features)
        self.dropout = dropout
        self.temperature = 1.0

    @property
    def num_classes(self) -> int:
        return self.weight.shape[0]

    def logits(self, h: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        if h.shape != (self.weight.shape[1],):
            raise ShapeError(f"head expects a {self.weight.shape[1]}-vector, got {h.shape}")
        out = self.weight @ ops.dropout(h, self.dropout, self.training, rng)
        return out if self.temperature == 1.0 else ops.scale(out, 1.0 / self.temperature)

    def forward(self, h: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        return ops.softmax(self.logits(h, rng))


def classify(
    H_cls: Tensor,
    head: ClassifierHead,
    training: bool,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    previous = head.training
    head.train(training)
    try:
        return head(H_cls, rng)
    finally:
        head.train(previous)


def label_query_ids(label: str, vocab: Vocabulary) -> TokenSequence:
    return tokenize(label.replace("_", " "), vocab)


def mode_pairs(
    mode: FusionMode,
    sentence: TokenSequence,
    target: TokenSequence,
    caption: TokenSequence,
    length: int,
    labels: Sequence[str] = (),
    vocab: Optional[Vocabulary] = None,
) -> List[SentencePairEncoding]:
    """Every sentence pair the mode feeds to the encoder for one sample."""
    if mode is FusionMode.EF:
        return [build_sentence_pair(sentence, build_aux_sentence(target, caption), length)]
    if mode is FusionMode.TEXT:
        return [build_sentence_pair(sentence, build_aux_sentence(target, []), length)]
    if mode is FusionMode.LF:
        return [
            build_sentence_pair(sentence, build_aux_sentence(target, []), length),
            build_sentence_pair(caption, build_aux_sentence(target, []), length),
        ]
    if vocab is None or not labels:
        raise ContractError("PairQA needs the label set and vocabulary to build queries")
    return [
        build_sentence_pair(sentence, label_query_ids(label, vocab) + build_aux_sentence(target, []), length)
        for label in labels
    ]


def ef_probabilities(
    sentence: TokenSequence,
    target: TokenSequence,
    caption: TokenSequence,
    encoder: LanguageEncoder,
    head: ClassifierHead,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    (pair,) = mode_pairs(FusionMode.EF, sentence, target, caption, encoder.length)
    return head(encoder(pair, rng), rng)


def text_probabilities(
    sentence: TokenSequence,
    target: TokenSequence,
    encoder: LanguageEncoder,
    head: ClassifierHead,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    (pair,) = mode_pairs(FusionMode.TEXT, sentence, target, [], encoder.length)
    return head(encoder(pair, rng), rng)


def lf_probabilities(
    sentence: TokenSequence,
    target: TokenSequence,
    caption: TokenSequence,
    encoder: LanguageEncoder,
    head_lf: ClassifierHead,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Sentence encoding first, caption encoding second."""
    if head_lf.weight.shape[1] != 2 * encoder.d:
        raise ShapeError(f"late-fusion head needs {2 * encoder.d} inputs, got {head_lf.weight.shape[1]}")
    tweet_pair, caption_pair = mode_pairs(FusionMode.LF, sentence, target, caption, encoder.length)
    fused = ops.concat([encoder(tweet_pair, rng), encoder(caption_pair, rng)], axis=0)
    return head_lf(fused, rng)


def pair_qa_confidences(
    sentence: TokenSequence,
    target: TokenSequence,
    labels: Sequence[str],
    encoder: LanguageEncoder,
    binary_head: ClassifierHead,
    rng: Optional[np.random.Generator] = None,
) -> List[Tensor]:
    """Binary distribution [no, yes] for each label query."""
    if binary_head.num_classes != 2:
        raise ShapeError(f"PairQA needs a binary head, got {binary_head.num_classes} classes")
    pairs = mode_pairs(FusionMode.PAIR_QA, sentence, target, [], encoder.length, labels, encoder.vocab)
    return [binary_head(encoder(pair, rng), rng) for pair in pairs]


def pair_qa_decide(
    sentence: TokenSequence,
    target: TokenSequence,
    labels: Sequence[str],
    encoder: LanguageEncoder,
    binary_head: ClassifierHead,
) -> Tuple[int, np.ndarray]:
    """Label index with the highest "yes" confidence (first wins on ties)."""
    with no_grad():
        outputs = pair_qa_confidences(sentence, target, labels, encoder, binary_head)
    confidences = np.array([float(p.data[1]) for p in outputs])
    return decide(confidences), confidences


def decide(confidences: Sequence[float]) -> int:
    return int(np.argmax(np.asarray(confidences)))


# ----------------------------------------------------------------------
# Sample-level inference
# ----------------------------------------------------------------------
def sample_tokens(sample: MultimodalSample, vocab: Vocabulary) -> Tuple[TokenSequence, TokenSequence]:
    """(sentence ids, target ids) for a raw sample."""
    return tokenize(sample.sentence, vocab), tokenize(sample.target, vocab)


def _sample_caption(
    sample: MultimodalSample,
    captioner: Optional[CaptionTransformer],
    caption: Optional[TokenSequence],
) -> TokenSequence:
    if caption is not None:
        return list(caption)
    if captioner is None:
        raise ContractError("an image-fusion forward needs a captioner or a decoded caption")
    return decode_caption(sample.image, captioner)


def ef_forward(
    sample: MultimodalSample,
    captioner: Optional[CaptionTransformer],
    encoder: LanguageEncoder,
    head: ClassifierHead,
    caption: Optional[TokenSequence] = None,
) -> Tensor:
    """Decode the image, build the auxiliary sentence, classify the pair.

    A caption already decoded for this image may be passed instead of decoding again.
    """
    sentence, target = sample_tokens(sample, encoder.vocab)
    caption = _sample_caption(sample, captioner, caption)
    return ef_probabilities(sentence, target, caption, encoder, head)


def lf_forward(
    sample: MultimodalSample,
    captioner: Optional[CaptionTransformer],
    encoder: LanguageEncoder,
    head_lf: ClassifierHead,
    caption: Optional[TokenSequence] = None,
) -> Tensor:
    sentence, target = sample_tokens(sample, encoder.vocab)
    caption = _sample_caption(sample, captioner, caption)
    return lf_probabilities(sentence, target, caption, encoder, head_lf)


def pair_qa_predict(
    sample: MultimodalSample,
    encoder: LanguageEncoder,
    binary_head: ClassifierHead,
    labels: Sequence[str],
) -> Tuple[str, np.ndarray]:
    sentence, target = sample_tokens(sample, encoder.vocab)
    index, confidences = pair_qa_decide(sentence, target, labels, encoder, binary_head)
    return labels[index], confidences


class FusionClassifier(Module):
    """Language encoder plus the head its fusion mode needs."""

    def __init__(
        self,
        encoder: LanguageEncoder,
        head: ClassifierHead,
        mode: FusionMode,
        labels: Sequence[str],
    ):
        self.encoder = encoder
        self.head = head
        self.mode = FusionMode(mode)
        self.labels = tuple(labels)

    @classmethod
    def from_config(
        cls,
        config: TrainConfig,
        vocab: Vocabulary,
        mode: FusionMode,
        labels: Sequence[str],
        rng: np.random.Generator,
    ) -> "FusionClassifier":
        mode = FusionMode(mode)
        encoder = LanguageEncoder.from_config(config, vocab, rng)
        in_features = 2 * encoder.d if mode is FusionMode.LF else encoder.d
        num_classes = 2 if mode is FusionMode.PAIR_QA else len(labels)
        head = ClassifierHead(num_classes, in_features, config.pooler_dropout, rng)
        return cls(encoder, head, mode, labels)

    @property
    def vocab(self) -> Vocabulary:
        return self.encoder.vocab

    @property
    def num_classes(self) -> int:
        return len(self.labels)

    def probabilities(
        self,
        sentence: TokenSequence,
        target: TokenSequence,
        caption: TokenSequence,
        rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        """Class distribution for EF, LF and TEXT."""
        if self.mode is FusionMode.EF:
            return ef_probabilities(sentence, target, caption, self.encoder, self.head, rng)
        if self.mode is FusionMode.LF:
            return lf_probabilities(sentence, target, caption, self.encoder, self.head, rng)
        if self.mode is FusionMode.TEXT:
            return text_probabilities(sentence, target, self.encoder, self.head, rng)
        raise ContractError("PairQA has no joint class distribution; use predict")

    def loss(
        self,
        sentence: TokenSequence,
        target: TokenSequence,
        caption: TokenSequence,
        label: int,
        rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        """Negative log-likelihood of the gold label; PairQA sums its three binary terms."""
        if not 0 <= label < self.num_classes:
            raise ParameterError(f"label {label} outside [0, {self.num_classes})")
        if self.mode is FusionMode.PAIR_QA:
            pairs = mode_pairs(self.mode, sentence, target, [], self.encoder.length, self.labels, self.vocab)
            logits = ops.concat(
                [ops.reshape(self.head.logits(self.encoder(pair, rng), rng), (1, 2)) for pair in pairs], axis=0
            )
            answers = (np.arange(self.num_classes) == label).astype(np.int64)
            return ops.masked_cross_entropy(logits, answers, np.ones(self.num_classes, dtype=bool))
        logits = ops.reshape(self._logits(sentence, target, caption, rng), (1, -1))
        return ops.masked_cross_entropy(logits, [label], [True])

    def _logits(self, sentence, target, caption, rng) -> Tensor:
        if self.mode is FusionMode.LF:
            tweet_pair, caption_pair = mode_pairs(self.mode, sentence, target, caption, self.encoder.length)
            fused = ops.concat([self.encoder(tweet_pair, rng), self.encoder(caption_pair, rng)], axis=0)
            return self.head.logits(fused, rng)
        (pair,) = mode_pairs(self.mode, sentence, target, caption, self.encoder.length)
        return self.head.logits(self.encoder(pair, rng), rng)

    def predict(
        self,
        sentence: TokenSequence,
        target: TokenSequence,
        caption: TokenSequence,
    ) -> Tuple[int, np.ndarray, Optional[np.ndarray]]:
        """(label index, class probabilities, PairQA query confidences or None)."""
        if self.training:
            raise ContractError("predict requires the classifier in eval mode")
        if self.mode is FusionMode.PAIR_QA:
            label, confidences = pair_qa_decide(sentence, target, self.labels, self.encoder, self.head)
            return label, confidences / confidences.sum(), confidences
        with no_grad():
            probs = self.probabilities(sentence, target, caption).data.astype(np.float64)
        return int(np.argmax(probs)), probs, None

    def predict_sample(
        self,
        sample: MultimodalSample,
        captioner: Optional[CaptionTransformer] = None,
        caption: Optional[TokenSequence] = None,
    ) -> Tuple[int, np.ndarray, Optional[np.ndarray], TokenSequence]:
        """Sample-level prediction through the mode's forward path.

        Returns (label index, class probabilities, PairQA query confidences or
        None, caption used). Image modes decode with ``captioner`` unless a
        cached ``caption`` is given.
        """
        if self.training:
            raise ContractError("predict requires the classifier in eval mode")
        if self.mode is FusionMode.PAIR_QA:
            label, confidences = pair_qa_predict(sample, self.encoder, self.head, self.labels)
            return self.labels.index(label), confidences / confidences.sum(), confidences, []
        with no_grad():
            if self.mode is FusionMode.TEXT:
                sentence, target = sample_tokens(sample, self.vocab)
                probs = text_probabilities(sentence, target, self.encoder, self.head)
                caption = []
            else:
                caption = _sample_caption(sample, captioner, caption)
                forward = ef_forward if self.mode is FusionMode.EF else lf_forward
                probs = forward(sample, captioner, self.encoder, self.head, caption=caption)
        probs = probs.data.astype(np.float64)
        return int(np.argmax(probs)), probs, None, caption
