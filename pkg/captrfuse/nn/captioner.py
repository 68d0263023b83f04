"""
Non-autoregressive image captioner.

image -> strided conv backbone -> 1x1 projection -> d×HW memory
      -> encoder layers (2-D sinusoidal positions)
prompt [CLS, 0, ..., 0] -> embedding + 1-D positions -> decoder layers
      -> 3-layer ReLU head -> l×V logits, all positions in one pass.
"""
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from captrfuse.config import TrainConfig
from captrfuse.core import ops
from captrfuse.core.tensor import Tensor, no_grad
from captrfuse.exceptions import ContractError, ParameterError, ShapeError
from captrfuse.nn.attention import DecoderLayer, EncoderLayer, sinusoidal_positions, stack_forward
from captrfuse.nn.module import Module, uniform, zeros
from captrfuse.text.pairs import encode_caption_target
from captrfuse.text.vocabulary import CLS_ID, PAD_ID, SEP_ID, TokenSequence, Vocabulary

ImageLike = Union[np.ndarray, Tensor]


class ConvBlock(Module):
    """3x3 stride-2 convolution followed by ReLU."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, kernel: int = 3):
        self.weight = uniform(rng, (out_channels, in_channels, kernel, kernel), fan_in=in_channels * kernel * kernel)
        self.bias = zeros(out_channels)
        self.stride = 2
        self.padding = kernel // 2

    def forward(self, x: Tensor) -> Tensor:
        return ops.relu(ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding))


class Backbone(Module):
    def __init__(self, channels: Sequence[int], d: int, rng: np.random.Generator):
        widths = [3] + list(channels)
        self.convs = [ConvBlock(c_in, c_out, rng) for c_in, c_out in zip(widths, widths[1:])]
        self.proj_weight = uniform(rng, (d, widths[-1]), fan_in=widths[-1])
        self.proj_bias = zeros(d)

    @property
    def stride(self) -> int:
        return 2 ** len(self.convs)

    def grid(self, image_shape: Tuple[int, ...]) -> Tuple[int, int]:
        if len(image_shape) != 3 or image_shape[0] != 3:
            raise ShapeError(f"image must be 3×H×W, got {image_shape}")
        _, h, w = image_shape
        if h % self.stride or w % self.stride or h == 0 or w == 0:
            raise ShapeError(f"image {h}×{w} is not divisible by the backbone stride {self.stride}")
        return h // self.stride, w // self.stride

    def forward(self, image: ImageLike) -> Tensor:
        x = ops.as_tensor(image)
        h, w = self.grid(x.shape)
        for conv in self.convs:
            x = conv(x)
        flat = ops.reshape(x, (x.shape[0], h * w))
        return self.proj_weight @ flat + ops.reshape(self.proj_bias, (-1, 1))


def backbone_forward(image: ImageLike, params: Backbone) -> Tensor:
    return params(image)


class CaptionHead(Module):
    """W3 R(W2 R(W1 x)) at every decoder position."""

    def __init__(self, d: int, d_hidden: int, vocab_size: int, rng: np.random.Generator):
        self.w1 = uniform(rng, (d_hidden, d), fan_in=d)
        self.w2 = uniform(rng, (d_hidden, d_hidden), fan_in=d_hidden)
        self.w3 = uniform(rng, (vocab_size, d_hidden), fan_in=d_hidden)

    def forward(self, decoder_outputs: Tensor) -> Tensor:
        hidden = ops.relu(self.w2 @ ops.relu(self.w1 @ decoder_outputs))
        return (self.w3 @ hidden).T


def caption_head(decoder_outputs: Tensor, head: CaptionHead) -> Tensor:
    """Raw l×V logits; softmax happens inside the loss or at decoding."""
    return head(decoder_outputs)


def build_prompt(length: int, vocab: Optional[Vocabulary] = None) -> np.ndarray:
    """[CLS] followed by length-1 zeros ([PAD])."""
    if length < 2:
        raise ParameterError(f"prompt length must be at least 2, got {length}")
    cls_id = vocab.cls_id if vocab is not None else CLS_ID
    prompt = np.zeros(length, dtype=np.int64)
    prompt[0] = cls_id
    return prompt


def caption_mask(gold: np.ndarray) -> np.ndarray:
    mask = np.asarray(gold) != PAD_ID
    mask[0] = False
    return mask


def caption_loss(logits: Tensor, gold: Union[np.ndarray, TokenSequence]) -> Tensor:
    """Summed cross-entropy over real gold tokens; position 0 and [PAD] carry no loss."""
    gold = np.asarray(gold, dtype=np.int64)
    if gold.shape != (logits.shape[0],):
        raise ShapeError(f"gold length {gold.shape} does not match logits {logits.shape}")
    return ops.masked_cross_entropy(logits, gold, caption_mask(gold))


class CaptionTransformer(Module):
    """Backbone, DETR-style encoder/decoder, shared-vocabulary embedding and head."""

    def __init__(
        self,
        vocab: Vocabulary,
        d: int,
        n_heads: int,
        n_encoder_layers: int,
        n_decoder_layers: int,
        length: int,
        channels: Sequence[int],
        dropout: float,
        rng: np.random.Generator,
    ):
        if length < 2:
            raise ParameterError(f"caption length must be at least 2, got {length}")
        self.vocab = vocab
        self.length = length
        self.backbone = Backbone(channels, d, rng)
        self.encoder_layers = [EncoderLayer(d, n_heads, dropout, rng) for _ in range(n_encoder_layers)]
        self.decoder_layers = [DecoderLayer(d, n_heads, dropout, rng) for _ in range(n_decoder_layers)]
        self.token_embedding = uniform(rng, (vocab.size, d), fan_in=d)
        self.head = CaptionHead(d, d, vocab.size, rng)
        self._prompt_positions = sinusoidal_positions(d, length)
        self.encoder_passes = 0
        self.decoder_passes = 0

    @classmethod
    def from_config(cls, config: TrainConfig, vocab: Vocabulary, rng: np.random.Generator) -> "CaptionTransformer":
        return cls(
            vocab=vocab,
            d=config.caption_d_model,
            n_heads=config.caption_heads,
            n_encoder_layers=config.caption_encoder_layers,
            n_decoder_layers=config.caption_decoder_layers,
            length=config.caption_len,
            channels=config.backbone_channels,
            dropout=config.attention_dropout,
            rng=rng,
        )

    @property
    def d(self) -> int:
        return self.token_embedding.shape[1]

    def reset_counters(self) -> None:
        self.encoder_passes = 0
        self.decoder_passes = 0

    def encode(self, image: ImageLike, rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, Tensor]:
        """Image to encoder memory; returns (memory, memory positions)."""
        self.encoder_passes += 1
        grid = self.backbone.grid(tuple(np.shape(image.data if isinstance(image, Tensor) else image)))
        positions = sinusoidal_positions(self.d, grid).tensor
        memory = stack_forward(self.backbone(image), self.encoder_layers, positions, rng=rng)
        return memory, positions

    def decode(self, memory: Tensor, memory_positions: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        """Prompt to d×l decoder outputs, cross-attending to memory."""
        self.decoder_passes += 1
        positions = self._prompt_positions.tensor
        x = ops.embedding(self.token_embedding, build_prompt(self.length, self.vocab)).T + positions
        for layer in self.decoder_layers:
            x = layer(x, memory, positions, memory_positions, rng=rng)
        return x

    def forward(self, image: ImageLike, rng: Optional[np.random.Generator] = None) -> Tensor:
        memory, positions = self.encode(image, rng)
        return caption_head(self.decode(memory, positions, rng), self.head)

    def loss(self, image: ImageLike, caption: TokenSequence, rng: Optional[np.random.Generator] = None) -> Tensor:
        return caption_loss(self(image, rng), encode_caption_target(caption, self.length))


def decode_caption(image: ImageLike, model: CaptionTransformer) -> TokenSequence:
    """One forward pass; argmax at positions 1..l-1, cut at the first [PAD] or [SEP].

    ``np.argmax`` returns the lowest id on exact ties.
    """
    if model.training:
        raise ContractError("decode_caption requires the captioner in eval mode")
    with no_grad():
        logits = model(image)
    caption: TokenSequence = []
    for token in np.argmax(logits.data[1:], axis=1):
        if token in (PAD_ID, SEP_ID):
            break
        caption.append(int(token))
    return caption


def token_accuracy(model: CaptionTransformer, pairs: Sequence[Tuple[ImageLike, TokenSequence]]) -> float:
    """Fraction of supervised positions whose argmax equals the gold token."""
    correct = total = 0
    with no_grad():
        for image, caption in pairs:
            gold = encode_caption_target(caption, model.length)
            mask = caption_mask(gold)
            predicted = np.argmax(model(image).data, axis=1)
            correct += int(np.sum((predicted == gold) & mask))
            total += int(mask.sum())
    return correct / total if total else 1.0
