"""
Auxiliary sentences and the sentence-pair input layout.

    [CLS] a_1 .. a_n [SEP] b_1 .. b_m [SEP] [PAD] .. [PAD]

Segment ids are 0 up to and including the first [SEP] and 1 over sentence B
and its terminating [SEP]. When B is empty the second [SEP] is omitted and the
layout is the single-sentence one.
"""
from dataclasses import dataclass
from typing import Dict, List

import numpy as np

from captrfuse.exceptions import ContractError, ParameterError
from captrfuse.text.vocabulary import CLS_ID, PAD_ID, SEP_ID, TokenSequence


@dataclass(frozen=True)
class SentencePairEncoding:
    ids: np.ndarray
    segments: np.ndarray
    mask: np.ndarray

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    def to_dict(self) -> Dict[str, List[int]]:
        return {
            "ids": self.ids.tolist(),
            "segments": self.segments.tolist(),
            "mask": self.mask.tolist(),
        }


def build_aux_sentence(target: TokenSequence, caption: TokenSequence) -> TokenSequence:
    """Target tokens followed directly by caption tokens."""
    if not len(target):
        raise ContractError("auxiliary sentence needs a non-empty target")
    return list(target) + list(caption)


def truncate_pair(a: TokenSequence, b: TokenSequence, length: int):
    """Trim B from the tail first, then A, so both fit with three specials."""
    budget = length - 3
    a, b = list(a), list(b)
    if len(a) + len(b) > budget:
        b = b[: max(0, budget - len(a))]
    if len(a) + len(b) > budget:
        a = a[:budget]
    return a, b


def build_sentence_pair(a: TokenSequence, b: TokenSequence, length: int) -> SentencePairEncoding:
    if length < 4:
        raise ParameterError(f"sentence-pair length must be at least 4, got {length}")
    a, b = truncate_pair(a, b, length)

    ids = [CLS_ID] + a + [SEP_ID]
    segments = [0] * len(ids)
    if b:
        ids += b + [SEP_ID]
        segments += [1] * (len(b) + 1)
    real = len(ids)
    padding = length - real

    return SentencePairEncoding(
        ids=np.array(ids + [PAD_ID] * padding, dtype=np.int64),
        segments=np.array(segments + [0] * padding, dtype=np.int64),
        mask=np.array([1] * real + [0] * padding, dtype=np.int64),
    )


def encode_caption_target(caption: TokenSequence, length: int) -> np.ndarray:
    """Gold row for the captioner: [CLS] caption [SEP] [PAD]...

    Position 0 holds the control code and is never a prediction target; the
    [SEP] marks where the description stops.
    """
    if length < 2:
        raise ParameterError(f"caption length must be at least 2, got {length}")
    body = [int(t) for t in caption if int(t) != PAD_ID][: length - 2]
    row = [CLS_ID] + body + [SEP_ID]
    return np.array(row + [PAD_ID] * (length - len(row)), dtype=np.int64)
