"""
Shared token vocabulary.

The captioner predicts ids from this table and the language encoder embeds
the same ids, so a decoded caption is directly readable by the classifier.
"""
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, Union

from captrfuse.exceptions import ParameterError, TokenIndexError

PAD = "[PAD]"
CLS = "[CLS]"
SEP = "[SEP]"
UNK = "[UNK]"
SPECIAL_TOKENS: Tuple[str, ...] = (PAD, CLS, SEP, UNK)

PAD_ID, CLS_ID, SEP_ID, UNK_ID = range(4)

TokenSequence = List[int]


class Vocabulary:
    """Immutable token <-> id bijection with reserved ids 0-3."""

    def __init__(self, tokens: Sequence[str]):
        tokens = tuple(tokens)
        if tokens[: len(SPECIAL_TOKENS)] != SPECIAL_TOKENS:
            raise ParameterError(f"vocabulary must start with {list(SPECIAL_TOKENS)}")
        if len(tokens) < len(SPECIAL_TOKENS) + 1:
            raise ParameterError("vocabulary needs at least one regular token (V >= 5)")
        ids: Dict[str, int] = {}
        for i, token in enumerate(tokens):
            if not token or any(ch.isspace() for ch in token):
                raise ParameterError(f"invalid token {token!r} at id {i}")
            if token in ids:
                raise ParameterError(f"duplicate token {token!r} at ids {ids[token]} and {i}")
            ids[token] = i
        self._tokens = tokens
        self._ids = ids

    @classmethod
    def build(cls, words: Iterable[str]) -> "Vocabulary":
        """Reserved tokens followed by ``words`` in first-seen order."""
        seen: Dict[str, None] = {}
        for word in words:
            if word not in SPECIAL_TOKENS:
                seen.setdefault(word, None)
        return cls(SPECIAL_TOKENS + tuple(seen))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Vocabulary":
        """One token per line; the line number is the id."""
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text("\n".join(self._tokens) + "\n", encoding="utf-8")

    @property
    def tokens(self) -> Tuple[str, ...]:
        return self._tokens

    @property
    def size(self) -> int:
        return len(self._tokens)

    pad_id = PAD_ID
    cls_id = CLS_ID
    sep_id = SEP_ID
    unk_id = UNK_ID

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    def __hash__(self) -> int:
        return hash(self._tokens)

    def __repr__(self) -> str:
        return f"Vocabulary(size={self.size})"

    def token_to_id(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def id_to_token(self, token_id: int) -> str:
        if not 0 <= token_id < len(self._tokens):
            raise TokenIndexError(f"token id {token_id} is outside [0, {len(self._tokens)})")
        return self._tokens[token_id]
