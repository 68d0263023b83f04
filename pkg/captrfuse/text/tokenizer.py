"""
Whitespace/punctuation tokenizer over the shared vocabulary.
"""
import unicodedata
from typing import List

from captrfuse.text.vocabulary import PAD_ID, TokenSequence, Vocabulary


def _is_punctuation(char: str) -> bool:
    cp = ord(char)
    # All non-letter/number ASCII counts as punctuation.
    if 33 <= cp <= 47 or 58 <= cp <= 64 or 91 <= cp <= 96 or 123 <= cp <= 126:
        return True
    return unicodedata.category(char).startswith("P")


def basic_tokens(text: str) -> List[str]:
    """Lowercase, split on whitespace, then split punctuation off into its own tokens."""
    tokens: List[str] = []
    for word in text.lower().split():
        current = []
        for char in word:
            if _is_punctuation(char):
                if current:
                    tokens.append("".join(current))
                    current = []
                tokens.append(char)
            else:
                current.append(char)
        if current:
            tokens.append("".join(current))
    return tokens


def tokenize(text: str, vocab: Vocabulary) -> TokenSequence:
    """Map text to ids; out-of-vocabulary words become [UNK]."""
    return [vocab.token_to_id(token) for token in basic_tokens(text)]


def detokenize(seq: TokenSequence, vocab: Vocabulary) -> str:
    """Space-join tokens, dropping [PAD]; other special tokens are rendered literally."""
    return " ".join(vocab.id_to_token(int(i)) for i in seq if int(i) != PAD_ID)
