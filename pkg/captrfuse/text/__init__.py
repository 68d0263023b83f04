from captrfuse.text.pairs import (
    SentencePairEncoding,
    build_aux_sentence,
    build_sentence_pair,
    encode_caption_target,
)
from captrfuse.text.tokenizer import basic_tokens, detokenize, tokenize
from captrfuse.text.vocabulary import (
    CLS,
    CLS_ID,
    PAD,
    PAD_ID,
    SEP,
    SEP_ID,
    SPECIAL_TOKENS,
    UNK,
    UNK_ID,
    TokenSequence,
    Vocabulary,
)

__all__ = [
    "SentencePairEncoding",
    "build_aux_sentence",
    "build_sentence_pair",
    "encode_caption_target",
    "basic_tokens",
    "detokenize",
    "tokenize",
    "CLS",
    "CLS_ID",
    "PAD",
    "PAD_ID",
    "SEP",
    "SEP_ID",
    "SPECIAL_TOKENS",
    "UNK",
    "UNK_ID",
    "TokenSequence",
    "Vocabulary",
]
