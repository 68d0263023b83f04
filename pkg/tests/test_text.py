import numpy as np
import pytest

from captrfuse.exceptions import ContractError, ParameterError, TokenIndexError
from captrfuse.text.pairs import build_aux_sentence, build_sentence_pair, encode_caption_target, truncate_pair
from captrfuse.text.tokenizer import basic_tokens, detokenize, tokenize
from captrfuse.text.vocabulary import CLS_ID, PAD_ID, SEP_ID, SPECIAL_TOKENS, UNK_ID, Vocabulary


def test_reserved_ids(vocab):
    assert vocab.tokens[:4] == SPECIAL_TOKENS
    assert (PAD_ID, CLS_ID, SEP_ID, UNK_ID) == (0, 1, 2, 3)
    assert vocab.token_to_id("[SEP]") == SEP_ID


def test_vocabulary_validation():
    with pytest.raises(ParameterError):
        Vocabulary(["a", "b"])
    with pytest.raises(ParameterError):
        Vocabulary(list(SPECIAL_TOKENS))
    with pytest.raises(ParameterError):
        Vocabulary(list(SPECIAL_TOKENS) + ["x", "x"])
    with pytest.raises(ParameterError):
        Vocabulary(list(SPECIAL_TOKENS) + ["two words"])


def test_build_keeps_first_seen_order():
    vocab = Vocabulary.build(["b", "a", "b", "[PAD]", "c"])
    assert vocab.tokens[4:] == ("b", "a", "c")


def test_save_and_load(tmp_path, vocab):
    vocab.save(tmp_path / "vocab.txt")
    assert Vocabulary.load(tmp_path / "vocab.txt") == vocab


def test_id_to_token_range(vocab):
    with pytest.raises(TokenIndexError):
        vocab.id_to_token(vocab.size)


def test_tokenize_examples(vocab):
    assert tokenize("", vocab) == []
    red = vocab.token_to_id("red")
    assert tokenize("Red red", vocab) == [red, red]
    assert tokenize("zyxqq", vocab) == [UNK_ID]


def test_punctuation_is_split():
    assert basic_tokens("Hi, Alice!") == ["hi", ",", "alice", "!"]


def test_detokenize(vocab):
    alice = vocab.token_to_id("alice")
    assert detokenize([], vocab) == ""
    assert detokenize([alice, PAD_ID, PAD_ID], vocab) == "alice"
    text = "we saw alice today"
    assert detokenize(tokenize(text, vocab), vocab) == text


def test_aux_sentence():
    assert build_aux_sentence([10], [20, 21]) == [10, 20, 21]
    assert build_aux_sentence([10], []) == [10]
    assert build_aux_sentence([10, 11], [20]) == [10, 11, 20]
    with pytest.raises(ContractError):
        build_aux_sentence([], [20])


def test_sentence_pair_layout():
    pair = build_sentence_pair([5], [7], 6)
    assert pair.ids.tolist() == [CLS_ID, 5, SEP_ID, 7, SEP_ID, PAD_ID]
    assert pair.segments.tolist() == [0, 0, 0, 1, 1, 0]
    assert pair.mask.tolist() == [1, 1, 1, 1, 1, 0]


def test_sentence_pair_empty_b():
    pair = build_sentence_pair([5, 6], [], 6)
    assert pair.ids.tolist() == [CLS_ID, 5, 6, SEP_ID, PAD_ID, PAD_ID]
    assert pair.segments.tolist() == [0] * 6
    assert pair.mask.tolist() == [1, 1, 1, 1, 0, 0]


def test_sentence_pair_truncates_b_first():
    pair = build_sentence_pair([5, 6], [7, 8, 9, 10], 8)
    assert len(pair) == 8
    assert pair.ids.tolist() == [CLS_ID, 5, 6, SEP_ID, 7, 8, 9, SEP_ID]
    a, b = truncate_pair(list(range(10)), [1, 2], 8)
    assert (len(a), b) == (5, [])


def test_sentence_pair_min_length():
    with pytest.raises(ParameterError):
        build_sentence_pair([5], [], 3)


def test_sentence_pair_property_over_lengths():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a = rng.integers(4, 20, size=rng.integers(0, 12)).tolist()
        b = rng.integers(4, 20, size=rng.integers(0, 12)).tolist()
        length = int(rng.integers(4, 16))
        pair = build_sentence_pair(a, b, length)
        assert len(pair) == length
        assert pair.ids[0] == CLS_ID
        assert np.all(pair.ids[pair.mask == 0] == PAD_ID)


def test_caption_target():
    assert encode_caption_target([7, 8], 6).tolist() == [CLS_ID, 7, 8, SEP_ID, PAD_ID, PAD_ID]
    assert encode_caption_target([7, 8, 9, 10, 11], 4).tolist() == [CLS_ID, 7, 8, SEP_ID]
    assert encode_caption_target([], 2).tolist() == [CLS_ID, SEP_ID]
