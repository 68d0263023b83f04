import numpy as np
import pytest

from captrfuse.exceptions import ConfigError, DataError, ParameterError
from captrfuse.models.samples import RELATION_LABELS, SENTIMENT_LABELS, SentimentRecord
from captrfuse.services.datasets import (
    build_vocabulary,
    decode_image,
    decode_ppm,
    encode_ppm,
    infer_labels,
    load_caption_pairs,
    load_image,
    load_split,
    load_vocabulary,
    read_jsonl,
)
from captrfuse.services.synthetic import (
    COLOURS,
    TARGETS,
    SyntheticSpec,
    generate_synthetic,
    synthetic_label,
    synthetic_words,
    text_only_bayes_accuracy,
    write_synthetic,
)


def test_generation_is_deterministic(small_spec):
    a, b = generate_synthetic(3, small_spec), generate_synthetic(3, small_spec)
    assert [s.sentence for s in a.splits["train"]] == [s.sentence for s in b.splits["train"]]
    for x, y in zip(a.captions, b.captions):
        np.testing.assert_array_equal(x.image, y.image)


def test_split_sizes_and_labels(synthetic_data, small_spec):
    assert len(synthetic_data.captions) == small_spec.n_caption_pairs
    for split in ("train", "dev", "test"):
        samples = synthetic_data.splits[split]
        assert len(samples) == small_spec.split_size(split)
        for s in samples:
            assert s.target in TARGETS
            assert s.label == synthetic_label(s.target, synthetic_data.colours[s.sample_id])
            assert s.image.shape == (3, 16, 16)


def test_captions_name_the_colour(synthetic_data):
    for pair in synthetic_data.captions:
        words = pair.caption.split()
        assert 1 <= len(words) <= 3
        assert len(set(words)) == 1 and words[0] in COLOURS


def test_label_depends_on_both_modalities():
    for target in TARGETS:
        assert len({synthetic_label(target, colour) for colour in COLOURS}) == 3
    for colour in COLOURS:
        assert len({synthetic_label(target, colour) for target in TARGETS}) == 3


def test_text_only_bayes_accuracy():
    assert text_only_bayes_accuracy() == pytest.approx(1 / 3)


def test_vocab_size_padding():
    words = synthetic_words(SyntheticSpec(vocab_size=30))
    assert len(words) + 4 == 30
    with pytest.raises(ParameterError):
        synthetic_words(SyntheticSpec(vocab_size=6))


def test_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(image_size=10)


def test_write_and_reload(tmp_path, synthetic_data):
    write_synthetic(synthetic_data, tmp_path)
    pairs = load_caption_pairs(tmp_path)
    assert [p.caption for p in pairs] == [p.caption for p in synthetic_data.captions]
    np.testing.assert_array_equal(pairs[0].image, synthetic_data.captions[0].image)

    samples, labels = load_split(tmp_path, "dev")
    assert labels == SENTIMENT_LABELS
    assert [s.label for s in samples] == [s.label for s in synthetic_data.splits["dev"]]
    assert [s.target for s in samples] == [s.target for s in synthetic_data.splits["dev"]]
    assert load_vocabulary(tmp_path) == synthetic_data.vocab


def test_build_vocabulary_from_files(tmp_path, synthetic_data):
    write_synthetic(synthetic_data, tmp_path)
    (tmp_path / "vocab.txt").unlink()
    vocab = load_vocabulary(tmp_path)
    assert vocab == build_vocabulary(tmp_path)
    for word in ("positive", "red", "alice", "represented"):
        assert word in vocab.tokens


def test_unknown_split(tmp_path):
    with pytest.raises(ConfigError):
        load_split(tmp_path, "validation")


def test_bad_rows(tmp_path):
    path = tmp_path / "train.jsonl"
    path.write_text('{"sentence": "hi", "target_start": 0, "target_end": 9, "label": "positive", "image": "x.ppm"}\n')
    with pytest.raises(DataError, match="train.jsonl:1"):
        read_jsonl(path, SentimentRecord)
    with pytest.raises(DataError):
        read_jsonl(tmp_path / "absent.jsonl", SentimentRecord)


def _record(label: str) -> SentimentRecord:
    return SentimentRecord(sentence="a b", target_start=0, target_end=1, label=label, image="i")


def test_infer_labels():
    assert infer_labels([_record("represented"), _record("not_represented")]) == RELATION_LABELS
    assert infer_labels([_record("neutral")]) == SENTIMENT_LABELS
    with pytest.raises(DataError):
        infer_labels([_record("angry")])


def test_ppm_codec(tmp_path):
    image = np.random.default_rng(0).integers(0, 256, size=(3, 4, 5)) / 255.0
    buffer = encode_ppm(image)
    assert buffer.startswith(b"P6\n5 4\n255\n")
    np.testing.assert_allclose(decode_ppm(buffer), image)
    commented = b"P6\n# made by hand\n5 4\n255\n" + buffer[len(b"P6\n5 4\n255\n"):]
    np.testing.assert_allclose(decode_ppm(commented), image)
    (tmp_path / "x.ppm").write_bytes(buffer)
    np.testing.assert_allclose(load_image(tmp_path / "x.ppm"), image)


@pytest.mark.parametrize(
    "buffer",
    [b"P3\n1 1\n255\n\x00\x00\x00", b"P6\n1 1\n65535\n\x00\x00\x00", b"P6\n2 2\n255\n\x00", b"P6\n1", b"P6\n1 1\n255"],
)
def test_ppm_rejects_bad_files(buffer):
    with pytest.raises(DataError):
        decode_ppm(buffer)


def test_decode_image_by_extension():
    with pytest.raises(DataError):
        decode_image(b"GIF89a", "cat.gif")
    with pytest.raises(DataError):
        decode_image(b"garbage", "cat.ten")
