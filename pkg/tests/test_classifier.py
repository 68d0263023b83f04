import numpy as np
import pytest

from captrfuse.core import ops
from captrfuse.core.tensor import Tensor, no_grad
from captrfuse.exceptions import ContractError, ParameterError, ShapeError
from captrfuse.models.samples import SENTIMENT_LABELS, MultimodalSample
from captrfuse.nn.captioner import decode_caption
from captrfuse.nn.classifier import (
    ClassifierHead,
    FusionMode,
    classify,
    decide,
    ef_forward,
    encode_pair,
    lf_forward,
    lf_probabilities,
    mode_pairs,
    pair_qa_decide,
    pair_qa_predict,
    sample_tokens,
    text_probabilities,
)
from captrfuse.services.gradcheck_suites import suite_manager
from captrfuse.text.pairs import SentencePairEncoding, build_sentence_pair
from captrfuse.text.vocabulary import CLS_ID, PAD_ID, SEP_ID


@pytest.fixture
def words(vocab):
    ids = {w: vocab.token_to_id(w) for w in ("we", "saw", "alice", "red", "positive", "negative", "neutral")}
    return ids


def test_mode_passes():
    assert [m.passes for m in FusionMode] == [1, 2, 3, 1]
    assert FusionMode.EF.uses_image and FusionMode.LF.uses_image
    assert not FusionMode.PAIR_QA.uses_image and not FusionMode.TEXT.uses_image


def test_ef_pair_layout(words):
    (pair,) = mode_pairs(FusionMode.EF, [words["saw"]], [words["alice"]], [words["red"]], 8)
    assert pair.ids.tolist() == [CLS_ID, words["saw"], SEP_ID, words["alice"], words["red"], SEP_ID, PAD_ID, PAD_ID]
    assert pair.segments.tolist() == [0, 0, 0, 1, 1, 1, 0, 0]


def test_lf_pair_layout(words):
    tweet, caption = mode_pairs(FusionMode.LF, [words["saw"]], [words["alice"]], [words["red"]], 6)
    assert tweet.ids.tolist() == [CLS_ID, words["saw"], SEP_ID, words["alice"], SEP_ID, PAD_ID]
    assert caption.ids.tolist() == [CLS_ID, words["red"], SEP_ID, words["alice"], SEP_ID, PAD_ID]


def test_pair_qa_layout(words, vocab):
    pairs = mode_pairs(FusionMode.PAIR_QA, [words["saw"]], [words["alice"]], [], 7, SENTIMENT_LABELS, vocab)
    assert len(pairs) == 3
    for pair, label in zip(pairs, SENTIMENT_LABELS):
        assert pair.ids.tolist()[:6] == [CLS_ID, words["saw"], SEP_ID, words[label], words["alice"], SEP_ID]
    with pytest.raises(ContractError):
        mode_pairs(FusionMode.PAIR_QA, [words["saw"]], [words["alice"]], [], 7)


@pytest.mark.parametrize("mode", list(FusionMode))
def test_encoder_passes_per_prediction(make_classifier, words, mode):
    model = make_classifier(mode)
    model.encoder.forward_passes = 0
    model.predict([words["we"], words["saw"]], [words["alice"]], [words["red"]])
    assert model.encoder.forward_passes == mode.passes


@pytest.mark.parametrize("mode", [FusionMode.EF, FusionMode.LF, FusionMode.TEXT])
def test_probabilities_sum_to_one(make_classifier, words, mode):
    model = make_classifier(mode)
    _, probs, queries = model.predict([words["saw"]], [words["alice"]], [words["red"]])
    assert probs.shape == (3,)
    assert probs.sum() == pytest.approx(1.0, abs=1e-9)
    assert queries is None


def test_zero_head_is_uniform(make_classifier, words):
    model = make_classifier(FusionMode.EF)
    model.head.weight.data[:] = 0.0
    _, probs, _ = model.predict([words["saw"]], [words["alice"]], [words["red"]])
    np.testing.assert_allclose(probs, [1 / 3] * 3)


def test_pad_tokens_do_not_change_pooled_output(make_classifier, words):
    encoder = make_classifier(FusionMode.EF).encoder
    pair = build_sentence_pair([words["saw"]], [words["alice"]], encoder.length)
    changed_ids = pair.ids.copy()
    changed_ids[-1] = words["red"]
    changed = SentencePairEncoding(changed_ids, pair.segments, pair.mask)
    with no_grad():
        np.testing.assert_allclose(encode_pair(pair, encoder).data, encode_pair(changed, encoder).data, atol=1e-12)


def test_encoder_rejects_wrong_length(make_classifier, words):
    encoder = make_classifier(FusionMode.EF).encoder
    with pytest.raises(ShapeError):
        encoder(build_sentence_pair([words["saw"]], [], encoder.length - 1))


def test_lf_head_width_is_checked(make_classifier, words):
    model = make_classifier(FusionMode.LF)
    assert model.head.weight.shape == (3, 2 * model.encoder.d)
    narrow = ClassifierHead(3, model.encoder.d, 0.0, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        lf_probabilities([words["saw"]], [words["alice"]], [words["red"]], model.encoder, narrow)


def test_pair_qa_outputs(make_classifier, words):
    model = make_classifier(FusionMode.PAIR_QA)
    assert model.head.num_classes == 2
    index, probs, queries = model.predict([words["saw"]], [words["alice"]], [])
    assert queries.shape == (3,)
    assert np.all((queries > 0) & (queries < 1))
    assert index == int(np.argmax(queries))
    np.testing.assert_allclose(probs, queries / queries.sum())
    with pytest.raises(ContractError):
        model.probabilities([words["saw"]], [words["alice"]], [])


def test_pair_qa_decide_matches_predict(make_classifier, words):
    model = make_classifier(FusionMode.PAIR_QA)
    sentence, target = [words["saw"]], [words["alice"]]
    index, confidences = pair_qa_decide(sentence, target, SENTIMENT_LABELS, model.encoder, model.head)
    predicted, _, queries = model.predict(sentence, target, [])
    assert index == predicted
    np.testing.assert_array_equal(confidences, queries)


def test_decide_examples():
    assert decide((0.9, 0.2, 0.3)) == 0
    assert decide((0.1, 0.7, 0.7)) == 1
    assert decide((0.4, 0.4, 0.4)) == 0


def test_loss_rejects_bad_label(make_classifier, words):
    model = make_classifier(FusionMode.EF)
    with pytest.raises(ParameterError):
        model.loss([words["saw"]], [words["alice"]], [words["red"]], 3)


def test_pair_qa_loss_sums_binary_terms(make_classifier, words):
    model = make_classifier(FusionMode.PAIR_QA)
    model.head.weight.data[:] = 0.0
    loss = model.loss([words["saw"]], [words["alice"]], [], 2)
    assert loss.item() == pytest.approx(3 * np.log(2), abs=1e-12)


def test_predict_requires_eval(make_classifier, words):
    model = make_classifier(FusionMode.EF).train()
    with pytest.raises(ContractError):
        model.predict([words["saw"]], [words["alice"]], [words["red"]])


def test_head_dropout_only_in_training():
    head = ClassifierHead(3, 4, 0.5, np.random.default_rng(0))
    h = Tensor(np.ones(4))
    with no_grad():
        eval_a = classify(h, head, training=False).data
        eval_b = classify(h, head, training=False).data
        train = classify(h, head, training=True, rng=np.random.default_rng(1)).data
    np.testing.assert_array_equal(eval_a, eval_b)
    assert train.sum() == pytest.approx(1.0)
    with pytest.raises(ParameterError):
        ClassifierHead(1, 4, 0.0, np.random.default_rng(0))


def test_temperature_sharpens(make_classifier, words):
    model = make_classifier(FusionMode.EF)
    _, before, _ = model.predict([words["saw"]], [words["alice"]], [words["red"]])
    model.head.temperature = 0.5
    _, after, _ = model.predict([words["saw"]], [words["alice"]], [words["red"]])
    assert after.max() >= before.max()


def test_classifier_gradients():
    results = suite_manager.run("classifier", seed=0)
    assert suite_manager.passed(results), suite_manager.summary(results)


@pytest.fixture
def sample(image):
    return MultimodalSample(
        sample_id="s0", sentence="we saw alice today", target_start=7, target_end=12, label="positive", image=image
    )


def test_classify_restores_head_mode():
    head = ClassifierHead(3, 4, 0.5, np.random.default_rng(0)).eval()
    with no_grad():
        classify(Tensor(np.ones(4)), head, training=True, rng=np.random.default_rng(1))
    assert not head.training
    head.train()
    with no_grad():
        classify(Tensor(np.ones(4)), head, training=False)
    assert head.training


def test_ef_forward_with_empty_caption_is_text_only(make_classifier, captioner, sample):
    for p in captioner.head.parameters():
        p.data[...] = 0.0
    assert decode_caption(sample.image, captioner) == []
    model = make_classifier(FusionMode.EF)
    sentence, target = sample_tokens(sample, model.vocab)
    with no_grad():
        fused = ef_forward(sample, captioner, model.encoder, model.head).data
        text_only = text_probabilities(sentence, target, model.encoder, model.head).data
    np.testing.assert_array_equal(fused, text_only)


def test_ef_forward_is_repeatable(make_classifier, captioner, sample):
    model = make_classifier(FusionMode.EF)
    captioner.reset_counters()
    with no_grad():
        first = ef_forward(sample, captioner, model.encoder, model.head).data
        second = ef_forward(sample, captioner, model.encoder, model.head).data
    np.testing.assert_array_equal(first, second)
    assert (captioner.encoder_passes, captioner.decoder_passes) == (2, 2)
    with pytest.raises(ContractError):
        ef_forward(sample, None, model.encoder, model.head)


def test_lf_forward_with_caption_equal_to_sentence(make_classifier, sample):
    model = make_classifier(FusionMode.LF)
    sentence, target = sample_tokens(sample, model.vocab)
    with no_grad():
        (pair,) = mode_pairs(FusionMode.TEXT, sentence, target, [], model.encoder.length)
        h = encode_pair(pair, model.encoder)
        expected = model.head(ops.concat([h, h], axis=0)).data
        model.encoder.forward_passes = 0
        probs = lf_forward(sample, None, model.encoder, model.head, caption=sentence).data
    np.testing.assert_allclose(probs, expected, rtol=0, atol=1e-12)
    assert model.encoder.forward_passes == 2


def test_lf_forward_zero_head_is_uniform(make_classifier, captioner, sample):
    model = make_classifier(FusionMode.LF)
    model.head.weight.data[...] = 0.0
    with no_grad():
        probs = lf_forward(sample, captioner, model.encoder, model.head).data
    np.testing.assert_allclose(probs, np.full(3, 1 / 3), atol=1e-12)


def test_pair_qa_predict_ties_go_to_negative(make_classifier, sample):
    model = make_classifier(FusionMode.PAIR_QA)
    model.head.weight.data[...] = 0.0
    model.encoder.forward_passes = 0
    label, confidences = pair_qa_predict(sample, model.encoder, model.head, model.labels)
    assert label == "negative"
    np.testing.assert_allclose(confidences, [0.5, 0.5, 0.5])
    assert model.encoder.forward_passes == 3


@pytest.mark.parametrize("mode", list(FusionMode), ids=lambda m: m.value)
def test_predict_sample_matches_token_predict(make_classifier, captioner, sample, mode):
    model = make_classifier(mode)
    sentence, target = sample_tokens(sample, model.vocab)
    caption = decode_caption(sample.image, captioner) if mode.uses_image else []
    index, probs, queries, used = model.predict_sample(sample, captioner)
    expected_index, expected_probs, expected_queries = model.predict(sentence, target, caption)
    assert index == expected_index
    assert used == caption
    np.testing.assert_allclose(probs, expected_probs, atol=1e-12)
    assert (queries is None) == (expected_queries is None)
