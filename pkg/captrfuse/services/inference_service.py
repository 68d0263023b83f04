"""
Inference service over a frozen classifier checkpoint.
Decodes images into captions and classifies target sentiment for the HTTP
surface and the CLI decode command.
"""
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from captrfuse.core.tensor import no_grad, precision
from captrfuse.exceptions import ContractError
from captrfuse.logger import log
from captrfuse.models.api import CaptionResponse, PredictionResponse
from captrfuse.models.samples import MultimodalSample
from captrfuse.nn.captioner import CaptionTransformer, decode_caption
from captrfuse.nn.classifier import FusionClassifier
from captrfuse.services.checkpoint import CLASSIFIER_PHASE, Checkpoint, load_checkpoint
from captrfuse.text.pairs import build_aux_sentence
from captrfuse.text.tokenizer import detokenize, tokenize
from captrfuse.text.vocabulary import TokenSequence, Vocabulary


class InferenceService:
    """Read-only captioner and classifier pair; models stay in eval mode."""

    def __init__(self, checkpoint: Checkpoint):
        self.checkpoint = checkpoint
        self.dtype = checkpoint.config.dtype
        self.captioner: CaptionTransformer = checkpoint.captioner().requires_grad_(False)
        self.classifier: Optional[FusionClassifier] = None
        if checkpoint.phase == CLASSIFIER_PHASE:
            self.classifier = checkpoint.classifier().requires_grad_(False)

    @classmethod
    def from_checkpoint(cls, path: Union[str, Path]) -> "InferenceService":
        service = cls(load_checkpoint(path))
        log.info(
            f"Inference service ready: phase={service.checkpoint.phase} "
            f"mode={service.mode or '-'} vocab={service.vocab.size}"
        )
        return service

    @property
    def vocab(self) -> Vocabulary:
        return self.checkpoint.vocab

    @property
    def mode(self) -> Optional[str]:
        return None if self.classifier is None else self.classifier.mode.value

    @property
    def labels(self) -> Tuple[str, ...]:
        return self.checkpoint.labels

    def health_check(self) -> bool:
        return not self.captioner.training

    def caption_ids(self, image: np.ndarray) -> TokenSequence:
        with precision(self.dtype), no_grad():
            return decode_caption(np.asarray(image, dtype=self.dtype), self.captioner)

    def decode(self, image: np.ndarray) -> CaptionResponse:
        """Caption text and token ids for one 3×H×W image."""
        ids = self.caption_ids(image)
        log.info(f"Decoded caption of {len(ids)} tokens")
        return CaptionResponse(caption=detokenize(ids, self.vocab), token_ids=ids)

    def auxiliary_sentence(self, target: str, caption: TokenSequence) -> str:
        return detokenize(build_aux_sentence(tokenize(target, self.vocab), caption), self.vocab)

    def predict(self, sentence: str, target_start: int, target_end: int, image: np.ndarray) -> PredictionResponse:
        """Classify the sentiment toward ``sentence[target_start:target_end]``.

        Raises pydantic's ValidationError for a span outside the sentence.
        """
        if self.classifier is None:
            raise ContractError("a captioner checkpoint cannot classify; load a classifier checkpoint")
        sample = MultimodalSample(
            sample_id="request",
            sentence=sentence,
            target_start=target_start,
            target_end=target_end,
            image=np.asarray(image, dtype=self.dtype),
        )
        with precision(self.dtype):
            index, probs, queries, caption = self.classifier.predict_sample(sample, self.captioner)

        query_confidences: Optional[Dict[str, float]] = None
        if queries is not None:
            query_confidences = {label: float(c) for label, c in zip(self.labels, queries)}
        log.info(f"Predicted {self.labels[index]!r} for target {sample.target!r}")
        return PredictionResponse(
            label=self.labels[index],
            probabilities={label: float(p) for label, p in zip(self.labels, probs)},
            caption=detokenize(caption, self.vocab),
            auxiliary_sentence=self.auxiliary_sentence(sample.target, caption),
            mode=self.classifier.mode.value,
            query_confidences=query_confidences,
        )

