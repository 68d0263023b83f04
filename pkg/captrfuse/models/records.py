"""
Prediction records consumed by the metrics and analysis code.
"""
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

PROBABILITY_TOLERANCE = 1e-6


class PredictionRecord(BaseModel):
    sample_id: str
    gold: int = Field(..., ge=0)
    predicted: int = Field(..., ge=0)
    probabilities: List[float]
    caption_length: int = Field(default=0, ge=0)
    mode: str = "EF"
    confidence: Optional[float] = Field(default=None, ge=0, le=1)
    query_confidences: Optional[List[float]] = None

    @field_validator("probabilities")
    @classmethod
    def validate_probabilities(cls, v: List[float]) -> List[float]:
        if not v:
            raise ValueError("probabilities must not be empty")
        if any(p < -PROBABILITY_TOLERANCE for p in v):
            raise ValueError("probabilities must be non-negative")
        if abs(sum(v) - 1.0) > PROBABILITY_TOLERANCE:
            raise ValueError(f"probabilities sum to {sum(v)}, not 1")
        return v

    @model_validator(mode="after")
    def fill_confidence(self) -> "PredictionRecord":
        if self.predicted >= len(self.probabilities) or self.gold >= len(self.probabilities):
            raise ValueError("label index outside the probability vector")
        if self.confidence is None:
            self.confidence = float(max(self.probabilities))
        return self

    @property
    def correct(self) -> bool:
        return self.gold == self.predicted


def from_probabilities(
    sample_id: str,
    gold: int,
    probabilities: np.ndarray,
    caption_length: int = 0,
    mode: str = "EF",
    query_confidences: Optional[np.ndarray] = None,
) -> PredictionRecord:
    """Record for argmax prediction; PairQA confidence is the winning query's."""
    probabilities = np.asarray(probabilities, dtype=np.float64)
    probabilities = probabilities / probabilities.sum()
    predicted = int(np.argmax(probabilities))
    confidence = None
    if query_confidences is not None:
        query_confidences = np.asarray(query_confidences, dtype=np.float64)
        predicted = int(np.argmax(query_confidences))
        confidence = float(query_confidences[predicted])
    return PredictionRecord(
        sample_id=sample_id,
        gold=gold,
        predicted=predicted,
        probabilities=probabilities.tolist(),
        caption_length=caption_length,
        mode=mode,
        confidence=confidence,
        query_confidences=None if query_confidences is None else query_confidences.tolist(),
    )
