"""
Dataset records.

JSON-lines rows are validated into SentimentRecord / CaptionRecord; once the
image is loaded a row becomes a MultimodalSample.
"""
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

SENTIMENT_LABELS: Tuple[str, ...] = ("negative", "neutral", "positive")
RELATION_LABELS: Tuple[str, ...] = ("not_represented", "represented")


class SentimentRecord(BaseModel):
    """One line of a sentiment (or image-relation) dataset file."""

    model_config = ConfigDict(extra="ignore")

    sentence: str = Field(..., min_length=1)
    target_start: int = Field(..., ge=0)
    target_end: int = Field(..., gt=0)
    label: str
    image: str

    @model_validator(mode="after")
    def validate_span(self) -> "SentimentRecord":
        if not self.target_start < self.target_end <= len(self.sentence):
            raise ValueError(
                f"target span [{self.target_start}, {self.target_end}) is outside the sentence"
            )
        if not self.target.strip():
            raise ValueError("target span is blank")
        return self

    @property
    def target(self) -> str:
        return self.sentence[self.target_start : self.target_end]


class CaptionRecord(BaseModel):
    model_config = ConfigDict(extra="ignore")

    image: str
    caption: str


class MultimodalSample(BaseModel):
    """A sentiment record with its image decoded to a 3×H×W array in [0, 1]."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    sample_id: str
    sentence: str
    target_start: int
    target_end: int
    label: Optional[str] = None
    image: np.ndarray

    @field_validator("image")
    @classmethod
    def validate_image(cls, v: np.ndarray) -> np.ndarray:
        if v.ndim != 3 or v.shape[0] != 3:
            raise ValueError(f"image must be 3×H×W, got {v.shape}")
        return v

    @model_validator(mode="after")
    def validate_span(self) -> "MultimodalSample":
        if not 0 <= self.target_start < self.target_end <= len(self.sentence):
            raise ValueError(
                f"target span [{self.target_start}, {self.target_end}) is outside the sentence"
            )
        return self

    @property
    def target(self) -> str:
        return self.sentence[self.target_start : self.target_end]

    @classmethod
    def from_record(cls, sample_id: str, record: SentimentRecord, image: np.ndarray) -> "MultimodalSample":
        return cls(
            sample_id=sample_id,
            sentence=record.sentence,
            target_start=record.target_start,
            target_end=record.target_end,
            label=record.label,
            image=image,
        )


class CaptionPair(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    sample_id: str
    image: np.ndarray
    caption: str
