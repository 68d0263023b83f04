from captrfuse.models.records import PredictionRecord
from captrfuse.models.samples import (
    RELATION_LABELS,
    SENTIMENT_LABELS,
    CaptionPair,
    CaptionRecord,
    MultimodalSample,
    SentimentRecord,
)

__all__ = [
    "PredictionRecord",
    "RELATION_LABELS",
    "SENTIMENT_LABELS",
    "CaptionPair",
    "CaptionRecord",
    "MultimodalSample",
    "SentimentRecord",
]
