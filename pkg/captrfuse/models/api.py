"""
Request/response schemas for the HTTP surface.
"""
from typing import Dict, List, Optional

from pydantic import BaseModel


class HealthResponse(BaseModel):
    status: str
    version: str
    model_loaded: bool
    mode: Optional[str] = None


class CaptionResponse(BaseModel):
    caption: str
    token_ids: List[int]


class PredictionResponse(BaseModel):
    label: str
    probabilities: Dict[str, float]
    caption: str
    auxiliary_sentence: str
    mode: str
    query_confidences: Optional[Dict[str, float]] = None
