"""
Inference API endpoints.
Caption decoding and target sentiment prediction over multipart uploads.
"""
import numpy as np
from fastapi import APIRouter, Depends, File, Form, HTTPException, Request, UploadFile
from pydantic import ValidationError

from captrfuse.exceptions import CaptrFuseError, DataError
from captrfuse.logger import log
from captrfuse.models.api import CaptionResponse, PredictionResponse
from captrfuse.services.datasets import decode_image
from captrfuse.services.inference_service import InferenceService


router = APIRouter()


async def get_inference_service(request: Request) -> InferenceService:
    """Dependency to get the inference service."""
    service = getattr(request.app.state, "inference_service", None)
    if service is None:
        raise HTTPException(status_code=503, detail="No model loaded")
    return service


async def read_image(image: UploadFile) -> np.ndarray:
    if not image.filename:
        raise HTTPException(status_code=400, detail="No filename provided")
    contents = await image.read()
    try:
        return decode_image(contents, image.filename)
    except DataError as e:
        raise HTTPException(status_code=400, detail=str(e))


@router.post("/captions/decode", response_model=CaptionResponse)
async def decode(
    image: UploadFile = File(...),
    service: InferenceService = Depends(get_inference_service),
):
    """Translate an image (.ppm or .ten) into a caption."""
    pixels = await read_image(image)
    try:
        return service.decode(pixels)
    except CaptrFuseError as e:
        log.warning(f"Rejected image {image.filename}: {e}")
        raise HTTPException(status_code=400, detail=str(e))


@router.post("/sentiment/predict", response_model=PredictionResponse)
async def predict(
    sentence: str = Form(...),
    target_start: int = Form(...),
    target_end: int = Form(...),
    image: UploadFile = File(...),
    service: InferenceService = Depends(get_inference_service),
):
    """Classify the sentiment toward the target span of a sentence."""
    pixels = await read_image(image)
    try:
        return service.predict(sentence, target_start, target_end, pixels)
    except ValidationError as e:
        raise HTTPException(status_code=400, detail=f"Invalid request: {e.errors()[0]['msg']}")
    except CaptrFuseError as e:
        log.warning(f"Rejected prediction request: {e}")
        raise HTTPException(status_code=400, detail=str(e))
