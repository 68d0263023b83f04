"""
Dataset files on disk.

A data directory holds:
    vocab.txt                 shared vocabulary, one token per line
    captions.jsonl            {"image", "caption"} rows for captioner pretraining
    train/dev/test.jsonl      {"sentence", "target_start", "target_end", "label", "image"} rows
    images/                   ".ten" tensors or binary PPM (P6) files

Image paths in a JSON-lines file are relative to that file's directory.
"""
import json
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple, Type, TypeVar, Union

import numpy as np
from pydantic import BaseModel, ValidationError

from captrfuse.core.serialization import load_tensor, loads
from captrfuse.exceptions import ConfigError, DataError, IntegrityError
from captrfuse.logger import log
from captrfuse.models.samples import (
    RELATION_LABELS,
    SENTIMENT_LABELS,
    CaptionPair,
    CaptionRecord,
    MultimodalSample,
    SentimentRecord,
)
from captrfuse.text.tokenizer import basic_tokens
from captrfuse.text.vocabulary import Vocabulary

SPLITS = ("train", "dev", "test")
CAPTIONS_FILE = "captions.jsonl"
VOCAB_FILE = "vocab.txt"

Row = TypeVar("Row", bound=BaseModel)
PathLike = Union[str, Path]


def read_jsonl(path: PathLike, model: Type[Row]) -> List[Row]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    rows: List[Row] = []
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rows.append(model.model_validate(json.loads(line)))
        except (json.JSONDecodeError, ValidationError) as e:
            raise DataError(f"{path.name}:{number}: {e}") from e
    return rows


def write_jsonl(path: PathLike, rows: Iterable[Union[BaseModel, dict]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for row in rows:
            data = row.model_dump(mode="json") if isinstance(row, BaseModel) else row
            f.write(json.dumps(data, sort_keys=True) + "\n")


# ----------------------------------------------------------------------
# Images
# ----------------------------------------------------------------------
def _ppm_header(buffer: bytes) -> Tuple[List[bytes], int]:
    fields: List[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(buffer) and buffer[pos : pos + 1].isspace():
            pos += 1
        if buffer[pos : pos + 1] == b"#":
            while pos < len(buffer) and buffer[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buffer) and not buffer[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError("truncated PPM header")
        fields.append(buffer[start:pos])
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(buffer):
        raise DataError("PPM header is not followed by a raster")
    return fields, pos + 1


def decode_ppm(buffer: bytes) -> np.ndarray:
    """Binary P6 with maxval 255 -> 3×H×W float array in [0, 1]."""
    fields, offset = _ppm_header(buffer)
    if fields[0] != b"P6":
        raise DataError(f"unsupported PPM magic {fields[0]!r}; only binary P6 is read")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError as e:
        raise DataError("PPM header has non-integer fields") from e
    if maxval != 255:
        raise DataError(f"PPM maxval {maxval} is not supported; expected 255")
    raster = np.frombuffer(buffer, dtype=np.uint8, offset=offset)
    if raster.size != width * height * 3:
        raise DataError(f"PPM raster has {raster.size} bytes, expected {width * height * 3}")
    return raster.reshape(height, width, 3).transpose(2, 0, 1).astype(np.float64) / 255.0


def encode_ppm(image: np.ndarray) -> bytes:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise DataError(f"image must be 3×H×W, got {image.shape}")
    _, height, width = image.shape
    raster = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    return f"P6\n{width} {height}\n255\n".encode("ascii") + raster.tobytes()


def decode_image(buffer: bytes, filename: str) -> np.ndarray:
    """Decode image bytes by file extension."""
    suffix = Path(filename).suffix.lower()
    if suffix == ".ten":
        try:
            image = loads(buffer, name=filename)
        except IntegrityError as e:
            raise DataError(str(e)) from e
    elif suffix in (".ppm", ".pnm"):
        image = decode_ppm(buffer)
    else:
        raise DataError(f"unsupported image format {suffix!r}; use .ten or .ppm")
    if image.ndim != 3 or image.shape[0] != 3:
        raise DataError(f"{filename}: image must be 3×H×W, got {image.shape}")
    return image


def load_image(path: PathLike) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".ten":
        try:
            image = load_tensor(path)
        except IntegrityError as e:
            raise DataError(str(e)) from e
        if image.ndim != 3 or image.shape[0] != 3:
            raise DataError(f"{path.name}: image must be 3×H×W, got {image.shape}")
        return image
    try:
        buffer = path.read_bytes()
    except OSError as e:
        raise DataError(f"cannot read image {path}: {e}") from e
    return decode_image(buffer, path.name)


# ----------------------------------------------------------------------
# Datasets
# ----------------------------------------------------------------------
def infer_labels(records: Sequence[SentimentRecord]) -> Tuple[str, ...]:
    """Sentiment labels unless every record uses the image-relation labels."""
    seen = {r.label for r in records}
    if seen and seen <= set(RELATION_LABELS):
        return RELATION_LABELS
    unknown = seen - set(SENTIMENT_LABELS)
    if unknown:
        raise DataError(f"unknown labels {sorted(unknown)}; expected {list(SENTIMENT_LABELS)}")
    return SENTIMENT_LABELS


def load_caption_pairs(data_dir: PathLike) -> List[CaptionPair]:
    path = Path(data_dir) / CAPTIONS_FILE
    records = read_jsonl(path, CaptionRecord)
    pairs = [
        CaptionPair(sample_id=f"caption-{i}", image=load_image(path.parent / r.image), caption=r.caption)
        for i, r in enumerate(records)
    ]
    log.info(f"Loaded {len(pairs)} caption pairs from {path}")
    return pairs


def load_split(data_dir: PathLike, split: str) -> Tuple[List[MultimodalSample], Tuple[str, ...]]:
    """Samples of one split and the label set they use."""
    if split not in SPLITS:
        raise ConfigError(f"unknown split {split!r}; expected one of {list(SPLITS)}")
    path = Path(data_dir) / f"{split}.jsonl"
    records = read_jsonl(path, SentimentRecord)
    labels = infer_labels(records)
    samples = [
        MultimodalSample.from_record(f"{split}-{i}", r, load_image(path.parent / r.image))
        for i, r in enumerate(records)
    ]
    log.info(f"Loaded {len(samples)} {split} samples from {path}")
    return samples, labels


def build_vocabulary(data_dir: PathLike) -> Vocabulary:
    """Words from every caption and sentence plus the label words."""
    data_dir = Path(data_dir)
    words: List[str] = []
    for label in SENTIMENT_LABELS + RELATION_LABELS:
        words.extend(basic_tokens(label.replace("_", " ")))
    captions = data_dir / CAPTIONS_FILE
    if captions.exists():
        for r in read_jsonl(captions, CaptionRecord):
            words.extend(basic_tokens(r.caption))
    for split in SPLITS:
        path = data_dir / f"{split}.jsonl"
        if path.exists():
            for r in read_jsonl(path, SentimentRecord):
                words.extend(basic_tokens(r.sentence))
    return Vocabulary.build(words)


def load_vocabulary(data_dir: PathLike) -> Vocabulary:
    path = Path(data_dir) / VOCAB_FILE
    if path.exists():
        return Vocabulary.load(path)
    log.warning(f"No {VOCAB_FILE} in {data_dir}; building one from the dataset files")
    return build_vocabulary(data_dir)
