"""
Desk-scale synthetic data.

Images are 2×2 grids of cells; 1-3 cells are filled with one colour. The
caption names the colour once per filled cell ("red red"). A sentiment sample
is "<subject> <verb> <target> <time>" and its label depends jointly on the
target and the image colour, so neither modality alone determines it.
"""
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from captrfuse.core.serialization import save_tensor
from captrfuse.exceptions import ParameterError
from captrfuse.logger import log
from captrfuse.models.samples import SENTIMENT_LABELS, CaptionPair, MultimodalSample
from captrfuse.services.datasets import CAPTIONS_FILE, SPLITS, VOCAB_FILE, write_jsonl
from captrfuse.text.vocabulary import SPECIAL_TOKENS, Vocabulary

COLOURS: Dict[str, Tuple[float, float, float]] = {
    "red": (0.9, 0.1, 0.1),
    "green": (0.1, 0.9, 0.1),
    "blue": (0.1, 0.1, 0.9),
}
TARGETS = ("alice", "bob", "carol")
SUBJECTS = ("i", "we", "they")
VERBS = ("saw", "met", "watched")
TIME_WORDS = ("today", "yesterday", "again")
GRID = 2


class SyntheticSpec(BaseModel):
    model_config = {"extra": "forbid"}

    image_size: int = Field(default=16, gt=0)
    n_caption_pairs: int = Field(default=48, ge=1)
    n_train: int = Field(default=64, ge=1)
    n_dev: int = Field(default=32, ge=1)
    n_test: int = Field(default=64, ge=1)
    max_blobs: int = Field(default=3, ge=1, le=GRID * GRID - 1)
    noise: float = Field(default=0.05, ge=0, lt=0.5)
    vocab_size: Optional[int] = Field(default=None, ge=5)

    @model_validator(mode="after")
    def validate_image(self) -> "SyntheticSpec":
        if self.image_size % (2 * GRID):
            raise ValueError(f"image_size must be divisible by {2 * GRID}")
        return self

    def split_size(self, split: str) -> int:
        return {"train": self.n_train, "dev": self.n_dev, "test": self.n_test}[split]


def synthetic_label(target: str, colour: str) -> str:
    """Label is a joint function of the target and the image colour."""
    return SENTIMENT_LABELS[(TARGETS.index(target) + list(COLOURS).index(colour)) % len(SENTIMENT_LABELS)]


def synthetic_words(spec: SyntheticSpec) -> List[str]:
    words = list(SENTIMENT_LABELS) + list(COLOURS) + list(TARGETS) + list(SUBJECTS) + list(VERBS) + list(TIME_WORDS)
    if spec.vocab_size is not None:
        base = len(SPECIAL_TOKENS) + len(words)
        if spec.vocab_size < base:
            raise ParameterError(f"vocab_size {spec.vocab_size} is smaller than the {base} synthetic tokens")
        words += [f"filler{i}" for i in range(spec.vocab_size - base)]
    return words


def render_image(colour: str, cells: List[int], size: int, noise: float, rng: np.random.Generator) -> np.ndarray:
    image = rng.uniform(0.0, noise, size=(3, size, size))
    cell = size // GRID
    rgb = np.asarray(COLOURS[colour])[:, None, None]
    for c in cells:
        row, col = divmod(c, GRID)
        patch = rgb + rng.uniform(-noise, noise, size=(3, cell, cell))
        image[:, row * cell : (row + 1) * cell, col * cell : (col + 1) * cell] = patch
    return np.clip(image, 0.0, 1.0).astype(np.float32)


def _draw_image(spec: SyntheticSpec, rng: np.random.Generator) -> Tuple[np.ndarray, str, int]:
    colour = list(COLOURS)[rng.integers(len(COLOURS))]
    blobs = int(rng.integers(1, spec.max_blobs + 1))
    cells = sorted(rng.choice(GRID * GRID, size=blobs, replace=False).tolist())
    return render_image(colour, cells, spec.image_size, spec.noise, rng), colour, blobs


@dataclass
class SyntheticData:
    spec: SyntheticSpec
    vocab: Vocabulary
    captions: List[CaptionPair]
    splits: Dict[str, List[MultimodalSample]]
    colours: Dict[str, str] = field(default_factory=dict)


def generate_synthetic(seed: int, spec: Optional[SyntheticSpec] = None) -> SyntheticData:
    """Caption pairs plus train/dev/test sentiment splits from one seed."""
    spec = spec or SyntheticSpec()
    rng = np.random.default_rng(seed)
    vocab = Vocabulary.build(synthetic_words(spec))

    captions = []
    for i in range(spec.n_caption_pairs):
        image, colour, blobs = _draw_image(spec, rng)
        captions.append(CaptionPair(sample_id=f"caption-{i}", image=image, caption=" ".join([colour] * blobs)))

    splits: Dict[str, List[MultimodalSample]] = {}
    colours: Dict[str, str] = {}
    for split in SPLITS:
        samples = []
        for i in range(spec.split_size(split)):
            image, colour, _ = _draw_image(spec, rng)
            subject, verb, target, time = (
                group[rng.integers(len(group))] for group in (SUBJECTS, VERBS, TARGETS, TIME_WORDS)
            )
            prefix = f"{subject} {verb} "
            sentence = f"{prefix}{target} {time}"
            sample_id = f"{split}-{i}"
            colours[sample_id] = colour
            samples.append(
                MultimodalSample(
                    sample_id=sample_id,
                    sentence=sentence,
                    target_start=len(prefix),
                    target_end=len(prefix) + len(target),
                    label=synthetic_label(target, colour),
                    image=image,
                )
            )
        splits[split] = samples

    log.info(
        f"Generated synthetic data (seed={seed}): {len(captions)} caption pairs, "
        + ", ".join(f"{len(v)} {k}" for k, v in splits.items())
    )
    return SyntheticData(spec=spec, vocab=vocab, captions=captions, splits=splits, colours=colours)


def text_only_bayes_accuracy() -> float:
    """Best accuracy any text-only predictor can reach, by enumerating the generative table.

    Every text field and the colour are drawn uniformly and independently, so
    each (subject, verb, target, time, colour) cell is equally likely.
    """
    table: Dict[Tuple[str, ...], Dict[str, int]] = defaultdict(lambda: defaultdict(int))
    for subject, verb, target, time, colour in product(SUBJECTS, VERBS, TARGETS, TIME_WORDS, COLOURS):
        table[(subject, verb, target, time)][synthetic_label(target, colour)] += 1
    total = sum(sum(counts.values()) for counts in table.values())
    return sum(max(counts.values()) for counts in table.values()) / total


def write_synthetic(data: SyntheticData, out_dir: Path) -> None:
    """vocab.txt, captions.jsonl, one JSON-lines file per split, images as .ten."""
    out_dir = Path(out_dir)
    images = out_dir / "images"
    images.mkdir(parents=True, exist_ok=True)
    data.vocab.save(out_dir / VOCAB_FILE)
    (out_dir / "spec.json").write_text(data.spec.model_dump_json(indent=2), encoding="utf-8")

    rows = []
    for pair in data.captions:
        save_tensor(images / f"{pair.sample_id}.ten", pair.image)
        rows.append({"image": f"images/{pair.sample_id}.ten", "caption": pair.caption})
    write_jsonl(out_dir / CAPTIONS_FILE, rows)

    for split, samples in data.splits.items():
        rows = []
        for s in samples:
            save_tensor(images / f"{s.sample_id}.ten", s.image)
            rows.append(
                {
                    "sentence": s.sentence,
                    "target_start": s.target_start,
                    "target_end": s.target_end,
                    "label": s.label,
                    "image": f"images/{s.sample_id}.ten",
                    "colour": data.colours[s.sample_id],
                }
            )
        write_jsonl(out_dir / f"{split}.jsonl", rows)
    log.info(f"Wrote synthetic dataset to {out_dir}")
