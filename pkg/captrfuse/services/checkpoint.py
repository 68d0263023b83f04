"""
Checkpoint directories.

    <dir>/manifest.json     format, phase, config, mode, labels, params, groups, metrics
    <dir>/vocab.txt         shared vocabulary
    <dir>/tensors/*.ten     one file per named parameter

Parameter names are prefixed with the model they belong to
(``captioner.backbone.convs.0.weight``, ``classifier.head.weight``) and each is
assigned to one of the update groups used by the two training phases.
"""
import hashlib
import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from captrfuse.config import TrainConfig
from captrfuse.core.serialization import dumps, loads
from captrfuse.core.tensor import precision
from captrfuse.exceptions import CheckpointMismatchError, ConfigError, IntegrityError
from captrfuse.logger import log
from captrfuse.nn.captioner import CaptionTransformer
from captrfuse.nn.classifier import FusionClassifier, FusionMode
from captrfuse.text.vocabulary import Vocabulary

CHECKPOINT_FORMAT = "captrfuse-checkpoint/1"
MANIFEST_FILE = "manifest.json"
VOCAB_FILE = "vocab.txt"
TENSOR_DIR = "tensors"

CAPTIONER_PHASE = "captioner"
CLASSIFIER_PHASE = "classifier"

# Update groups; the first matching prefix wins.
GROUP_PREFIXES: Tuple[Tuple[str, str], ...] = (
    ("captioner.backbone.", "resnet"),
    ("captioner.encoder_layers.", "detr_layer"),
    ("captioner.decoder_layers.", "detr_layer"),
    ("captioner.token_embedding", "detr_layer"),
    ("captioner.head.", "ffn"),
    ("classifier.encoder.", "bert"),
    ("classifier.head.", "linear"),
)
PHASE_GROUPS: Dict[str, Tuple[str, ...]] = {
    CAPTIONER_PHASE: ("resnet", "detr_layer", "ffn"),
    CLASSIFIER_PHASE: ("bert", "linear"),
}


def parameter_group(name: str) -> str:
    for prefix, group in GROUP_PREFIXES:
        if name.startswith(prefix):
            return group
    raise CheckpointMismatchError("parameter belongs to no update group", tensor=name)


def prefixed_state(prefix: str, model) -> Dict[str, np.ndarray]:
    return {f"{prefix}.{name}": value for name, value in model.state_dict().items()}


def _sha256(buffer: bytes) -> str:
    return hashlib.sha256(buffer).hexdigest()


@dataclass
class Checkpoint:
    phase: str
    config: TrainConfig
    vocab: Vocabulary
    params: Dict[str, np.ndarray]
    mode: Optional[FusionMode] = None
    labels: Tuple[str, ...] = ()
    metrics: Dict[str, Any] = field(default_factory=dict)

    @property
    def groups(self) -> Dict[str, str]:
        return {name: parameter_group(name) for name in self.params}

    def _state(self, prefix: str) -> Dict[str, np.ndarray]:
        head = f"{prefix}."
        return {name[len(head):]: value for name, value in self.params.items() if name.startswith(head)}

    def captioner(self) -> CaptionTransformer:
        """Rebuild the captioner from the manifest config and load its tensors."""
        with precision(self.config.dtype):
            model = CaptionTransformer.from_config(self.config, self.vocab, np.random.default_rng(self.config.seed))
        model.load_state_dict(self._state(CAPTIONER_PHASE))
        return model.eval()

    def classifier(self) -> FusionClassifier:
        if self.phase != CLASSIFIER_PHASE or self.mode is None:
            raise CheckpointMismatchError(f"a {self.phase} checkpoint holds no classifier")
        with precision(self.config.dtype):
            model = FusionClassifier.from_config(
                self.config, self.vocab, self.mode, self.labels, np.random.default_rng(self.config.seed)
            )
        model.load_state_dict(self._state(CLASSIFIER_PHASE))
        return model.eval()


def build_checkpoint(
    config: TrainConfig,
    captioner: CaptionTransformer,
    classifier: Optional[FusionClassifier] = None,
    metrics: Optional[Dict[str, Any]] = None,
) -> Checkpoint:
    params = prefixed_state(CAPTIONER_PHASE, captioner)
    phase = CAPTIONER_PHASE
    if classifier is not None:
        params.update(prefixed_state(CLASSIFIER_PHASE, classifier))
        phase = CLASSIFIER_PHASE
    return Checkpoint(
        phase=phase,
        config=config,
        vocab=captioner.vocab,
        params=params,
        mode=None if classifier is None else classifier.mode,
        labels=() if classifier is None else classifier.labels,
        metrics=dict(metrics or {}),
    )


def save_checkpoint(checkpoint: Checkpoint, path: Union[str, Path]) -> Path:
    """Write a checkpoint directory, replacing any previous contents."""
    path = Path(path)
    if path.exists():
        if any(path.iterdir()) and not (path / MANIFEST_FILE).exists():
            raise ConfigError(f"refusing to overwrite {path}: not a checkpoint directory")
        shutil.rmtree(path)
    (path / TENSOR_DIR).mkdir(parents=True)
    checkpoint.vocab.save(path / VOCAB_FILE)

    entries: Dict[str, Dict[str, Any]] = {}
    for name, value in sorted(checkpoint.params.items()):
        buffer = dumps(value)
        filename = f"{TENSOR_DIR}/{name}.ten"
        (path / filename).write_bytes(buffer)
        entries[name] = {
            "file": filename,
            "shape": list(value.shape),
            "dtype": str(value.dtype),
            "sha256": _sha256(buffer),
            "group": parameter_group(name),
        }

    manifest = {
        "format": CHECKPOINT_FORMAT,
        "phase": checkpoint.phase,
        "config": checkpoint.config.model_dump(mode="json"),
        "mode": None if checkpoint.mode is None else checkpoint.mode.value,
        "labels": list(checkpoint.labels),
        "params": entries,
        "groups": {group: sorted(n for n, e in entries.items() if e["group"] == group)
                   for group in sorted({e["group"] for e in entries.values()})},
        "metrics": checkpoint.metrics,
    }
    (path / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    log.info(f"Saved {checkpoint.phase} checkpoint ({len(entries)} tensors) to {path}")
    return path


def _read_manifest(path: Path) -> Dict[str, Any]:
    try:
        manifest = json.loads((path / MANIFEST_FILE).read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise IntegrityError(f"no {MANIFEST_FILE} in {path}", tensor=MANIFEST_FILE) from e
    except (OSError, json.JSONDecodeError) as e:
        raise IntegrityError(f"unreadable manifest: {e}", tensor=MANIFEST_FILE) from e
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise IntegrityError(f"unsupported format {manifest.get('format')!r}", tensor=MANIFEST_FILE)
    return manifest


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Read and verify every tensor named by the manifest.

    Missing or damaged files raise IntegrityError naming the tensor; shapes
    that disagree with the manifest or its config raise CheckpointMismatchError.
    """
    path = Path(path)
    manifest = _read_manifest(path)
    try:
        config = TrainConfig.parse(manifest["config"])
    except (KeyError, ConfigError) as e:
        raise CheckpointMismatchError(f"manifest config is invalid: {e}", tensor=MANIFEST_FILE) from e
    try:
        vocab = Vocabulary.load(path / VOCAB_FILE)
    except OSError as e:
        raise IntegrityError(f"cannot read vocabulary: {e}", tensor=VOCAB_FILE) from e

    params: Dict[str, np.ndarray] = {}
    for name, entry in manifest.get("params", {}).items():
        file = path / entry["file"]
        try:
            buffer = file.read_bytes()
        except OSError as e:
            raise IntegrityError(f"missing tensor file {entry['file']}", tensor=name) from e
        if _sha256(buffer) != entry["sha256"]:
            raise IntegrityError("checksum mismatch", tensor=name)
        value = loads(buffer, name=name)
        if list(value.shape) != entry["shape"]:
            raise CheckpointMismatchError(f"shape {value.shape} disagrees with manifest {entry['shape']}", tensor=name)
        params[name] = value

    mode = manifest.get("mode")
    checkpoint = Checkpoint(
        phase=manifest.get("phase", CAPTIONER_PHASE),
        config=config,
        vocab=vocab,
        params=params,
        mode=None if mode is None else FusionMode(mode),
        labels=tuple(manifest.get("labels", ())),
        metrics=manifest.get("metrics", {}),
    )
    # Rebuilding validates every shape against the manifest config.
    checkpoint.captioner()
    if checkpoint.phase == CLASSIFIER_PHASE:
        checkpoint.classifier()
    log.info(f"Loaded {checkpoint.phase} checkpoint ({len(params)} tensors) from {path}")
    return checkpoint
