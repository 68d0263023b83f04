"""
Metrics, caption-length analysis and calibration over prediction records.

Every function takes a list of PredictionRecord and is order-independent.
Report writers emit JSON summaries plus plot-ready CSV tables via pandas.
"""
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from captrfuse.core.tensor import no_grad
from captrfuse.exceptions import ContractError, ParameterError
from captrfuse.logger import log
from captrfuse.models.records import PredictionRecord, from_probabilities
from captrfuse.models.samples import MultimodalSample
from captrfuse.nn.classifier import FusionClassifier
from captrfuse.services.datasets import read_jsonl, write_jsonl
from captrfuse.text.vocabulary import TokenSequence


def _require(records: Sequence[PredictionRecord]) -> None:
    if not records:
        raise ContractError("metrics need at least one prediction record")


def confusion_matrix(records: Sequence[PredictionRecord], num_classes: int) -> np.ndarray:
    """Rows are gold labels, columns are predictions."""
    matrix = np.zeros((num_classes, num_classes), dtype=np.int64)
    for r in records:
        if r.gold >= num_classes or r.predicted >= num_classes:
            raise ContractError(f"record {r.sample_id} has a label outside [0, {num_classes})")
        matrix[r.gold, r.predicted] += 1
    return matrix


def accuracy(records: Sequence[PredictionRecord]) -> float:
    _require(records)
    return sum(r.correct for r in records) / len(records)


def _per_class(matrix: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    tp = np.diag(matrix).astype(np.float64)
    predicted = matrix.sum(axis=0).astype(np.float64)
    support = matrix.sum(axis=1).astype(np.float64)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, support, out=np.zeros_like(tp), where=support > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return precision, recall, f1, support


def macro_f1(records: Sequence[PredictionRecord], num_classes: int) -> float:
    """Unweighted mean of per-class F1; a class with P+R=0 scores 0."""
    _require(records)
    _, _, f1, _ = _per_class(confusion_matrix(records, num_classes))
    return float(f1.mean())


def weighted_f1(records: Sequence[PredictionRecord], num_classes: int) -> float:
    _require(records)
    _, _, f1, support = _per_class(confusion_matrix(records, num_classes))
    return float((f1 * support).sum() / support.sum())


def per_class_report(
    records: Sequence[PredictionRecord], num_classes: int, labels: Optional[Sequence[str]] = None
) -> pd.DataFrame:
    _require(records)
    precision, recall, f1, support = _per_class(confusion_matrix(records, num_classes))
    return pd.DataFrame(
        {
            "label": list(labels) if labels else list(range(num_classes)),
            "precision": precision,
            "recall": recall,
            "f1": f1,
            "support": support.astype(np.int64),
        }
    )


# ----------------------------------------------------------------------
# Caption length
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class LengthBin:
    start: int
    end: int
    n_correct: int
    n_incorrect: int

    @property
    def count(self) -> int:
        return self.n_correct + self.n_incorrect

    @property
    def accuracy(self) -> Optional[float]:
        return self.n_correct / self.count if self.count else None


def caption_length_bins(records: Sequence[PredictionRecord], bin_width: int = 5) -> List[LengthBin]:
    """Contiguous [k·w, (k+1)·w) bins from the shortest to the longest caption."""
    if bin_width < 1:
        raise ParameterError(f"bin_width must be at least 1, got {bin_width}")
    if not records:
        return []
    index = np.array([r.caption_length // bin_width for r in records])
    correct = np.array([r.correct for r in records])
    bins = []
    for k in range(int(index.min()), int(index.max()) + 1):
        in_bin = index == k
        n_correct = int(np.sum(correct & in_bin))
        bins.append(LengthBin(k * bin_width, (k + 1) * bin_width, n_correct, int(in_bin.sum()) - n_correct))
    return bins


def length_bins_frame(bins: Sequence[LengthBin]) -> pd.DataFrame:
    return pd.DataFrame(
        [{**asdict(b), "count": b.count, "accuracy": b.accuracy} for b in bins],
        columns=["start", "end", "n_correct", "n_incorrect", "count", "accuracy"],
    )


# ----------------------------------------------------------------------
# Calibration
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class ReliabilityBin:
    lower: float
    upper: float
    count: int
    confidence: Optional[float]
    accuracy: Optional[float]

    @property
    def gap(self) -> float:
        return 0.0 if not self.count else abs(self.confidence - self.accuracy)


def reliability_bins(records: Sequence[PredictionRecord], n_bins: int = 10) -> List[ReliabilityBin]:
    """Equal-width confidence bins over [0, 1]; confidence 1.0 falls in the last bin."""
    if n_bins < 1:
        raise ParameterError(f"n_bins must be at least 1, got {n_bins}")
    confidence = np.array([r.confidence for r in records], dtype=np.float64)
    correct = np.array([r.correct for r in records], dtype=np.float64)
    index = np.minimum((confidence * n_bins).astype(np.int64), n_bins - 1)
    bins = []
    for k in range(n_bins):
        in_bin = index == k
        count = int(in_bin.sum())
        bins.append(
            ReliabilityBin(
                lower=k / n_bins,
                upper=(k + 1) / n_bins,
                count=count,
                confidence=float(confidence[in_bin].mean()) if count else None,
                accuracy=float(correct[in_bin].mean()) if count else None,
            )
        )
    return bins


def calibration_report(records: Sequence[PredictionRecord], n_bins: int = 10) -> Tuple[float, List[ReliabilityBin]]:
    """(ECE, reliability table); ECE = sum over bins of count/N · |confidence − accuracy|."""
    _require(records)
    bins = reliability_bins(records, n_bins)
    ece = sum(b.count * b.gap for b in bins) / len(records)
    return float(ece), bins


def max_calibration_error(records: Sequence[PredictionRecord], n_bins: int = 10) -> float:
    _require(records)
    return float(max(b.gap for b in reliability_bins(records, n_bins)))


def reliability_frame(bins: Sequence[ReliabilityBin]) -> pd.DataFrame:
    return pd.DataFrame(
        [{**asdict(b), "gap": b.gap} for b in bins],
        columns=["lower", "upper", "count", "confidence", "accuracy", "gap"],
    )


def sharpen(probabilities: np.ndarray, temperature: float) -> np.ndarray:
    """p^(1/T), renormalised; T < 1 makes a distribution more confident."""
    if temperature <= 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    p = np.asarray(probabilities, dtype=np.float64)
    logp = np.log(np.clip(p, 1e-300, None)) / temperature
    logp -= logp.max(axis=-1, keepdims=True)
    q = np.exp(logp)
    return q / q.sum(axis=-1, keepdims=True)


def sharpen_records(records: Sequence[PredictionRecord], temperature: float) -> List[PredictionRecord]:
    """The same predictions with every distribution tempered.

    PairQA query confidences are tempered as binary [no, yes] distributions.
    """
    out = []
    for r in records:
        queries = None
        if r.query_confidences is not None:
            c = np.asarray(r.query_confidences)
            queries = sharpen(np.stack([1.0 - c, c], axis=1), temperature)[:, 1]
        out.append(
            from_probabilities(
                r.sample_id,
                r.gold,
                sharpen(np.asarray(r.probabilities), temperature),
                caption_length=r.caption_length,
                mode=r.mode,
                query_confidences=queries,
            )
        )
    return out


# ----------------------------------------------------------------------
# Predictions and reports
# ----------------------------------------------------------------------
def predict_records(
    classifier: FusionClassifier,
    samples: Sequence[MultimodalSample],
    captions: Dict[str, TokenSequence],
) -> List[PredictionRecord]:
    """Eval-mode predictions with cached captions."""
    if classifier.training:
        raise ContractError("predictions require the classifier in eval mode")
    records = []
    with no_grad():
        for s in samples:
            caption = captions.get(s.sample_id, [])
            _, probs, queries, _ = classifier.predict_sample(s, caption=caption)
            records.append(
                from_probabilities(
                    s.sample_id,
                    classifier.labels.index(s.label),
                    probs,
                    caption_length=len(caption),
                    mode=classifier.mode.value,
                    query_confidences=queries,
                )
            )
    return records


def _json_safe(value):
    if isinstance(value, float) and math.isnan(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_json_safe(v) for v in value]
    return value


def summarize(records: Sequence[PredictionRecord], num_classes: int, n_bins: int = 10) -> Dict[str, object]:
    ece, _ = calibration_report(records, n_bins)
    return {
        "count": len(records),
        "accuracy": accuracy(records),
        "macro_f1": macro_f1(records, num_classes),
        "weighted_f1": weighted_f1(records, num_classes),
        "ece": ece,
        "mce": max_calibration_error(records, n_bins),
        "mode": records[0].mode,
    }


def write_evaluation(
    records: Sequence[PredictionRecord],
    out_dir: Path,
    labels: Sequence[str],
    n_bins: int = 10,
) -> Dict[str, object]:
    """metrics.json, per_class.csv and predictions.jsonl."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics = {**summarize(records, len(labels), n_bins), "labels": list(labels)}
    (out_dir / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True), encoding="utf-8")
    per_class_report(records, len(labels), labels).to_csv(out_dir / "per_class.csv", index=False)
    write_jsonl(out_dir / "predictions.jsonl", records)
    log.info(f"Wrote evaluation of {len(records)} records to {out_dir}")
    return metrics


def write_analysis(
    records: Sequence[PredictionRecord],
    out_dir: Path,
    bin_width: int = 5,
    n_bins: int = 10,
    temperature: Optional[float] = None,
) -> Dict[str, object]:
    """length_bins.csv, reliability.csv and analysis.json; with a temperature the
    tempered counterpart is reported on the same records."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    length_bins = caption_length_bins(records, bin_width)
    ece, bins = calibration_report(records, n_bins)
    length_bins_frame(length_bins).to_csv(out_dir / "length_bins.csv", index=False)
    reliability_frame(bins).to_csv(out_dir / "reliability.csv", index=False)

    analysis: Dict[str, object] = {
        "count": len(records),
        "bin_width": bin_width,
        "n_bins": n_bins,
        "ece": ece,
        "mce": max_calibration_error(records, n_bins),
        "length_bins": [{**asdict(b), "accuracy": b.accuracy} for b in length_bins],
    }
    if temperature is not None:
        tempered = sharpen_records(records, temperature)
        tempered_ece, tempered_bins = calibration_report(tempered, n_bins)
        reliability_frame(tempered_bins).to_csv(out_dir / "reliability_tempered.csv", index=False)
        analysis["temperature"] = temperature
        analysis["tempered_ece"] = tempered_ece
        analysis["tempered_mce"] = max_calibration_error(tempered, n_bins)
    (out_dir / "analysis.json").write_text(
        json.dumps(_json_safe(analysis), indent=2, sort_keys=True), encoding="utf-8"
    )
    log.info(f"Wrote analysis of {len(records)} records to {out_dir} (ECE={ece:.4f})")
    return analysis


def read_predictions(path: Path) -> List[PredictionRecord]:
    return read_jsonl(path, PredictionRecord)
