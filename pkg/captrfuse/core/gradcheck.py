"""
Finite-difference verification of analytic gradients.
"""
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from captrfuse.core.tensor import Tensor, no_grad


@dataclass
class GradCheckFailure:
    param: int
    index: Tuple[int, ...]
    analytic: float
    numeric: float
    error: float


@dataclass
class GradCheckReport:
    tol: float
    max_error: float = 0.0
    checked: int = 0
    failures: List[GradCheckFailure] = field(default_factory=list)
    retried: List[Tuple[int, Tuple[int, ...]]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def failing_indices(self) -> List[Tuple[int, Tuple[int, ...]]]:
        return [(f.param, f.index) for f in self.failures]

    def summary(self) -> dict:
        return {
            "passed": self.passed,
            "checked": self.checked,
            "max_error": self.max_error,
            "tol": self.tol,
            "failures": len(self.failures),
            "retried": len(self.retried),
        }


def relative_error(analytic: float, numeric: float, floor: float = 1e-3) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _central_difference(f: Callable[[], Tensor], p: Tensor, i: int, eps: float) -> float:
    original = p.data.flat[i]
    with no_grad():
        p.data.flat[i] = original + eps
        plus = f().item()
        p.data.flat[i] = original - eps
        minus = f().item()
    p.data.flat[i] = original
    return (plus - minus) / (2 * eps)


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-4,
    tol: float = 1e-4,
    *,
    max_entries: Optional[int] = None,
    seed: int = 0,
    floor: float = 1e-3,
    retries: int = 0,
    analytic: Optional[Sequence[np.ndarray]] = None,
) -> GradCheckReport:
    """Compare backprop gradients of ``f`` against central differences.

    ``f`` must be deterministic (dropout off, fixed generator) and is expected
    to run under ``precision("float64")``. ``max_entries`` samples that many
    entries per parameter instead of sweeping all of them. With ``retries`` > 0 an
    entry that fails is re-measured that many times with a step ten times
    smaller (a step straddling a ReLU kink gives a wrong difference quotient);
    every re-measured entry is listed in ``report.retried``.
    ``analytic`` overrides the backprop gradients, which lets callers plant a
    bad gradient.
    """
    if analytic is None:
        for p in params:
            p.zero_grad()
        f().backward()
        analytic = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
        analytic = [a.copy() for a in analytic]

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol)
    for pi, (p, grad) in enumerate(zip(params, analytic)):
        size = p.data.size
        entries = np.arange(size)
        if max_entries is not None and size > max_entries:
            entries = np.sort(rng.choice(size, size=max_entries, replace=False))
        flat = np.asarray(grad).reshape(-1)
        for i in entries:
            value = float(flat[i])
            step = eps
            numeric = _central_difference(f, p, i, step)
            err = relative_error(value, numeric, floor)
            for attempt in range(retries):
                if err < tol:
                    break
                if attempt == 0:
                    report.retried.append((pi, np.unravel_index(i, p.shape)))
                step /= 10.0
                numeric = _central_difference(f, p, i, step)
                err = min(err, relative_error(value, numeric, floor))
            report.checked += 1
            report.max_error = max(report.max_error, err)
            if not err < tol:
                report.failures.append(
                    GradCheckFailure(pi, np.unravel_index(i, p.shape), value, numeric, err)
                )
    return report
