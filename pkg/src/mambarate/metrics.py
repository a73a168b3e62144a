"""MSE, Pearson, Spearman and Kendall tau at utterance and system level."""

from __future__ import annotations

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConstantInput, EmptyInput, NoSystemIds, TooFewPoints

log = logging.getLogger(__name__)

METRICS = ("mse", "lcc", "srcc", "ktau")


@dataclass(frozen=True)
class ScorePair:
    utterance_id: str
    system_id: str | None
    predicted: float
    reference: float


@dataclass
class MetricReport:
    level: str
    n: int
    mse: float | None
    lcc: float | None
    srcc: float | None
    ktau: float | None

    def get(self, metric: str) -> float | None:
        return getattr(self, metric)


def _arrays(pairs_or_x, y=None) -> tuple[np.ndarray, np.ndarray]:
    if y is None:
        pairs = list(pairs_or_x)
        x = np.array([p.predicted for p in pairs], dtype=np.float64)
        y = np.array([p.reference for p in pairs], dtype=np.float64)
    else:
        x = np.asarray(pairs_or_x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"expected two equal-length vectors, got {x.shape} and {y.shape}")
    if x.size == 0:
        raise EmptyInput("no score pairs")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("scores must be finite")
    return x, y


def _need_two(x: np.ndarray, name: str) -> None:
    if x.size < 2:
        raise TooFewPoints(f"{name} needs at least 2 points, got {x.size}")


def mse(pairs_or_x, y=None) -> float:
    x, y = _arrays(pairs_or_x, y)
    return float(np.mean((x - y) ** 2))


def pearson(pairs_or_x, y=None) -> float:
    """Linear correlation (population convention; the n cancels)."""
    x, y = _arrays(pairs_or_x, y)
    _need_two(x, "pearson")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise ConstantInput("correlation undefined for constant input")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def average_ranks(values) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    # start index of each run of equal values
    starts = np.flatnonzero(np.r_[True, sorted_vals[1:] != sorted_vals[:-1]])
    ends = np.r_[starts[1:], values.size]
    run_rank = (starts + ends + 1) / 2.0  # mean of positions start+1 .. end
    ranks = np.empty(values.size)
    ranks[order] = np.repeat(run_rank, ends - starts)
    return ranks


def spearman(pairs_or_x, y=None) -> float:
    x, y = _arrays(pairs_or_x, y)
    _need_two(x, "spearman")
    return pearson(average_ranks(x), average_ranks(y))


def _tie_pairs(sorted_vals: np.ndarray) -> int:
    """Number of tied pairs in an already sorted array."""
    starts = np.flatnonzero(np.r_[True, sorted_vals[1:] != sorted_vals[:-1]])
    counts = np.diff(np.r_[starts, sorted_vals.size])
    return int((counts * (counts - 1) // 2).sum())


def _count_inversions(a: np.ndarray) -> int:
    """Strict inversions (i < j, a[i] > a[j]) by bottom-up merge sort."""
    a = list(a)
    n = len(a)
    buf = [0.0] * n
    inversions = 0
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if a[j] < a[i]:
                    buf[k] = a[j]
                    inversions += mid - i
                    j += 1
                else:
                    buf[k] = a[i]
                    i += 1
                k += 1
            buf[k : k + mid - i] = a[i:mid]
            k += mid - i
            buf[k : k + hi - j] = a[j:hi]
            a[lo:hi] = buf[lo:hi]
        width *= 2
    return inversions


def kendall_tau(pairs_or_x, y=None, variant: str = "b") -> float:
    """Kendall rank correlation in O(n log n) (Knight's method).

    ``variant="b"`` corrects the denominator for ties on each side;
    ``variant="a"`` divides by all n(n-1)/2 pairs.
    """
    x, y = _arrays(pairs_or_x, y)
    _need_two(x, "kendall_tau")
    n = x.size
    order = np.lexsort((y, x))
    xs, ys = x[order], y[order]
    n0 = n * (n - 1) // 2
    tx = _tie_pairs(xs)
    # pairs tied on both x and y
    joint = np.flatnonzero(np.r_[True, (xs[1:] != xs[:-1]) | (ys[1:] != ys[:-1])])
    joint_counts = np.diff(np.r_[joint, n])
    txy = int((joint_counts * (joint_counts - 1) // 2).sum())
    # discordant pairs = inversions of y once sorted by (x, y)
    discordant = _count_inversions(ys)
    ty = _tie_pairs(np.sort(ys))
    if tx == n0 or ty == n0:
        raise ConstantInput("kendall tau undefined for constant input")
    concordant_minus_discordant = n0 - tx - ty + txy - 2 * discordant
    if variant == "a":
        tau = concordant_minus_discordant / n0
    elif variant == "b":
        tau = concordant_minus_discordant / math.sqrt((n0 - tx) * (n0 - ty))
    else:
        raise ValueError(f"unknown tau variant {variant!r}")
    return min(1.0, max(-1.0, tau))


def system_level(pairs: Iterable[ScorePair]) -> list[ScorePair]:
    """Average predicted and reference scores per system, in order of first appearance."""
    groups: OrderedDict[str, list[ScorePair]] = OrderedDict()
    skipped = 0
    for p in pairs:
        if p.system_id is None or p.system_id == "":
            skipped += 1
            continue
        groups.setdefault(p.system_id, []).append(p)
    if skipped:
        log.warning("system-level metrics skip %d utterance(s) without a system id", skipped)
    if not groups:
        raise NoSystemIds("no utterance carries a system id")
    return [
        ScorePair(
            utterance_id=sys_id,
            system_id=sys_id,
            predicted=float(np.mean([m.predicted for m in members])),
            reference=float(np.mean([m.reference for m in members])),
        )
        for sys_id, members in groups.items()
    ]


def _safe(fn, x, y):
    try:
        return fn(x, y)
    except (ConstantInput, TooFewPoints):
        return None


def report(pairs: Sequence[ScorePair], level: str = "utterance", tau_variant: str = "b") -> MetricReport:
    """All four metrics; undefined correlations come back as None."""
    x, y = _arrays(pairs)
    return MetricReport(
        level=level,
        n=int(x.size),
        mse=mse(x, y),
        lcc=_safe(pearson, x, y),
        srcc=_safe(spearman, x, y),
        ktau=_safe(lambda a, b: kendall_tau(a, b, tau_variant), x, y),
    )


def evaluate_pairs(pairs: Sequence[ScorePair], tau_variant: str = "b") -> list[MetricReport]:
    """Utterance-level report, plus system-level when any system id is present."""
    pairs = list(pairs)
    out = [report(pairs, "utterance", tau_variant)]
    if any(p.system_id for p in pairs):
        out.append(report(system_level(pairs), "system", tau_variant))
    return out


# --- rendering ------------------------------------------------------------

_ROW_LABELS = {"mse": "MSE ↓", "lcc": "LCC ↑", "srcc": "SRCC ↑", "ktau": "KTAU ↑"}
_LEVEL_LABELS = {"utterance": "U", "system": "S"}


def _fmt(v: float | None, digits: int) -> str:
    return "n/a" if v is None else f"{v:.{digits}f}"


def format_table(reports: Sequence[MetricReport], digits: int = 3) -> str:
    """Metric rows by level columns, aligned for a terminal::

        metric       U       S
        MSE ↓    0.057   0.040
        ...
    """
    cols = [_LEVEL_LABELS.get(r.level, r.level) for r in reports]
    width = max(8, digits + 5)
    lines = ["metric".ljust(8) + "".join(c.rjust(width) for c in cols)]
    for m in METRICS:
        cells = "".join(_fmt(r.get(m), digits).rjust(width) for r in reports)
        lines.append(_ROW_LABELS[m].ljust(8) + cells)
    lines.append("n".ljust(8) + "".join(str(r.n).rjust(width) for r in reports))
    return "\n".join(lines) + "\n"


def format_csv(reports: Sequence[MetricReport]) -> str:
    lines = ["level,n,mse,lcc,srcc,ktau"]
    for r in reports:
        vals = ["" if r.get(m) is None else repr(r.get(m)) for m in METRICS]
        lines.append(",".join([r.level, str(r.n), *vals]))
    return "\n".join(lines) + "\n"
