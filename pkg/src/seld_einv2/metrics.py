"""
Joint localization and detection scores.

Location-dependent detection (ER and F under a DoA threshold) and
class-dependent localization (LE and LR) are computed on fixed-length
evaluation segments. Inside a segment every (class, track) instance is
reduced to the normalised mean of its unit DoA vectors; predictions and
references of the same class are paired by a minimum-total-distance
assignment.

Vector arithmetic uses ``math.fsum`` so that results do not depend on the
order of vector components; a rotated or mirrored scene scores exactly the
same as the original.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import permutations
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from seld_einv2.data.labels import LabelRow

logger = logging.getLogger(__name__)

Vector = Tuple[float, float, float]
# segment -> class -> instance key -> unit vector
EventFrame = Dict[int, Dict[Tuple[int, int], Vector]]
NORM_TOLERANCE = 1e-3
METRIC_NAMES = ("ER", "F", "LE", "LR", "SELD")


def normalize(v: Sequence[float]) -> tuple[Vector, bool]:
    """Unit vector of ``v`` and whether its norm deviated from 1 by more than 1e-3."""
    x, y, z = (float(c) for c in v)
    norm = math.sqrt(math.fsum((x * x, y * y, z * z)))
    if norm == 0.0:
        return (0.0, 0.0, 0.0), True
    flagged = abs(norm - 1.0) > NORM_TOLERANCE
    if norm == 1.0:
        return (x, y, z), False
    return (x / norm, y / norm, z / norm), flagged


def angular_distance(u: Sequence[float], v: Sequence[float]) -> float:
    """Great-circle distance in degrees between two directions."""
    (ux, uy, uz), fu = normalize(u)
    (vx, vy, vz), fv = normalize(v)
    if fu or fv:
        logger.debug("angular_distance received a non-unit vector")
    if (ux, uy, uz) == (vx, vy, vz):
        return 0.0
    dot = math.fsum((ux * vx, uy * vy, uz * vz))
    return math.degrees(math.acos(min(1.0, max(-1.0, dot))))


@dataclass
class Match:
    pairs: List[Tuple[int, int, float]]  # (pred index, ref index, distance)
    unmatched_preds: int
    unmatched_refs: int

    @property
    def total_distance(self) -> float:
        return math.fsum(d for _, _, d in self.pairs)


def match_per_class(preds: Sequence[Sequence[float]], refs: Sequence[Sequence[float]]) -> Match:
    """Minimum-total-angle assignment between same-class predictions and references."""
    if not preds or not refs:
        return Match([], len(preds), len(refs))
    cost = np.array([[angular_distance(p, r) for r in refs] for p in preds])
    rows, cols = linear_sum_assignment(cost)
    pairs = [(int(i), int(j), float(cost[i, j])) for i, j in zip(rows, cols)]
    return Match(pairs, len(preds) - len(pairs), len(refs) - len(pairs))


def match_brute_force(preds: Sequence[Sequence[float]], refs: Sequence[Sequence[float]]) -> Match:
    """Exhaustive counterpart of match_per_class for small instances."""
    if not preds or not refs:
        return Match([], len(preds), len(refs))
    n = min(len(preds), len(refs))
    best: Optional[List[Tuple[int, int, float]]] = None
    best_total = math.inf
    for pred_idx in permutations(range(len(preds)), n):
        for ref_idx in permutations(range(len(refs)), n):
            pairs = [(i, j, angular_distance(preds[i], refs[j])) for i, j in zip(pred_idx, ref_idx)]
            total = math.fsum(d for _, _, d in pairs)
            if total < best_total:
                best, best_total = pairs, total
    return Match(best, len(preds) - n, len(refs) - n)


def aggregate_segments(rows: Iterable[LabelRow], frames_per_segment: int) -> EventFrame:
    """
    Reduce frame rows to evaluation segments

    A (class, track) instance is active in a segment if it is active in any
    of its frames; its direction is the normalised mean of its unit vectors.
    """
    sums: Dict[int, Dict[Tuple[int, int], List[Vector]]] = defaultdict(lambda: defaultdict(list))
    for row in rows:
        sums[row.frame // frames_per_segment][(row.class_index, row.track)].append(row.doa)
    segments: EventFrame = {}
    for seg, instances in sums.items():
        segments[seg] = {}
        for key, vectors in instances.items():
            mean = tuple(math.fsum(v[i] for v in vectors) for i in range(3))
            unit, _ = normalize(mean)
            segments[seg][key] = unit
    return segments


@dataclass
class ClassCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    matched: int = 0
    refs: int = 0
    distance: float = 0.0


@dataclass
class SeldScores:
    """The four joint metrics plus the raw counts they come from."""
    er: float
    f: float
    le: float
    lr: float
    tp: int = 0
    fp: int = 0
    fn: int = 0
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    n_ref: int = 0
    distance_sum: float = 0.0
    matched: int = 0
    flags: List[str] = field(default_factory=list)
    per_class: Dict[int, ClassCounts] = field(default_factory=dict)

    @property
    def seld_error(self) -> float:
        """Aggregate error (ER + (1 - F) + LE / 180 + (1 - LR)) / 4."""
        return (self.er + (1.0 - self.f) + self.le / 180.0 + (1.0 - self.lr)) / 4.0

    def as_dict(self) -> Dict[str, float]:
        return {"ER": self.er, "F": self.f, "LE": self.le, "LR": self.lr, "SELD": self.seld_error}


class SeldMetrics:
    """Accumulates counts over clips; ``compute`` turns them into SeldScores."""

    def __init__(self, doa_threshold: float = 20.0, segment_seconds: float = 1.0, label_hop: float = 0.1):
        self.doa_threshold = doa_threshold
        self.frames_per_segment = max(1, int(round(segment_seconds / label_hop)))
        self.counts: Dict[int, ClassCounts] = defaultdict(ClassCounts)
        self.substitutions = 0
        self.deletions = 0
        self.insertions = 0
        self.distances: List[float] = []

    def update(self, pred_rows: Iterable[LabelRow], ref_rows: Iterable[LabelRow]) -> None:
        """Score one clip (rows in clip-local frames)."""
        preds = aggregate_segments(pred_rows, self.frames_per_segment)
        refs = aggregate_segments(ref_rows, self.frames_per_segment)
        for seg in sorted(set(preds) | set(refs)):
            pred_seg, ref_seg = preds.get(seg, {}), refs.get(seg, {})
            classes = {c for c, _ in pred_seg} | {c for c, _ in ref_seg}
            fp_seg = fn_seg = 0
            for c in sorted(classes):
                p = [v for (cls, _), v in sorted(pred_seg.items()) if cls == c]
                r = [v for (cls, _), v in sorted(ref_seg.items()) if cls == c]
                match = match_per_class(p, r)
                counts = self.counts[c]
                counts.refs += len(r)
                counts.matched += len(match.pairs)
                tp = sum(1 for _, _, d in match.pairs if d <= self.doa_threshold)
                far = len(match.pairs) - tp
                counts.tp += tp
                counts.fp += far + match.unmatched_preds
                counts.fn += far + match.unmatched_refs
                for _, _, d in match.pairs:
                    self.distances.append(d)
                    counts.distance += d
                fp_seg += far + match.unmatched_preds
                fn_seg += far + match.unmatched_refs
            self.substitutions += min(fn_seg, fp_seg)
            self.deletions += max(0, fn_seg - fp_seg)
            self.insertions += max(0, fp_seg - fn_seg)

    def compute(self) -> SeldScores:
        tp = sum(c.tp for c in self.counts.values())
        fp = sum(c.fp for c in self.counts.values())
        fn = sum(c.fn for c in self.counts.values())
        n_ref = sum(c.refs for c in self.counts.values())
        matched = sum(c.matched for c in self.counts.values())
        distance_sum = math.fsum(self.distances)
        flags = []

        s, d, i = self.substitutions, self.deletions, self.insertions
        if n_ref > 0:
            er = (s + d + i) / n_ref
        else:
            er = float(i)
            flags.append("no_references")
        denom = 2 * tp + fp + fn
        if denom > 0:
            f = 2 * tp / denom
        else:
            f = 0.0
            flags.append("f_undefined")
        if matched > 0:
            le = distance_sum / matched
        else:
            le = 180.0
            flags.append("le_undefined")
        if n_ref > 0:
            lr = matched / n_ref
        else:
            lr = 0.0
            flags.append("lr_undefined")
        return SeldScores(er, f, le, lr, tp, fp, fn, s, d, i, n_ref, distance_sum, matched, flags,
                          {k: self.counts[k] for k in sorted(self.counts)})


def seld_scores(pred_rows: Iterable[LabelRow], ref_rows: Iterable[LabelRow], doa_threshold: float = 20.0,
                segment_seconds: float = 1.0, label_hop: float = 0.1) -> SeldScores:
    """
    Score one set of predictions against references

    Args:
        pred_rows, ref_rows: label-format rows on the same frame grid
        doa_threshold: largest angular error (degrees) of a true positive
        segment_seconds: evaluation segment length; label_hop gives frame mode
        label_hop: label frame length in seconds

    Returns:
        SeldScores
    """
    metrics = SeldMetrics(doa_threshold, segment_seconds, label_hop)
    metrics.update(pred_rows, ref_rows)
    return metrics.compute()


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------

def format_scores(scores: SeldScores) -> str:
    """Human-readable table."""
    lines = [
        f"{'metric':<8}{'value':>10}",
        "-" * 18,
        f"{'ER':<8}{scores.er:>10.3f}",
        f"{'F':<8}{scores.f:>10.3f}",
        f"{'LE':<8}{scores.le:>10.1f}",
        f"{'LR':<8}{scores.lr:>10.3f}",
        f"{'SELD':<8}{scores.seld_error:>10.3f}",
    ]
    if scores.flags:
        lines.append(f"flags: {', '.join(scores.flags)}")
    return "\n".join(lines)


def write_metrics_report(path: str | Path, scores: SeldScores) -> Path:
    """Write ``name value`` lines: metrics, counts, then per-class counts."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{name} {value:.6f}" for name, value in scores.as_dict().items()]
    lines += [
        f"TP {scores.tp}", f"FP {scores.fp}", f"FN {scores.fn}",
        f"S {scores.substitutions}", f"D {scores.deletions}", f"I {scores.insertions}",
        f"N {scores.n_ref}", f"matched {scores.matched}", f"distance_sum {scores.distance_sum:.6f}",
    ]
    for c, counts in scores.per_class.items():
        lines.append(f"class_{c} tp={counts.tp} fp={counts.fp} fn={counts.fn} "
                     f"matched={counts.matched} refs={counts.refs}")
    for flag in scores.flags:
        lines.append(f"flag {flag}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_metrics_report(path: str | Path) -> Dict[str, float]:
    """Numeric ``name value`` entries of a metrics report."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Metrics report not found: {path}")
    values: Dict[str, float] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        name, _, value = line.partition(" ")
        try:
            values[name] = float(value)
        except ValueError:
            continue
    return values


def summarize_trials(scores: Sequence[SeldScores | Mapping[str, float]]) -> Dict[str, tuple[float, float]]:
    """Mean and population std of each metric across trials."""
    rows = [s.as_dict() if isinstance(s, SeldScores) else s for s in scores]
    summary = {}
    for name in METRIC_NAMES:
        values = np.array([row[name] for row in rows], dtype=np.float64)
        summary[name] = (float(values.mean()), float(values.std()))
    return summary
