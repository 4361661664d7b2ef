"""Verification metrics and the multi-attempt decision rule.

A segment is accepted when its confidence is strictly greater than the
threshold ``T``. With ``s`` attempts, a window of ``s`` consecutive
segments is accepted if any one of them is, which is the same as comparing
the window's maximum confidence against ``T``.

Rates are reported for three categories of score streams:

* validation positive: the model's own subject, unseen segments
* validation negative: other enrolled subjects
* negative external: subjects no model was trained on

The combined false-accept rate averages the two negative categories:
``far = ((1 - trr_val) + (1 - trr_ext)) / 2``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .io_utils import atomic_write_text

log = logging.getLogger(__name__)


class PolicyError(ValueError):
    pass


class UndefinedRateError(ValueError):
    pass


class TooShortError(ValueError):
    pass


class Category(str, Enum):
    VALIDATION_POSITIVE = "validation_positive"
    VALIDATION_NEGATIVE = "validation_negative"
    NEGATIVE_EXTERNAL = "negative_external"


class Decision(str, Enum):
    ACCEPT = "accept"
    REJECT = "reject"


@dataclass(frozen=True)
class ScoreRecord:
    claimed_subject: str
    true_subject: str
    session_id: str
    segment_index: int
    confidence: float
    category: Category

    def __post_init__(self):
        same = self.claimed_subject == self.true_subject
        if same != (self.category is Category.VALIDATION_POSITIVE):
            raise ValueError(
                f"category {self.category.value} inconsistent with claimed={self.claimed_subject!r}, "
                f"true={self.true_subject!r}"
            )


@dataclass(frozen=True)
class AuthPolicy:
    threshold_T: float
    attempts_s: int = 1
    w_s: int = 3

    def __post_init__(self):
        if not 0.0 <= self.threshold_T <= 1.0:
            raise PolicyError("threshold_T must lie in [0, 1]")
        if self.attempts_s < 1:
            raise PolicyError("attempts_s must be a positive integer")
        if self.w_s < 1:
            raise PolicyError("w_s must be a positive integer")

    @property
    def required_seconds(self) -> int:
        """Sensor time needed for ``s`` overlapped ``w``-second segments."""
        return self.attempts_s + self.w_s - 1


def decide(scores_window: Sequence[float], policy: AuthPolicy) -> Decision:
    if len(scores_window) != policy.attempts_s:
        raise PolicyError(
            f"window holds {len(scores_window)} scores but the policy needs s={policy.attempts_s}"
        )
    return Decision.ACCEPT if any(c > policy.threshold_T for c in scores_window) else Decision.REJECT


def window_maxima(confidences: Sequence[float], s: int) -> np.ndarray:
    """Maximum of every length-``s`` window (stride 1)."""
    c = np.asarray(confidences, dtype=np.float64)
    if len(c) < s:
        raise TooShortError(f"stream of {len(c)} segments is shorter than s={s}")
    return np.lib.stride_tricks.sliding_window_view(c, s).max(axis=1)


def windowed_outcomes(records: Sequence[ScoreRecord], policy: AuthPolicy) -> list[Decision]:
    """Slide a length-``s`` window over one contiguous score stream."""
    if len(records) < policy.attempts_s:
        raise TooShortError(
            f"stream of {len(records)} segments is shorter than s={policy.attempts_s}"
        )
    idx = [r.segment_index for r in records]
    if any(b - a != 1 for a, b in zip(idx, idx[1:])):
        raise ValueError("records must be ordered by segment_index and contiguous")
    conf = [r.confidence for r in records]
    s = policy.attempts_s
    return [decide(conf[i : i + s], policy) for i in range(len(conf) - s + 1)]


@dataclass(frozen=True)
class Rates:
    tar: float
    frr: float
    trr_val: float
    trr_ext: float
    far_combined: float
    accuracy: float


def _is_accept(o) -> bool:
    return o is Decision.ACCEPT or (not isinstance(o, Decision) and bool(o))


def _counts(outcomes) -> tuple[int, int]:
    """(accepted, rejected) counts; fractions are formed from counts, never 1 - x."""
    acc = sum(1 for o in outcomes if _is_accept(o))
    return acc, len(outcomes) - acc


def rates(outcomes_pos: Sequence, outcomes_valneg: Sequence, outcomes_ext: Sequence = ()) -> Rates:
    """Rates from decision lists (``Decision`` values or booleans, True = accept).

    Without external outcomes the combined FAR falls back to the
    validation FAR and ``trr_ext`` is NaN.
    """
    if len(outcomes_pos) == 0:
        raise UndefinedRateError("no positive outcomes: TAR/FRR undefined")
    if len(outcomes_valneg) == 0:
        raise UndefinedRateError("no validation-negative outcomes: TRR undefined")
    n_pos, n_val = len(outcomes_pos), len(outcomes_valneg)
    p_acc, p_rej = _counts(outcomes_pos)
    v_acc, v_rej = _counts(outcomes_valneg)
    far_val = v_acc / n_val
    if len(outcomes_ext):
        e_acc, e_rej = _counts(outcomes_ext)
        trr_ext = e_rej / len(outcomes_ext)
        far = (far_val + e_acc / len(outcomes_ext)) / 2.0
    else:
        trr_ext = float("nan")
        far = far_val
    tar, trr_val = p_acc / n_pos, v_rej / n_val
    return Rates(tar=tar, frr=p_rej / n_pos, trr_val=trr_val, trr_ext=trr_ext,
                 far_combined=far, accuracy=(tar + trr_val) / 2.0)


# ---- grouping ---------------------------------------------------------------

def contiguous_runs(records: Iterable[ScoreRecord]) -> list[list[ScoreRecord]]:
    """Split records into streams of consecutive segments.

    A stream is one (claimed, true, session) triple; a gap in
    ``segment_index`` (for example a recording-file boundary) starts a new
    stream.
    """
    groups: dict[tuple, list[ScoreRecord]] = defaultdict(list)
    for r in records:
        groups[(r.claimed_subject, r.true_subject, r.session_id)].append(r)
    runs = []
    for key in sorted(groups):
        recs = sorted(groups[key], key=lambda r: r.segment_index)
        run = [recs[0]]
        for r in recs[1:]:
            if r.segment_index == run[-1].segment_index + 1:
                run.append(r)
            elif r.segment_index == run[-1].segment_index:
                raise ValueError(f"duplicate segment_index {r.segment_index} in stream {key}")
            else:
                runs.append(run)
                run = [r]
        runs.append(run)
    return runs


def window_scores(records: Iterable[ScoreRecord], s: int) -> dict[Category, np.ndarray]:
    """Window-maximum confidences for every stream, pooled per category."""
    pooled: dict[Category, list[np.ndarray]] = {c: [] for c in Category}
    for run in contiguous_runs(records):
        pooled[run[0].category].append(window_maxima([r.confidence for r in run], s))
    return {c: (np.concatenate(v) if v else np.zeros(0)) for c, v in pooled.items()}


# ---- threshold sweep, ROC, EER --------------------------------------------

@dataclass
class Sweep:
    """Rates at each swept threshold, thresholds ascending."""

    thresholds: np.ndarray
    far: np.ndarray
    frr: np.ndarray
    tar: np.ndarray
    far_val: np.ndarray
    far_ext: np.ndarray

    def rows(self) -> list[tuple[float, float, float]]:
        return list(zip(self.thresholds.tolist(), self.far.tolist(), self.frr.tolist()))


def _accept_rate(sorted_scores: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    n = len(sorted_scores)
    if n == 0:
        return np.full(len(thresholds), np.nan)
    return (n - np.searchsorted(sorted_scores, thresholds, side="right")) / n


def sweep_thresholds(pos: np.ndarray, valneg: np.ndarray, ext: np.ndarray | None = None) -> Sweep:
    """Evaluate every distinct score (plus 0 and 1) as a threshold.

    If some score is <= 0 a threshold just below the minimum is added so
    the sweep still reaches the accept-everything corner.
    """
    pos = np.sort(np.asarray(pos, dtype=np.float64))
    valneg = np.sort(np.asarray(valneg, dtype=np.float64))
    ext = np.sort(np.asarray(ext if ext is not None else [], dtype=np.float64))
    if len(pos) == 0:
        raise UndefinedRateError("no positive scores")
    if len(valneg) == 0 and len(ext) == 0:
        raise UndefinedRateError("no negative scores")
    scores = np.concatenate([pos, valneg, ext])
    thr = np.unique(np.concatenate([scores, [0.0, 1.0]]))
    if scores.min() <= 0.0:
        thr = np.concatenate([[np.nextafter(scores.min(), -np.inf)], thr])
    tar = _accept_rate(pos, thr)
    far_val = _accept_rate(valneg, thr)
    far_ext = _accept_rate(ext, thr)
    if len(valneg) and len(ext):
        far = (far_val + far_ext) / 2.0
    elif len(valneg):
        far = far_val
    else:
        far = far_ext
    return Sweep(thresholds=thr, far=far, frr=1.0 - tar, tar=tar, far_val=far_val, far_ext=far_ext)


@dataclass
class RocResult:
    points: list[tuple[float, float]]
    auc: float
    sweep: Sweep


def _roc_from_sweep(sw: Sweep) -> RocResult:
    pts = sorted(set(zip(sw.far.tolist(), sw.tar.tolist())))
    far = np.array([p[0] for p in pts])
    tar = np.array([p[1] for p in pts])
    auc = float(np.sum(np.diff(far) * (tar[1:] + tar[:-1]) / 2.0)) if len(pts) > 1 else 0.0
    return RocResult(points=pts, auc=auc, sweep=sw)


def roc_curve(records: Iterable[ScoreRecord], policy_s: int = 1) -> RocResult:
    """ROC of combined FAR against validation TAR, swept over the threshold.

    Points are sorted by FAR (then TAR); AUC is the trapezoidal area.
    """
    ws = window_scores(records, policy_s)
    sw = sweep_thresholds(ws[Category.VALIDATION_POSITIVE], ws[Category.VALIDATION_NEGATIVE],
                          ws[Category.NEGATIVE_EXTERNAL])
    return _roc_from_sweep(sw)


@dataclass(frozen=True)
class EerResult:
    eer: float
    threshold: float
    degenerate: bool = False


def eer(roc_sweep: Sequence[tuple[float, float, float]]) -> EerResult:
    """Equal error rate from ``(T, far, frr)`` points.

    Points are sorted by ``T``. The first adjacent pair where
    ``far - frr`` changes sign from positive to non-positive is linearly
    interpolated; the rate returned is the mean of the interpolated FAR and
    FRR. With no crossing, the point of smallest ``|far - frr|`` is returned
    and flagged degenerate.
    """
    pts = sorted(roc_sweep)
    if not pts:
        raise UndefinedRateError("empty sweep")
    t = np.array([p[0] for p in pts], dtype=np.float64)
    far = np.array([p[1] for p in pts], dtype=np.float64)
    frr = np.array([p[2] for p in pts], dtype=np.float64)
    d = far - frr
    nonpos = np.nonzero(d <= 0)[0]
    if len(nonpos) and nonpos[0] > 0 and d[nonpos[0] - 1] > 0:
        j = int(nonpos[0])
        i = j - 1
        alpha = d[i] / (d[i] - d[j])
        far_x = far[i] + alpha * (far[j] - far[i])
        frr_x = frr[i] + alpha * (frr[j] - frr[i])
        thr = t[i] + alpha * (t[j] - t[i])
        return EerResult(eer=float((far_x + frr_x) / 2.0), threshold=float(thr))
    if len(nonpos) and nonpos[0] == 0 and d[0] == 0:
        return EerResult(eer=float(far[0]), threshold=float(t[0]))
    k = int(np.argmin(np.abs(d)))
    return EerResult(eer=float((far[k] + frr[k]) / 2.0), threshold=float(t[k]), degenerate=True)


# ---- reports ------------------------------------------------------------------

@dataclass
class EvalReport:
    session_id: str
    s: int
    far: float
    frr: float
    tar: float
    trr_validation: float
    trr_external: float
    accuracy: float
    eer: float
    eer_threshold: float
    eer_subject_mean: float
    auc: float
    n_subjects: int
    eer_degenerate: bool = False
    roc: list = field(default_factory=list)
    sweep: Sweep | None = field(default=None, repr=False)

    def metrics(self) -> dict:
        d = asdict(self)
        d.pop("roc")
        d.pop("sweep")
        return d


def _rates_at(ws: dict[Category, np.ndarray], threshold: float) -> Rates:
    return rates(
        ws[Category.VALIDATION_POSITIVE] > threshold,
        ws[Category.VALIDATION_NEGATIVE] > threshold,
        ws[Category.NEGATIVE_EXTERNAL] > threshold,
    )


def session_report(records: Sequence[ScoreRecord], sessions: Sequence[str] | None = None,
                   s_values: Sequence[int] = (1, 3, 5, 7)) -> list[EvalReport]:
    """Metric grid over sessions and attempt counts.

    For each (session, s) the pooled sweep over all models gives the ROC,
    AUC and pooled EER; FAR/FRR/TAR/TRR/accuracy are evaluated at the
    pooled EER threshold. ``eer_subject_mean`` averages each model's own
    EER. Sessions without records are skipped with a warning.
    """
    by_session: dict[str, list[ScoreRecord]] = defaultdict(list)
    for r in records:
        by_session[r.session_id].append(r)
    if sessions is None:
        sessions = sorted(by_session)
    reports: list[EvalReport] = []
    for sid in sessions:
        recs = by_session.get(sid, [])
        if not recs:
            log.warning("session %s has no score records; omitted from report", sid)
            continue
        claimed = sorted({r.claimed_subject for r in recs})
        for s in s_values:
            ws = window_scores(recs, s)
            sw = sweep_thresholds(ws[Category.VALIDATION_POSITIVE], ws[Category.VALIDATION_NEGATIVE],
                                  ws[Category.NEGATIVE_EXTERNAL])
            roc = _roc_from_sweep(sw)
            pooled = eer(sw.rows())
            r = _rates_at(ws, pooled.threshold)
            per_subject = []
            for subj in claimed:
                sub = [x for x in recs if x.claimed_subject == subj]
                sws = window_scores(sub, s)
                if len(sws[Category.VALIDATION_POSITIVE]) == 0:
                    continue
                ssw = sweep_thresholds(sws[Category.VALIDATION_POSITIVE],
                                       sws[Category.VALIDATION_NEGATIVE],
                                       sws[Category.NEGATIVE_EXTERNAL])
                per_subject.append(eer(ssw.rows()).eer)
            reports.append(EvalReport(
                session_id=sid, s=s, far=r.far_combined, frr=r.frr, tar=r.tar,
                trr_validation=r.trr_val, trr_external=r.trr_ext, accuracy=r.accuracy,
                eer=pooled.eer, eer_threshold=pooled.threshold,
                eer_subject_mean=float(np.mean(per_subject)) if per_subject else float("nan"),
                auc=roc.auc, n_subjects=len(per_subject), eer_degenerate=pooled.degenerate,
                roc=roc.points, sweep=sw,
            ))
    return reports


def _num(x: float):
    return None if isinstance(x, float) and math.isnan(x) else x


def sweep_csv(sw: Sweep) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold", "far", "frr", "tar"])
    for t, fa, fr, ta in zip(sw.thresholds.tolist(), sw.far.tolist(), sw.frr.tolist(), sw.tar.tolist()):
        w.writerow([repr(t), repr(fa), repr(fr), repr(ta)])
    return buf.getvalue()


def write_report(reports: Sequence[EvalReport], out_dir: str | Path) -> Path:
    """Write ``report.json`` (metric grid) and one ROC CSV per (session, s)."""
    out_dir = Path(out_dir)
    grid = []
    for rep in reports:
        name = f"roc_session{rep.session_id}_s{rep.s}.csv"
        if rep.sweep is not None:
            atomic_write_text(out_dir / name, sweep_csv(rep.sweep))
        m = {k: _num(v) for k, v in rep.metrics().items()}
        m["roc_csv"] = name
        grid.append(m)
    path = out_dir / "report.json"
    atomic_write_text(path, json.dumps({"reports": grid}, indent=2, sort_keys=True) + "\n")
    return path
