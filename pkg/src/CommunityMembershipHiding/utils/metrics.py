"""
metrics.py - similarity, hiding predicate, cover comparison (ONMI) and
    aggregation of per-target trials into SR / ONMI / F1 with confidence intervals.
"""

from dataclasses import asdict, dataclass
from typing import Any, Dict, Iterable, List, Sequence, Tuple

import numpy as np

from CommunityMembershipHiding.utils.errors import EmptyInputError

Z_95 = 1.96
BOOTSTRAP_RESAMPLES = 1000


def dice(a: Iterable[int], b: Iterable[int]) -> float:
    """Sorensen-Dice similarity 2|a&b| / (|a|+|b|); two empty sets score 0"""
    a, b = set(a), set(b)
    total = len(a) + len(b)
    if total == 0:
        return 0.0
    return 2.0 * len(a & b) / total


def max_similarity(c_orig: Iterable[int], cover, u: int) -> float:
    """largest Dice between c_orig\\{u} and any community of u in cover (0 when u has none)"""
    ref = set(c_orig) - {u}
    sims = [dice(ref, c - {u}) for c in cover.communities if u in c]
    return max(sims, default=0.0)


def is_hidden(c_orig: Iterable[int], cover_new, u: int, tau: float) -> bool:
    """True iff every community of u in cover_new has Dice(c_orig\\{u}, C'\\{u}) <= tau

    vacuously True when cover_new places u in no community
    """
    ref = set(c_orig) - {u}
    return all(dice(ref, c - {u}) <= tau for c in cover_new.communities if u in c)


def _h(w: np.ndarray, n: float) -> np.ndarray:
    out = np.zeros_like(w, dtype=float)
    pos = w > 0
    out[pos] = -w[pos] * np.log2(w[pos] / n)
    return out


def _conditional_entropy(x: np.ndarray, y: np.ndarray) -> Tuple[float, float]:
    """(H(X|Y), H(X)) summed over the communities of X; x, y are membership matrices"""
    n = x.shape[1]
    size_x = x.sum(axis=1)[:, None].astype(float)
    size_y = y.sum(axis=1)[None, :].astype(float)
    d = (x.astype(float) @ y.T.astype(float))
    c = size_x - d
    b = size_y - d
    a = n - size_x - size_y + d

    h_xk = (_h(size_x, n) + _h(n - size_x, n))[:, 0]
    joint = _h(a, n) + _h(b, n) + _h(c, n) + _h(d, n)
    cond = joint - _h(b + d, n) - _h(a + c, n)
    # a candidate Y_l only counts when it is informative about X_k
    valid = _h(a, n) + _h(d, n) > _h(b, n) + _h(c, n)
    cond = np.where(valid, cond, h_xk[:, None])
    best = np.minimum(cond.min(axis=1), h_xk)
    return float(best.sum()), float(h_xk.sum())


def onmi(x, y, universe: Iterable[int]) -> float:
    """overlapping normalized mutual information of two covers, max-normalized

    Args:
        x (CommunityCover) - first cover
        y (CommunityCover) - second cover
        universe (set of node ids) - nodes both covers are compared over; members
            outside it are ignored

    Returns:
        value in [0,1]; 1 for identical covers, 0 when exactly one cover is empty
    """
    nodes = sorted(set(universe))
    pos = {v: i for i, v in enumerate(nodes)}
    xs = sorted({frozenset(v for v in c if v in pos) for c in x.communities} - {frozenset()}, key=sorted)
    ys = sorted({frozenset(v for v in c if v in pos) for c in y.communities} - {frozenset()}, key=sorted)
    if not xs or not ys:
        return 1.0 if not xs and not ys else 0.0

    def matrix(comms: List[frozenset]) -> np.ndarray:
        mat = np.zeros((len(comms), len(nodes)), dtype=bool)
        for i, c in enumerate(comms):
            mat[i, [pos[v] for v in c]] = True
        return mat

    mx, my = matrix(xs), matrix(ys)
    h_x_given_y, h_x = _conditional_entropy(mx, my)
    h_y_given_x, h_y = _conditional_entropy(my, mx)
    denom = max(h_x, h_y)
    if denom == 0.0:
        return 1.0 if set(xs) == set(ys) else 0.0
    mutual = 0.5 * (h_x - h_x_given_y + h_y - h_y_given_x)
    return float(np.clip(mutual / denom, 0.0, 1.0))


@dataclass(frozen=True)
class TrialRecord:
    target: int
    success: bool
    onmi: float
    edits_used: int
    setting: str
    seed: int

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class Report:
    sr: float
    sr_ci: Tuple[float, float]
    onmi_mean: float
    f1: float
    f1_ci: Tuple[float, float]
    n_trials: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "sr": self.sr,
            "sr_lo": self.sr_ci[0],
            "sr_hi": self.sr_ci[1],
            "onmi": self.onmi_mean,
            "f1": self.f1,
            "f1_lo": self.f1_ci[0],
            "f1_hi": self.f1_ci[1],
            "n": self.n_trials,
        }

    @classmethod
    def from_dict(cls, row: Dict[str, Any]) -> "Report":
        return cls(
            sr=float(row["sr"]),
            sr_ci=(float(row["sr_lo"]), float(row["sr_hi"])),
            onmi_mean=float(row["onmi"]),
            f1=float(row["f1"]),
            f1_ci=(float(row["f1_lo"]), float(row["f1_hi"])),
            n_trials=int(row["n"]),
        )


def f1_score(sr, onmi_mean):
    """harmonic mean of SR and ONMI; 0 when either argument is 0 (works on arrays too)"""
    sr = np.asarray(sr, dtype=float)
    onmi_mean = np.asarray(onmi_mean, dtype=float)
    total = sr + onmi_mean
    with np.errstate(divide="ignore", invalid="ignore"):
        f1 = np.where(total > 0, 2.0 * sr * onmi_mean / np.where(total > 0, total, 1.0), 0.0)
    return float(f1) if f1.ndim == 0 else f1


def aggregate(records: Sequence[TrialRecord], seed: int = 0) -> Report:
    """summarize trials: SR with a normal-approximation 95% CI, mean ONMI, and F1
    with a 95% percentile CI from 1000 bootstrap resamples of the records

    Args:
        records (list of TrialRecord) - at least one trial
        seed (int) - bootstrap seed

    Returns:
        Report
    """
    if not records:
        raise EmptyInputError("ERROR: cannot aggregate an empty list of trials")
    success = np.array([r.success for r in records], dtype=float)
    scores = np.array([r.onmi for r in records], dtype=float)
    n = len(records)

    sr = float(success.mean())
    half = Z_95 * np.sqrt(sr * (1.0 - sr) / n)
    sr_ci = (max(0.0, sr - half), min(1.0, sr + half))
    onmi_mean = float(scores.mean())
    f1 = f1_score(sr, onmi_mean)

    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n, size=(BOOTSTRAP_RESAMPLES, n))
    boot = f1_score(success[idx].mean(axis=1), scores[idx].mean(axis=1))
    lo, hi = np.percentile(boot, [2.5, 97.5])
    # the percentile interval need not contain the point estimate; widen to keep lo <= f1 <= hi
    f1_ci = (float(max(0.0, min(lo, f1))), float(min(1.0, max(hi, f1))))
    return Report(sr, sr_ci, onmi_mean, f1, f1_ci, n)
