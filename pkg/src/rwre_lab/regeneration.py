"""Fresh points, approximate regeneration times, scaled blocks, splitting.

A regeneration candidate at time n needs a strict record of X.ell at time
n - L, the L marks driving steps n-L+1 .. n equal to the repeated ladder
block, and cone survival from n on.  Failed candidates skip to their observed
cone-exit time; a surviving candidate restarts the detector at its own vertex
(the recursion for the later regeneration times).  Survival can only be
observed up to the horizon, so the trailing survivor is demoted and reported
through ``censored_tail`` instead of being emitted as a regeneration.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import _kernels
from .geometry import Direction
from .walker import WalkRecord

_TOL = 1e-7


class BadBlockLength(ValueError):
    """Block length must be a positive multiple of |ell|_1."""


class EmptySequence(ValueError):
    pass


class SupportMismatch(ValueError):
    pass


@dataclass(frozen=True)
class RegenSequence:
    """Detected regeneration times with their positions and censoring state.

    k_values[i] is the number of candidate attempts consumed by the i-th
    detection (the K of the restarted detector); censored_tail marks a
    trailing candidate whose cone survival was still open at the horizon.
    """

    L: int
    taus: np.ndarray
    positions: np.ndarray
    censored_tail: bool
    k_values: np.ndarray
    start: tuple
    end_position: np.ndarray
    horizon: int
    survived_at_origin: bool

    @property
    def count(self) -> int:
        return int(self.taus.size)


@dataclass(frozen=True)
class BlockSeries:
    """kappa^L-scaled durations and displacements between regenerations."""

    scaled_durations: np.ndarray
    scaled_displacements: np.ndarray
    count: int
    L: int
    kappa: float
    end_displacement: np.ndarray
    horizon: int
    censored_tail: bool


def fresh_times(rec: WalkRecord, direction: Direction) -> List[Tuple[int, tuple]]:
    """All (s, X_s) with X_n . ell < X_s . ell for every n < s, time ordered;
    includes (0, X_0)."""
    idx = _kernels.fresh_times_core(rec.positions, direction.ell_array.astype(np.float64))
    return [(int(s), tuple(int(c) for c in rec.positions[s])) for s in idx]


def detect_cone_exit(rec: WalkRecord, from_time: int, direction: Direction,
                     zeta: float) -> Optional[int]:
    """Smallest t >= 0 with X_{from_time+t} outside C(X_{from_time}, ell, zeta),
    or None if the path stays in the cone until the record ends."""
    if not (0 <= from_time <= rec.horizon):
        raise ValueError("from_time outside the record")
    t = _kernels.cone_exit_scan(rec.positions, int(from_time),
                                direction.ell_array.astype(np.float64),
                                float(zeta), _TOL)
    return None if t < 0 else int(t)


def detect_regenerations(rec: WalkRecord, direction: Direction, zeta: float,
                         L: int, kappa: float) -> RegenSequence:
    """Run the record + ladder-block + cone-survival ladder along the path.

    L must be a positive multiple of |ell|_1 and the record must carry marks
    (coupled mode).  The trailing candidate whose survival is undecided at
    the horizon sets censored_tail and is excluded from taus.
    """
    l1 = direction.ell_l1
    if L < 1 or L % l1 != 0:
        raise BadBlockLength(f"L = {L} is not a positive multiple of |ell|_1 = {l1}")
    if not rec.coupled:
        raise ValueError("detection needs a coupled-mode record with marks")
    n_e = len(direction.step_alphabet)
    if not (0.0 < kappa) or kappa * n_e >= 1.0:
        raise ValueError("kappa must satisfy 0 < kappa |E| < 1")
    taus, k_values, censored, surv0 = _kernels.detect_core(
        rec.positions, rec.eps_marks,
        direction.ell_array.astype(np.float64), float(zeta), int(L),
        direction.ladder_codes(), _TOL)
    return RegenSequence(
        L=int(L),
        taus=taus,
        positions=rec.positions[taus].copy() if taus.size else np.empty((0, rec.d), np.int64),
        censored_tail=bool(censored),
        k_values=k_values,
        start=rec.start,
        end_position=rec.positions[-1].copy(),
        horizon=rec.horizon,
        survived_at_origin=bool(surv0),
    )


def empty_blocks(seq: RegenSequence, kappa: float) -> BlockSeries:
    """Zero-block series for a replica without detections (keeps endpoint
    data so pooled estimators stay replica-aligned)."""
    d = len(seq.start)
    return BlockSeries(
        scaled_durations=np.empty(0), scaled_displacements=np.empty((0, d)),
        count=0, L=seq.L, kappa=float(kappa),
        end_displacement=np.asarray(seq.end_position, np.float64) - np.asarray(seq.start, np.float64),
        horizon=seq.horizon, censored_tail=seq.censored_tail)


def blocks_or_empty(seq: RegenSequence, kappa: float) -> BlockSeries:
    return extract_blocks(seq, kappa) if seq.count else empty_blocks(seq, kappa)


def extract_blocks(seq: RegenSequence, kappa: float) -> BlockSeries:
    """Scaled blocks kappa^L (tau_k - tau_{k-1}) and kappa^L (X_{tau_k} -
    X_{tau_{k-1}}), with tau_0 = 0 at the start point."""
    if seq.count == 0:
        raise EmptySequence("no regenerations detected")
    scale = float(kappa) ** seq.L
    taus = np.concatenate(([0], seq.taus))
    pos = np.vstack([np.asarray(seq.start, dtype=np.int64), seq.positions])
    durations = scale * np.diff(taus).astype(np.float64)
    displacements = scale * np.diff(pos, axis=0).astype(np.float64)
    end_disp = np.asarray(seq.end_position, np.float64) - np.asarray(seq.start, np.float64)
    return BlockSeries(
        scaled_durations=durations,
        scaled_displacements=displacements,
        count=seq.count,
        L=seq.L,
        kappa=float(kappa),
        end_displacement=end_disp,
        horizon=seq.horizon,
        censored_tail=seq.censored_tail,
    )


def k_tail(seqs: Sequence[RegenSequence]) -> dict:
    """Empirical tail P(K >= k) of the first-detection attempt count, with
    Wilson 95% intervals and successive tail ratios."""
    ks = np.asarray([int(s.k_values[0]) for s in seqs if s.k_values.size > 0],
                    dtype=np.int64)
    n = ks.size
    if n == 0:
        return {"n": 0, "k": [], "tail": [], "ci_low": [], "ci_high": [], "ratios": []}
    kmax = int(ks.max())
    kk = np.arange(1, kmax + 1)
    counts = np.array([(ks >= k).sum() for k in kk], dtype=np.int64)
    tail = counts / n
    z = 1.959963984540054
    denom = 1 + z * z / n
    center = (tail + z * z / (2 * n)) / denom
    half = z * np.sqrt(tail * (1 - tail) / n + z * z / (4 * n * n)) / denom
    ratios = [float(counts[i + 1] / counts[i]) if counts[i] > 0 else float("nan")
              for i in range(kmax - 1)]
    return {
        "n": int(n),
        "k": kk.tolist(),
        "tail": tail.tolist(),
        "ci_low": np.maximum(center - half, 0.0).tolist(),
        "ci_high": np.minimum(center + half, 1.0).tolist(),
        "ratios": ratios,
    }


@dataclass(frozen=True)
class SplitCoupling:
    """Maximal-coupling joint of two laws on a shared finite support.

    joint[i, j, delta] is P(X = support[i], X~ = support[j], Delta = delta);
    a is the Bernoulli parameter of Delta (the total variation distance).
    """

    support: tuple
    joint: np.ndarray
    a: float

    def marginal_first(self) -> np.ndarray:
        return self.joint.sum(axis=(1, 2))

    def marginal_second(self) -> np.ndarray:
        return self.joint.sum(axis=(0, 2))

    def prob_equal(self) -> float:
        return float(np.trace(self.joint.sum(axis=2)))


def split_couple(p, q, support=None) -> SplitCoupling:
    """Split two finite laws into a shared part plus Bernoulli(a) residuals.

    a is the total variation distance; the shared component is the
    normalized overlap min(p, q)/(1-a), the residuals are the normalized
    positive parts of p - q and q - p (disjointly supported, so
    P(X != X~) = a exactly).
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise SupportMismatch("laws must share a finite support")
    if support is not None and len(support) != p.size:
        raise SupportMismatch("support size mismatch")
    if np.any(p < 0) or np.any(q < 0) or abs(p.sum() - 1) > 1e-9 or abs(q.sum() - 1) > 1e-9:
        raise ValueError("inputs must be probability vectors")
    support = tuple(support) if support is not None else tuple(range(p.size))
    overlap = np.minimum(p, q)
    res_p = p - overlap
    res_q = q - overlap
    a = float(res_p.sum())
    n = p.size
    joint = np.zeros((n, n, 2), dtype=np.float64)
    joint[np.arange(n), np.arange(n), 0] = overlap
    if a > 0:
        joint[:, :, 1] = np.outer(res_p / a, res_q / a) * a
    return SplitCoupling(support=support, joint=joint, a=a)
