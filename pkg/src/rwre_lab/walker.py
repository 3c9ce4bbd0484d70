"""Quenched and coupled simulation of the walk and exit times.

The coupled chain lives on an enlarged space: i.i.d. marks take each ladder
letter with probability kappa (and 0 otherwise); a nonzero mark forces the
corresponding step, a zero mark draws from the residual kernel

    probs'(e) = [probs(e) - kappa 1{e in E}] / (1 - kappa |E|),

which leaves the one-step marginal law exactly equal to the quenched kernel.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import _kernels
from ._rng import SplitMixStream, TAG_MARKS, TAG_STEPS, hash_key
from .environment import EnvironmentModel, TransitionKernel, kernel_validate
from .geometry import Direction, unit_steps


class KappaTooLarge(ValueError):
    """Some kernel weight on a ladder step is below kappa."""


class EpsilonSequence:
    """Lazily generated i.i.d. marks: P(eps = e) = kappa per ladder letter,
    P(eps = 0) = 1 - kappa |E|.  Marks are encoded as step codes, -1 for 0."""

    def __init__(self, kappa: float, direction: Direction, seed: int):
        n_e = len(direction.step_alphabet)
        if not (0.0 < kappa) or kappa * n_e >= 1.0:
            raise KappaTooLarge(f"need 0 < kappa with kappa * {n_e} < 1")
        self.kappa = kappa
        self.alphabet = direction.step_codes()
        self.seed = seed
        self._stream = SplitMixStream(hash_key(seed, TAG_MARKS))
        self._cache: list[int] = []

    def mark(self, i: int) -> int:
        """Mark eps_{i+1} (0-based index), generated on demand."""
        while len(self._cache) <= i:
            u = self._stream.next_unit()
            n_e = len(self.alphabet)
            if u < self.kappa * n_e:
                j = min(int(u / self.kappa), n_e - 1)
                self._cache.append(int(self.alphabet[j]))
            else:
                self._cache.append(-1)
        return self._cache[i]

    def marks(self, n: int) -> np.ndarray:
        self.mark(n - 1)
        return np.asarray(self._cache[:n], dtype=np.int8)


@dataclass(frozen=True)
class WalkRecord:
    """Positions plus the marks that drove them.

    positions has shape (horizon+1, d); eps_marks has length horizon in
    coupled mode (step codes, -1 for the zero mark) and length 0 in quenched
    mode.
    """

    start: tuple
    positions: np.ndarray
    eps_marks: np.ndarray
    horizon: int

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    @property
    def coupled(self) -> bool:
        return self.eps_marks.size > 0

    def shifted(self, n: int) -> "WalkRecord":
        """The record viewed from time n (positions re-based, marks sliced)."""
        if not (0 <= n <= self.horizon):
            raise ValueError("shift outside the record")
        pos = self.positions[n:].copy()
        marks = self.eps_marks[n:].copy() if self.coupled else self.eps_marks
        return WalkRecord(start=tuple(int(c) for c in pos[0]), positions=pos,
                          eps_marks=marks, horizon=self.horizon - n)


def coupled_step_distribution(k: TransitionKernel, eps: int, kappa: float,
                              direction: Direction) -> TransitionKernel:
    """One-step law of the coupled chain given the mark.

    eps is a step code in the ladder alphabet, or -1 for the zero mark.
    """
    codes = direction.step_codes()
    n_e = len(codes)
    if not (0.0 < kappa) or kappa * n_e >= 1.0:
        raise KappaTooLarge(f"need 0 < kappa with kappa * {n_e} < 1")
    if eps >= 0:
        if eps not in codes:
            raise ValueError(f"mark {eps} is not a ladder letter")
        out = np.zeros_like(k.probs)
        out[eps] = 1.0
        return TransitionKernel(out)
    out = k.probs.copy()
    out[codes] -= kappa
    if np.any(out < 0):
        raise KappaTooLarge("kernel weight below kappa on a ladder step")
    return TransitionKernel(out / (1.0 - kappa * n_e))


def _validate_model(model: EnvironmentModel, direction: Direction, kappa: float):
    for kern in model.support():
        if not kernel_validate(kern, direction, kappa):
            raise KappaTooLarge(
                "environment kernel fails (direction, kappa) validity; "
                "coupled simulation needs probs(e) >= kappa on the ladder alphabet"
            )


def simulate(model: EnvironmentModel, direction: Direction, kappa: float,
             start, horizon: int, mode: str, seed: int) -> WalkRecord:
    """Simulate the quenched chain or its coupled extension.

    mode is "quenched" or "coupled".  Deterministic given (model, seed); the
    mark stream and the step stream are disjoint subkeys of seed, so the mark
    sequence matches ``EpsilonSequence(kappa, direction, seed)``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    coupled = {"quenched": False, "coupled": True}[mode.lower()]
    if coupled:
        _validate_model(model, direction, kappa)
    start_arr = np.asarray(start, dtype=np.int64)
    if start_arr.shape != (model.d,):
        raise ValueError("start point dimension mismatch")
    p = model.packed()
    codes = direction.step_codes()
    is_ladder = np.zeros(2 * model.d, dtype=np.bool_)
    is_ladder[codes] = True
    positions, marks = _kernels.simulate_core(
        model.d, int(horizon), start_arr, coupled, float(kappa),
        codes, is_ladder,
        p["kind"], p["env_seed"], p["kernels"], p["wcum"], p["block"],
        p["beta"], p["h"], p["sweeps"], p["boundary"],
        np.uint64(hash_key(seed, TAG_MARKS)), np.uint64(hash_key(seed, TAG_STEPS)),
    )
    return WalkRecord(start=tuple(int(c) for c in start_arr),
                      positions=positions,
                      eps_marks=marks if coupled else np.empty(0, dtype=np.int8),
                      horizon=int(horizon))


def exit_time(rec: WalkRecord, region: Callable[[np.ndarray], bool]) -> Optional[int]:
    """First n >= 0 with X_n outside the region, or None if never within the
    record.  For nearest-neighbor walks started inside, this lands on the
    boundary of the region."""
    for n in range(rec.horizon + 1):
        if not region(rec.positions[n]):
            return n
    return None
