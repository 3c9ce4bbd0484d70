"""Transition-kernel models of the random environment and drift checkers.

Site kernels are probability vectors over the 2d signed unit steps, stored in
code order (2i -> +e_{i+1}, 2i+1 -> -e_{i+1}).  Environment models are pure:
``kernel_at(z)`` depends only on (master_seed, z, parameters), so the
infinite lattice is generated lazily and replays bit-exactly.

The Ising-driven model assigns one of two kernels according to the spin at
the site.  Spins are realized as independent Glauber boxes tiling the
lattice (fixed boundary spin on each tile edge), which keeps the field
computable along arbitrarily long walks while retaining the Gibbs
conditionals inside each tile; tiles at distance beyond one box are exactly
independent.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, List, Mapping, Sequence, Tuple

import numpy as np

from . import _kernels
from ._rng import hash_coords, hash_key, mix64, to_unit
from .geometry import Direction, unit_steps


class EnvironmentModelError(ValueError):
    pass


class UnsupportedModel(EnvironmentModelError):
    """Kernel support is not finitely enumerable for this model."""


class InvalidNeighborSum(EnvironmentModelError):
    pass


class NonPositiveDrift(EnvironmentModelError):
    """The two-kernel drifts must satisfy d+ > 0 and d- > 0."""


# ---------------------------------------------------------------------------
# transition kernels


class TransitionKernel:
    """Probability vector over the 2d unit neighbors of a site.

    Accepts an array in code order or a mapping from unit vectors to
    probabilities.  Construction only checks shape and nonnegativity;
    ``kernel_validate`` is the full predicate (sum, ellipticity, kappa).
    """

    __slots__ = ("probs", "d")

    def __init__(self, probs):
        if isinstance(probs, Mapping):
            vecs = [tuple(int(c) for c in k) for k in probs.keys()]
            d = len(vecs[0])
            arr = np.zeros(2 * d, dtype=np.float64)
            for v, p in zip(vecs, probs.values()):
                axis = [i for i, c in enumerate(v) if c != 0]
                if len(axis) != 1 or abs(v[axis[0]]) != 1:
                    raise EnvironmentModelError(f"{v} is not a unit vector")
                arr[2 * axis[0] + (0 if v[axis[0]] > 0 else 1)] = float(p)
        else:
            arr = np.asarray(probs, dtype=np.float64).copy()
            if arr.ndim != 1 or arr.size % 2 or arr.size == 0:
                raise EnvironmentModelError("kernel needs 2d entries")
            d = arr.size // 2
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise EnvironmentModelError("kernel entries must be finite and >= 0")
        self.probs = arr
        self.d = d

    def __getitem__(self, e) -> float:
        if isinstance(e, (int, np.integer)):
            return float(self.probs[e])
        v = tuple(int(c) for c in e)
        axis = [i for i, c in enumerate(v) if c != 0]
        return float(self.probs[2 * axis[0] + (0 if v[axis[0]] > 0 else 1)])

    def as_dict(self) -> dict:
        steps = unit_steps(self.d)
        return {tuple(int(c) for c in steps[i]): float(self.probs[i])
                for i in range(2 * self.d)}

    def __eq__(self, other):
        return isinstance(other, TransitionKernel) and np.array_equal(self.probs, other.probs)

    def __repr__(self):
        return f"TransitionKernel({self.probs.tolist()})"


def kernel_validate(k: TransitionKernel, direction: Direction, kappa: float) -> bool:
    """All kernel invariants for (direction, kappa): sum 1, elliptic, kappa-elliptic."""
    n_e = len(direction.step_alphabet)
    if not (0.0 < kappa < 1.0 / n_e):
        raise EnvironmentModelError("kappa must lie in (0, 1/|E|)")
    if k.d != direction.d:
        return False
    if abs(float(k.probs.sum()) - 1.0) > 1e-12:
        return False
    if np.any(k.probs <= 0.0):
        return False
    codes = direction.step_codes()
    return bool(np.min(k.probs[codes]) >= kappa)


def local_drift(k: TransitionKernel) -> np.ndarray:
    """d(x, omega) = sum_e e omega(x, x+e)."""
    return k.probs @ unit_steps(k.d).astype(np.float64)


# ---------------------------------------------------------------------------
# Ising parameters and samplers


@dataclass(frozen=True)
class IsingParams:
    """Nearest-neighbor Ising model with inverse temperature and field.

    ``box`` is the per-axis extent of one Glauber box (a cube side when an
    int); for the tiled environment it is also the independence tile.
    """

    beta: float
    h: float
    d: int
    box: Tuple[int, ...] | int = 16
    burn_in_sweeps: int = 8
    boundary: int = 1

    def __post_init__(self):
        if self.beta < 0:
            raise EnvironmentModelError("beta must be >= 0")
        if self.burn_in_sweeps < 1:
            raise EnvironmentModelError("burn_in_sweeps must be >= 1")
        if self.boundary not in (-1, 1):
            raise EnvironmentModelError("boundary spin must be +1 or -1")
        if min(self.extents()) < 1:
            raise EnvironmentModelError("box extents must be >= 1")

    def extents(self) -> Tuple[int, ...]:
        if isinstance(self.box, (int, np.integer)):
            return (int(self.box),) * self.d
        if len(self.box) != self.d:
            raise EnvironmentModelError("box extents must match the dimension")
        return tuple(int(b) for b in self.box)


def ising_conditional(params: IsingParams, neighbor_sum: int, spin: int = 1) -> float:
    """P(sigma(x) = spin | neighbor spin sum S) = e^{+-(beta S + h)} / (e^{beta S + h} + e^{-(beta S + h)}).

    The minus probability is returned as the exact float complement of the
    plus one, so the two always partition 1 bitwise.
    """
    s = int(neighbor_sum)
    if s % 2 != 0 or abs(s) > 2 * params.d:
        raise InvalidNeighborSum(f"neighbor sum {s} not in {{-2d, -2d+2, ..., 2d}}")
    x = params.beta * s + params.h
    p_plus = 1.0 / (1.0 + math.exp(-2.0 * x))
    return p_plus if spin > 0 else 1.0 - p_plus


def glauber_sample(params: IsingParams, seed: int) -> np.ndarray:
    """Spin configuration after burn-in systematic-scan Glauber sweeps.

    All-(+1) start; each site update draws from ``ising_conditional`` with
    boundary spins fixed to ``params.boundary``; deterministic given seed.
    """
    extents = np.asarray(params.extents(), dtype=np.int64)
    n = int(np.prod(extents))
    spins = np.empty(n, dtype=np.int8)
    _kernels.glauber_tile(spins, params.d, extents, np.uint64(mix64(seed)),
                          float(params.beta), float(params.h),
                          int(params.burn_in_sweeps), int(params.boundary))
    return spins.reshape(tuple(int(e) for e in extents))


def dobrushin_coefficient(params: IsingParams) -> float:
    """Single-neighbor influence summed over the 2d neighbors.

    c(beta, h) = 2d max_S |p(+|S) - p(+|S-2)| with S enumerated exactly; a
    computable surrogate for the standard contraction coefficient.
    """
    two_d = 2 * params.d
    worst = 0.0
    for s in range(-two_d + 2, two_d + 1, 2):
        diff = abs(ising_conditional(params, s) - ising_conditional(params, s - 2))
        worst = max(worst, diff)
    return two_d * worst


def mixing_rate_bound(gamma: float, C: float, r: float) -> float:
    """phi(r) = C e^{-gamma' r} with gamma' = gamma / sqrt(2), the cone-mixing
    rate attributed to a weak-mixing k-Markov field."""
    if gamma <= 0 or C <= 0 or r < 0:
        raise EnvironmentModelError("need gamma > 0, C > 0, r >= 0")
    return C * math.exp(-(gamma / math.sqrt(2.0)) * r)


def spin_field_to_csv(field: np.ndarray, path) -> None:
    """Write a spin snapshot as CSV rows (x_1, ..., x_d, spin)."""
    with open(path, "w") as fh:
        fh.write(",".join(f"x{i + 1}" for i in range(field.ndim)) + ",spin\n")
        for idx in np.ndindex(field.shape):
            fh.write(",".join(str(i) for i in idx) + f",{int(field[idx])}\n")


# ---------------------------------------------------------------------------
# environment models


@dataclass(frozen=True)
class EnvironmentModel:
    """Base for deterministic seeded kernel fields on Z^d."""

    master_seed: int

    @property
    def d(self) -> int:
        raise NotImplementedError

    def kernel_at(self, z) -> TransitionKernel:
        raise NotImplementedError

    def support(self) -> List[TransitionKernel]:
        raise NotImplementedError

    def reseeded(self, seed: int) -> "EnvironmentModel":
        return replace(self, master_seed=int(seed))

    def packed(self) -> dict:
        """Arguments for the compiled walk kernels."""
        raise NotImplementedError

    def _base(self, kind, kernels, wcum, block=1, beta=0.0, h=0.0, sweeps=1, boundary=1):
        return dict(
            kind=kind,
            env_seed=np.uint64(self.master_seed),
            kernels=np.ascontiguousarray(kernels, dtype=np.float64),
            wcum=np.ascontiguousarray(wcum, dtype=np.float64),
            block=int(block),
            beta=float(beta),
            h=float(h),
            sweeps=int(sweeps),
            boundary=int(boundary),
        )


@dataclass(frozen=True)
class Homogeneous(EnvironmentModel):
    kernel: TransitionKernel = None

    @property
    def d(self):
        return self.kernel.d

    def kernel_at(self, z):
        return self.kernel

    def support(self):
        return [self.kernel]

    def packed(self):
        return self._base(_kernels.KIND_HOMOGENEOUS, self.kernel.probs[None, :], np.ones(1))


def _mixture_index(seed: int, coords: np.ndarray, wcum: np.ndarray) -> int:
    u = float(to_unit(hash_coords(seed, coords)[0]))
    return min(int(np.searchsorted(wcum, u, side="right")), len(wcum) - 1)


@dataclass(frozen=True)
class Product(EnvironmentModel):
    """I.i.d. site kernels drawn from a finite weighted mixture."""

    kernels: Tuple[TransitionKernel, ...] = ()
    weights: Tuple[float, ...] = ()

    def __post_init__(self):
        if not self.kernels:
            raise EnvironmentModelError("need at least one kernel")
        w = np.asarray(self.weights if self.weights else [1.0] * len(self.kernels), float)
        if w.size != len(self.kernels) or np.any(w < 0) or w.sum() <= 0:
            raise EnvironmentModelError("bad mixture weights")
        object.__setattr__(self, "weights", tuple(float(x) for x in w / w.sum()))

    @property
    def d(self):
        return self.kernels[0].d

    def _wcum(self):
        return np.cumsum(np.asarray(self.weights, float))

    def kernel_at(self, z):
        coords = np.asarray(z, dtype=np.int64)
        return self.kernels[_mixture_index(self.master_seed, coords, self._wcum())]

    def support(self):
        return list(self.kernels)

    def packed(self):
        mat = np.stack([k.probs for k in self.kernels])
        return self._base(_kernels.KIND_PRODUCT, mat, self._wcum())


@dataclass(frozen=True)
class BlockIndependent(Product):
    """Constant kernels on l_dep-cubes, independent across blocks."""

    l_dep: int = 1

    def __post_init__(self):
        super().__post_init__()
        if self.l_dep < 1:
            raise EnvironmentModelError("l_dep must be >= 1")

    def kernel_at(self, z):
        coords = np.asarray(z, dtype=np.int64) // self.l_dep
        return self.kernels[_mixture_index(self.master_seed, coords, self._wcum())]

    def packed(self):
        mat = np.stack([k.probs for k in self.kernels])
        return self._base(_kernels.KIND_BLOCK, mat, self._wcum(), block=self.l_dep)


@dataclass(frozen=True)
class IsingTwoKernel(EnvironmentModel):
    """omega(x, .) = omega_plus or omega_minus according to sigma(x) = +-1."""

    params: IsingParams = None
    omega_plus: TransitionKernel = None
    omega_minus: TransitionKernel = None

    def __post_init__(self):
        ext = self.params.extents()
        if len(set(ext)) != 1:
            raise EnvironmentModelError("tiled Ising field needs a cubic box")
        if self.params.d > 3:
            raise EnvironmentModelError("tiled Ising field supports d <= 3")

    @property
    def d(self):
        return self.params.d

    def spin_at(self, z) -> int:
        coords = np.asarray(z, dtype=np.int64)
        p = self.packed()
        return int(_kernels.kernel_index_at(
            coords, self.d, p["kind"], p["env_seed"], p["wcum"], p["block"],
            p["beta"], p["h"], p["sweeps"], p["boundary"])) * -2 + 1

    def kernel_at(self, z):
        return self.omega_plus if self.spin_at(z) > 0 else self.omega_minus

    def support(self):
        return [self.omega_plus, self.omega_minus]

    def packed(self):
        mat = np.stack([self.omega_plus.probs, self.omega_minus.probs])
        return self._base(_kernels.KIND_ISING, mat, np.ones(2),
                          block=self.params.extents()[0],
                          beta=self.params.beta, h=self.params.h,
                          sweeps=self.params.burn_in_sweeps,
                          boundary=self.params.boundary)


def check_non_nestling(model: EnvironmentModel, direction: Direction, delta: float) -> bool:
    """True iff every kernel in the support has local_drift . ell >= delta."""
    try:
        kernels = model.support()
    except NotImplementedError as exc:
        raise UnsupportedModel(str(exc)) from exc
    ell = direction.ell_array.astype(np.float64)
    return all(float(local_drift(k) @ ell) >= delta for k in kernels)


# ---------------------------------------------------------------------------
# Kalikow-condition checkers for the two-kernel Ising environment


@dataclass(frozen=True)
class DriftReport:
    """Drifts of the two kernels along e1 and the drift-condition verdicts."""

    d_plus: float
    d_minus: float
    delta: float
    passes_A4: bool
    passes_L54: bool


def _two_kernel_drifts(omega_plus: TransitionKernel, omega_minus: TransitionKernel):
    d_plus = float(local_drift(omega_plus)[0])
    d_minus = -float(local_drift(omega_minus)[0])
    if d_plus <= 0 or d_minus <= 0:
        raise NonPositiveDrift(
            f"need drift(omega+).e1 > 0 and drift(omega-).e1 < 0, got {d_plus}, {-d_minus}"
        )
    return d_plus, d_minus


def kalikow_sufficient_check(omega_plus: TransitionKernel, omega_minus: TransitionKernel,
                             delta: float, beta: float, h: float, d: int) -> DriftReport:
    """Arithmetic sufficient condition for the occupation-time drift bound:

        delta < d+   and   2h - 4 beta d >= ln((d- + delta)/(d+ - delta))
                                             + ln max_e omega+(e)/omega-(e).
    """
    d_plus, d_minus = _two_kernel_drifts(omega_plus, omega_minus)
    max_ratio = float(np.max(omega_plus.probs / omega_minus.probs))
    passes = False
    if delta < d_plus:
        rhs = math.log((d_minus + delta) / (d_plus - delta)) + math.log(max_ratio)
        passes = 2.0 * h - 4.0 * beta * d >= rhs
    ell = np.zeros(d)
    ell[0] = 1.0
    a4 = (float(local_drift(omega_plus) @ ell) >= delta
          and float(local_drift(omega_minus) @ ell) >= delta)
    return DriftReport(d_plus=d_plus, d_minus=d_minus, delta=delta,
                       passes_A4=a4, passes_L54=passes)


def _cs_value(f: np.ndarray, p_s: float, omega_plus, omega_minus, d_plus, d_minus) -> float:
    a_plus = float(f @ omega_plus.probs)
    a_minus = float(f @ omega_minus.probs)
    num = p_s * d_plus / a_plus - (1.0 - p_s) * d_minus / a_minus
    den = p_s / a_plus + (1.0 - p_s) / a_minus
    return num / den


def kalikow_cs_lhs(omega_plus: TransitionKernel, omega_minus: TransitionKernel,
                   beta: float, h: float, d: int, f_grid_resolution: int = 5) -> float:
    """Minimized occupation-weighted drift ratio for the two-kernel Ising
    environment: exact enumeration over neighbor sums, minimization over
    f: {+-e_i} -> (0, 1] on a multiplicative grid with coordinate-descent
    refinement.  Indicator-like corner points (where the kernel ratio is
    extremal) are always included.
    """
    if f_grid_resolution < 2:
        raise EnvironmentModelError("f_grid_resolution must be >= 2")
    d_plus, d_minus = _two_kernel_drifts(omega_plus, omega_minus)
    params = IsingParams(beta=beta, h=h, d=d, box=3)
    two_d = 2 * d
    floor = 1e-3
    grid = np.geomspace(floor, 1.0, f_grid_resolution)

    best = math.inf
    for s in range(-two_d, two_d + 1, 2):
        p_s = ising_conditional(params, s)

        def val(f):
            return _cs_value(f, p_s, omega_plus, omega_minus, d_plus, d_minus)

        s_best, s_f = math.inf, None
        for combo in itertools.product(grid, repeat=two_d):
            f = np.asarray(combo)
            v = val(f)
            if v < s_best:
                s_best, s_f = v, f
        for j in range(two_d):
            f = np.full(two_d, floor)
            f[j] = 1.0
            v = val(f)
            if v < s_best:
                s_best, s_f = v, f
        # coordinate descent on the multiplicative grid step
        step = (1.0 / floor) ** (1.0 / (f_grid_resolution - 1))
        f = s_f.copy()
        for _ in range(200):
            improved = False
            for j in range(two_d):
                for factor in (step, 1.0 / step):
                    cand = f.copy()
                    cand[j] = min(1.0, max(floor, cand[j] * factor))
                    v = val(cand)
                    if v < s_best - 1e-15:
                        s_best, f = v, cand
                        improved = True
            if not improved:
                break
        best = min(best, s_best)
    return best
