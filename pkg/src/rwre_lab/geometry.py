"""Lattice directions, cones, the ladder path and the cone-margin function.

A direction is an integer vector ``ell``; it induces a signed step alphabet
(one unit step per nonzero axis) and a canonical ladder path of length
``|ell|_1`` whose partial sums must stay inside the cone of the configured
half-angle.  Cone membership is decided in exact integer arithmetic: the
opening parameter ``zeta`` is interpreted as the exact binary rational of its
float representation, so boundary lattice points never depend on rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence, Tuple

import numpy as np


class GeometryError(ValueError):
    pass


class ZeroDirection(GeometryError):
    """The direction vector has no nonzero coordinate."""


class ZetaTooLarge(GeometryError):
    """Some ladder partial sum leaves the cone at this opening."""


class DimensionMismatch(GeometryError):
    pass


def _as_int_vector(v) -> Tuple[int, ...]:
    arr = np.asarray(v)
    if arr.ndim != 1 or arr.size == 0:
        raise GeometryError("expected a 1-d integer vector")
    if not np.issubdtype(arr.dtype, np.integer):
        rounded = np.rint(arr)
        if not np.all(rounded == arr):
            raise GeometryError("direction coordinates must be integers")
        arr = rounded.astype(np.int64)
    return tuple(int(x) for x in arr)


@dataclass(frozen=True)
class Direction:
    """Integer direction with its step alphabet and ladder path.

    ``perm`` is the coordinate permutation that moves the first nonzero axis
    to the front (the conventional axis rotation); all public queries are in
    the original coordinates, the permutation is bookkeeping only.
    """

    d: int
    ell: Tuple[int, ...]
    zeta: float
    ell_l1: int = field(init=False)
    ell_l2: float = field(init=False)
    step_alphabet: Tuple[Tuple[int, ...], ...] = field(init=False)
    ladder: Tuple[Tuple[int, ...], ...] = field(init=False)
    perm: Tuple[int, ...] = field(init=False)

    def __post_init__(self):
        ell = self.ell
        l1 = sum(abs(c) for c in ell)
        object.__setattr__(self, "ell_l1", l1)
        object.__setattr__(self, "ell_l2", float(np.sqrt(sum(c * c for c in ell))))
        nonzero = [i for i, c in enumerate(ell) if c != 0]
        zero = [i for i, c in enumerate(ell) if c == 0]
        object.__setattr__(self, "perm", tuple(nonzero + zero))
        alphabet = []
        ladder = []
        for i in nonzero:
            e = [0] * self.d
            e[i] = 1 if ell[i] > 0 else -1
            alphabet.append(tuple(e))
            ladder.extend([tuple(e)] * abs(ell[i]))
        object.__setattr__(self, "step_alphabet", tuple(alphabet))
        object.__setattr__(self, "ladder", tuple(ladder))

    @property
    def ell_array(self) -> np.ndarray:
        return np.asarray(self.ell, dtype=np.int64)

    def step_codes(self) -> np.ndarray:
        """Ladder alphabet as step codes (2i for +e_{i+1}, 2i+1 for -e_{i+1})."""
        codes = []
        for e in self.step_alphabet:
            axis = next(i for i, c in enumerate(e) if c != 0)
            codes.append(2 * axis + (0 if e[axis] > 0 else 1))
        return np.asarray(codes, dtype=np.int8)

    def ladder_codes(self) -> np.ndarray:
        codes = []
        for e in self.ladder:
            axis = next(i for i, c in enumerate(e) if c != 0)
            codes.append(2 * axis + (0 if e[axis] > 0 else 1))
        return np.asarray(codes, dtype=np.int8)


@dataclass(frozen=True)
class Cone:
    """Cone of vertex ``vertex``, direction ``direction`` and opening ``zeta``.

    Membership is ``(y - x) . ell >= zeta |y - x| |ell|``; ``zeta = 0`` is the
    half-space test.
    """

    vertex: Tuple[int, ...]
    direction: Direction
    zeta: float

    def __post_init__(self):
        if len(self.vertex) != self.direction.d:
            raise DimensionMismatch(
                f"vertex has {len(self.vertex)} coordinates, direction is {self.direction.d}-dimensional"
            )
        if not (0.0 <= self.zeta < 1.0):
            raise GeometryError("zeta must lie in [0, 1)")


def make_direction(ell, zeta: float) -> Direction:
    """Build a Direction and validate its ladder against the cone opening.

    The ladder takes all sgn(ell_1)e_1 steps first, then sgn(ell_2)e_2, and so
    on; construction fails with ZetaTooLarge when a partial sum leaves
    C(0, ell, zeta).
    """
    ell_t = _as_int_vector(ell)
    if all(c == 0 for c in ell_t):
        raise ZeroDirection("direction vector must have a nonzero coordinate")
    if not (0.0 <= zeta < 1.0):
        raise GeometryError("zeta must lie in [0, 1)")
    direction = Direction(d=len(ell_t), ell=ell_t, zeta=float(zeta))
    cone = Cone(vertex=(0,) * direction.d, direction=direction, zeta=float(zeta))
    pos = np.zeros(direction.d, dtype=np.int64)
    for step in direction.ladder:
        pos = pos + np.asarray(step, dtype=np.int64)
        if not cone_contains(cone, pos):
            raise ZetaTooLarge(
                f"ladder partial sum {tuple(int(c) for c in pos)} leaves C(0, {ell_t}, {zeta})"
            )
    return direction


def _check_dims(cone: Cone, y) -> np.ndarray:
    arr = np.asarray(y, dtype=np.int64)
    if arr.ndim != 1 or arr.size != cone.direction.d:
        raise DimensionMismatch(
            f"point has {arr.size} coordinates, cone is {cone.direction.d}-dimensional"
        )
    return arr


def cone_contains(cone: Cone, y) -> bool:
    """Exact membership test for a lattice point.

    The integer dot product is compared against the norm product by squaring,
    with zeta taken as the exact binary rational of its float value, so no
    floating point enters the decision.
    """
    v = _check_dims(cone, y) - np.asarray(cone.vertex, dtype=np.int64)
    ell = cone.direction.ell
    dot = int(sum(int(a) * int(b) for a, b in zip(v, ell)))
    if dot < 0:
        return False
    if cone.zeta == 0.0:
        return True
    zsq = Fraction(cone.zeta) ** 2
    v_sq = int(sum(int(c) * int(c) for c in v))
    l_sq = int(sum(int(c) * int(c) for c in ell))
    # dot^2 >= zeta^2 |v|^2 |ell|^2, cross-multiplied to integers
    return dot * dot * zsq.denominator >= zsq.numerator * v_sq * l_sq


def cone_margin(cone: Cone, y) -> float:
    """f(y - x) = (y - x) . ell - zeta |y - x| |ell| (positive strictly inside)."""
    v = _check_dims(cone, y) - np.asarray(cone.vertex, dtype=np.int64)
    ell = cone.direction.ell_array
    dot = float(v @ ell)
    return dot - cone.zeta * float(np.linalg.norm(v)) * cone.direction.ell_l2


def ladder_partial_sums(direction: Direction) -> np.ndarray:
    """Partial sums of the ladder path, one row per step."""
    steps = np.asarray(direction.ladder, dtype=np.int64)
    return np.cumsum(steps, axis=0)


def unit_steps(d: int) -> np.ndarray:
    """The 2d signed unit vectors in code order (2i -> +e_{i+1}, 2i+1 -> -e_{i+1})."""
    out = np.zeros((2 * d, d), dtype=np.int64)
    for i in range(d):
        out[2 * i, i] = 1
        out[2 * i + 1, i] = -1
    return out
