"""Velocity and moment estimation, Kalikow-kernel Monte Carlo, diagnostics.

All ratio estimators are pooled ratios of sums with leave-one-replica-out
jackknife standard errors; merges over replicas are order-independent.
Conditioning on cone survival is realized as survival to the horizon, and
every report carries the horizon and censor rate.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import _kernels
from ._rng import TAG_ENV, TAG_STEPS, hash_key, subkey
from .environment import EnvironmentModel, TransitionKernel, check_non_nestling, local_drift
from .geometry import Cone, Direction, cone_contains, cone_margin, unit_steps
from .regeneration import BlockSeries, RegenSequence
from .walker import simulate


class RateTooLarge(ValueError):
    """phi(L) must stay below the cone-survival probability."""


class NoBlocks(ValueError):
    pass


class NoSurvivors(ValueError):
    pass


class BadRegion(ValueError):
    pass


class PreconditionFailed(ValueError):
    pass


class DegenerateEvent(ValueError):
    pass


# ---------------------------------------------------------------------------
# scalar formulas


def phi_prime(phi_L: float, p_D: float) -> float:
    """phi'(L) = 2 phi(L) / (P(D' = inf) - phi(L)); needs phi(L) < P(D' = inf)."""
    if not (0.0 <= phi_L and phi_L < p_D <= 1.0):
        raise RateTooLarge(f"need 0 <= phi_L < p_D <= 1, got phi_L={phi_L}, p_D={p_D}")
    return 2.0 * phi_L / (p_D - phi_L)


def compute_lambda1(delta: float, tol: float = 1e-9) -> float:
    """Largest lambda with e^{lam delta} [cosh(3 lam) - delta sinh(3 lam)] < 1.

    The bracket factor is increasing in the cone opening, so requiring the
    inequality for every zeta <= delta/3 reduces to zeta = delta/3; the
    returned rate grows without bound as delta -> 1.
    """
    if not (0.0 < delta < 1.0):
        raise PreconditionFailed("need delta in (0, 1)")

    def a_val(lam: float) -> float:
        return math.exp(lam * delta) * (math.cosh(3 * lam) - delta * math.sinh(3 * lam))

    lo = tol
    hi = tol
    while a_val(hi) < 1.0:
        hi *= 2.0
        if hi > 1e9:
            return hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if a_val(mid) < 1.0:
            lo = mid
        else:
            hi = mid
    return lo


def compute_lambda0(delta: float, ell_norm: float, tol: float = 1e-9) -> float:
    """Largest lambda0 with max{u^-2(e^u-1-u): 0<|u|<=lambda0 c} <= delta/(lambda0 c^2),
    c = 3|ell|+2, found by bisection.  Monotone increasing in delta."""
    if not (0.0 < delta <= 1.0) or ell_norm < 1.0:
        raise PreconditionFailed("need delta in (0,1] and |ell| >= 1")
    c = 3.0 * ell_norm + 2.0

    def ok(lam: float) -> bool:
        u = lam * c
        m = (math.expm1(u) - u) / (u * u)  # increasing in u, -> 1/2 at 0+
        return m <= delta / (lam * c * c)

    lo = tol
    if not ok(lo):
        return lo
    hi = lo
    while ok(hi):
        hi *= 2.0
        if hi > 1e6:
            return hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


# ---------------------------------------------------------------------------
# velocity and moments from regeneration blocks


@dataclass(frozen=True)
class VelocityEstimate:
    """Ratio-of-sums velocity against the endpoint estimator."""

    v_hat: np.ndarray
    v_direct: np.ndarray
    se: np.ndarray
    se_direct: np.ndarray
    n_blocks: int
    L: int
    censor_rate: float
    n_replicas: int
    horizon: int

    def to_row(self) -> dict:
        return {
            "v_hat": self.v_hat.tolist(),
            "v_direct": self.v_direct.tolist(),
            "se": self.se.tolist(),
            "se_direct": self.se_direct.tolist(),
            "n_blocks": self.n_blocks,
            "L": self.L,
            "censor_rate": self.censor_rate,
            "n_replicas": self.n_replicas,
            "horizon": self.horizon,
        }


def _jackknife_ratio(nums: np.ndarray, dens: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Pooled ratio of per-replica sums and its leave-one-out jackknife se.

    nums has shape (R, d), dens shape (R,).
    """
    tot_n = nums.sum(axis=0)
    tot_d = dens.sum()
    ratio = tot_n / tot_d
    r = nums.shape[0]
    if r < 2:
        return ratio, np.full_like(ratio, np.nan)
    loo = (tot_n[None, :] - nums) / (tot_d - dens)[:, None]
    mean_loo = loo.mean(axis=0)
    se = np.sqrt((r - 1) / r * ((loo - mean_loo) ** 2).sum(axis=0))
    return ratio, se


def estimate_velocity(blocks: Sequence[BlockSeries]) -> VelocityEstimate:
    """v_hat = (sum_k X-bar_k) / (sum_k tau-bar_k) pooled over replicas (the
    kappa^L scaling cancels); v_direct from endpoints; jackknife ses."""
    blocks = [b for b in blocks]
    if not blocks or sum(b.count for b in blocks) == 0:
        raise NoBlocks("no complete regeneration blocks")
    d = blocks[0].scaled_displacements.shape[1]
    with_blocks = [b for b in blocks if b.count > 0]
    nums = np.stack([b.scaled_displacements.sum(axis=0) for b in with_blocks])
    dens = np.asarray([b.scaled_durations.sum() for b in with_blocks])
    v_hat, se = _jackknife_ratio(nums, dens)
    ends = np.stack([b.end_displacement for b in blocks])
    hors = np.asarray([float(b.horizon) for b in blocks])
    v_dir, se_dir = _jackknife_ratio(ends, hors)
    return VelocityEstimate(
        v_hat=v_hat, v_direct=v_dir, se=se, se_direct=se_dir,
        n_blocks=int(sum(b.count for b in blocks)), L=blocks[0].L,
        censor_rate=float(np.mean([b.censored_tail for b in blocks])),
        n_replicas=len(blocks), horizon=blocks[0].horizon,
    )


@dataclass(frozen=True)
class MomentReport:
    """First-block moments conditioned on cone survival at the origin."""

    L: int
    alpha: float
    M_hat: float
    beta_hat: float
    gamma_hat: np.ndarray
    p_D_survive: float
    phi_L: float
    phi_prime_L: float
    product: float
    n_survivors: int
    horizon: int
    censor_rate: float

    def to_row(self) -> dict:
        return {
            "L": self.L, "alpha": self.alpha, "M_hat": self.M_hat,
            "beta_hat": self.beta_hat, "gamma_hat": self.gamma_hat.tolist(),
            "p_D_survive": self.p_D_survive, "phi_L": self.phi_L,
            "phi_prime_L": self.phi_prime_L, "product": self.product,
            "n_survivors": self.n_survivors, "horizon": self.horizon,
            "censor_rate": self.censor_rate,
        }


def estimate_moments(blocks: Sequence[BlockSeries], seqs: Sequence[RegenSequence],
                     L: int, alpha: float, kappa: float, phi_L: float) -> MomentReport:
    """Empirical M(L), beta_L, gamma_L over first blocks with surviving D',
    plus phi'(L) and the moment-mixing product phi'^{1/alpha'} M^{1/alpha}."""
    if alpha <= 1.0:
        raise ValueError("alpha must exceed 1")
    if len(blocks) != len(seqs):
        raise ValueError("blocks and seqs must be replica-aligned")
    surv_mask = [s.survived_at_origin for s in seqs]
    p_d = float(np.mean(surv_mask)) if seqs else 0.0
    first_tau = [b.scaled_durations[0] for b, s in zip(blocks, seqs)
                 if s.survived_at_origin and b.count > 0]
    first_x = [b.scaled_displacements[0] for b, s in zip(blocks, seqs)
               if s.survived_at_origin and b.count > 0]
    if not first_tau:
        raise NoSurvivors("no replica with surviving D' and a detected block")
    taus = np.asarray(first_tau)
    m_hat = float(np.mean(taus ** alpha))
    beta_hat = float(np.mean(taus))
    gamma_hat = np.mean(np.stack(first_x), axis=0)
    pp = phi_prime(phi_L, p_d)
    alpha_prime = alpha / (alpha - 1.0)
    product = (pp ** (1.0 / alpha_prime)) * (m_hat ** (1.0 / alpha))
    return MomentReport(
        L=int(L), alpha=float(alpha), M_hat=m_hat, beta_hat=beta_hat,
        gamma_hat=gamma_hat, p_D_survive=p_d, phi_L=float(phi_L),
        phi_prime_L=pp, product=product, n_survivors=len(first_tau),
        horizon=seqs[0].horizon if seqs else 0,
        censor_rate=float(np.mean([s.censored_tail for s in seqs])),
    )


# ---------------------------------------------------------------------------
# Kalikow-kernel Monte Carlo


@dataclass(frozen=True)
class KalikowEstimate:
    """Occupation-time-weighted exit chain estimated on a finite region."""

    sites: tuple
    kernels: Dict[tuple, np.ndarray]
    drifts: Dict[tuple, np.ndarray]
    visits: Dict[tuple, int]
    se: Dict[tuple, np.ndarray]
    replicas: int


def _check_region(U: Iterable[tuple], d: int) -> set:
    sites = {tuple(int(c) for c in x) for x in U}
    origin = (0,) * d
    if origin not in sites:
        raise BadRegion("region must contain the origin")
    seen = {origin}
    queue = deque([origin])
    steps = unit_steps(d)
    while queue:
        x = queue.popleft()
        for e in steps:
            y = tuple(int(c) for c in (np.asarray(x) + e))
            if y in sites and y not in seen:
                seen.add(y)
                queue.append(y)
    if seen != sites:
        raise BadRegion("region must be connected")
    return sites


def kalikow_mc(model: EnvironmentModel, direction: Direction, kappa: float,
               U: Iterable[tuple], replicas: int, seed: int) -> KalikowEstimate:
    """Monte Carlo for the occupation-time-weighted kernel on U.

    Per replica: fresh environment, quenched walk from 0 until it exits U;
    numerators accumulate omega(x, x+e) per visit and the shared denominator
    counts visits, so estimated rows sum to one exactly.  The environment is
    resampled per replica, so for dependent models the estimate targets the
    annealed average of the random kernel.
    """
    d = model.d
    sites = _check_region(U, d)
    cap = max(2000, 500 * len(sites))
    steps = unit_steps(d)
    site_list = sorted(sites)
    site_idx = {x: i for i, x in enumerate(site_list)}
    nums = np.zeros((replicas, len(site_list), 2 * d))
    dens = np.zeros((replicas, len(site_list)))
    for rep in range(replicas):
        env = model.reseeded(subkey(seed, rep, TAG_ENV))
        rec = simulate(env, direction, kappa, (0,) * d, cap, "quenched",
                       hash_key(seed, rep, TAG_STEPS))
        exited = False
        for n in range(cap + 1):
            x = tuple(int(c) for c in rec.positions[n])
            if x not in sites:
                exited = True
                break
            i = site_idx[x]
            nums[rep, i] += env.kernel_at(x).probs
            dens[rep, i] += 1.0
        if not exited:
            raise RuntimeError("walk failed to exit the region within the cap")
    kernels, drifts, visits, ses = {}, {}, {}, {}
    for x, i in site_idx.items():
        tot_d = dens[:, i].sum()
        if tot_d == 0:
            continue  # never visited: reported absent
        row = nums[:, i, :].sum(axis=0) / tot_d
        _, se = _jackknife_ratio(nums[:, i, :], dens[:, i])
        kernels[x] = row
        drifts[x] = row @ steps.astype(float)
        visits[x] = int(tot_d)
        ses[x] = se
    return KalikowEstimate(sites=tuple(site_list), kernels=kernels, drifts=drifts,
                           visits=visits, se=ses, replicas=replicas)


# ---------------------------------------------------------------------------
# Lemma-style diagnostics


def _witness_states(direction: Direction, zeta: float, radius: int) -> np.ndarray:
    key = (direction.ell, float(zeta), int(radius))
    cached = _WITNESS_CACHE.get(key)
    if cached is not None:
        return cached
    d = direction.d
    axes = [np.arange(-radius, radius + 1)] * d
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    cone = Cone((0,) * d, direction, zeta)
    out = np.asarray([y for y in grid if cone_contains(cone, y)])
    _WITNESS_CACHE[key] = out
    return out


_WITNESS_CACHE: Dict[tuple, np.ndarray] = {}


def one_step_supermartingale_check(k: TransitionKernel, direction: Direction,
                                   zeta: float, delta: float, lam: float,
                                   witnesses: Optional[np.ndarray] = None,
                                   radius: int = 10) -> bool:
    """Exact one-step check of E[exp{-3 lam (f(X+e)-f(X)) + lam delta}] <= 1
    over a witness set of states inside the cone (default |y|_inf <= radius)."""
    if lam <= 0:
        raise PreconditionFailed("lambda must be positive")
    d = k.d
    if witnesses is None:
        witnesses = _witness_states(direction, zeta, radius)
    ell = direction.ell_array.astype(float)
    lnorm = direction.ell_l2
    steps = unit_steps(d).astype(float)
    y = witnesses.astype(float)
    f_y = y @ ell - zeta * np.linalg.norm(y, axis=1) * lnorm
    worst = -np.inf
    total = np.zeros(len(y))
    for c in range(2 * d):
        ye = y + steps[c]
        f_ye = ye @ ell - zeta * np.linalg.norm(ye, axis=1) * lnorm
        total += k.probs[c] * np.exp(-3.0 * lam * (f_ye - f_y) + lam * delta)
    worst = float(total.max())
    return worst <= 1.0 + 1e-12


def exit_moment_check(model: EnvironmentModel, direction: Direction, kappa: float,
                      delta: float, lam: float, r: float, replicas: int,
                      horizon: int, seed: int) -> dict:
    """MC estimate of E exp{lam delta T} for the first time X.ell >= r in the
    coupled walk, against the closed-form bound exp{3 lam r}.  Replicas not
    exiting within the horizon substitute T = horizon (a lower bound,
    reported separately)."""
    if not check_non_nestling(model, direction, delta):
        raise PreconditionFailed("model is not non-nestling at this delta")
    if not delta > 2.0 * kappa:
        raise PreconditionFailed("need delta > 2 kappa")
    lam0 = compute_lambda0(delta, direction.ell_l2)
    if lam > lam0 + 1e-12:
        raise PreconditionFailed(f"lambda = {lam} exceeds lambda0 = {lam0}")
    ell = direction.ell_array.astype(np.float64)
    vals = np.empty(replicas)
    non_exit = 0
    for rep in range(replicas):
        env = model.reseeded(subkey(seed, rep, TAG_ENV))
        rec = simulate(env, direction, kappa, (0,) * model.d, horizon, "coupled",
                       hash_key(seed, rep, TAG_STEPS))
        t = _kernels.first_level_hit(rec.positions, ell, float(r))
        if t < 0:
            non_exit += 1
            t = horizon
        vals[rep] = math.exp(lam * delta * t)
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(replicas))
    bound = math.exp(3.0 * lam * r)
    return {
        "estimate": est, "se": se, "bound": bound, "r": float(r),
        "lambda": lam, "delta": delta, "replicas": replicas,
        "non_exit": non_exit, "passes": est - 3.0 * se <= bound,
    }


# ---------------------------------------------------------------------------
# cone-mixing probe


@dataclass(frozen=True)
class CylinderEvent:
    """Threshold event on the kernels at finitely many sites."""

    sites: np.ndarray      # (m, d) lattice points
    code: int              # step code whose probability is thresholded
    threshold: float
    above: bool = True

    def evaluate(self, model: EnvironmentModel, offset: np.ndarray) -> bool:
        for s in self.sites:
            p = model.kernel_at(np.asarray(s) + offset).probs[self.code]
            ok = p >= self.threshold if self.above else p < self.threshold
            if not ok:
                return False
        return True


def default_event_family(model: EnvironmentModel, direction: Direction) -> list:
    """One-site threshold events: A on the back half-space, B at the cone tip."""
    kernels = model.support()
    vals = sorted(k.probs[direction.step_codes()[0]] for k in kernels)
    thr = 0.5 * (vals[0] + vals[-1]) if len(vals) > 1 else vals[0]
    code = int(direction.step_codes()[0])
    a_site = -direction.ell_array[None, :]
    b_site = np.zeros((1, direction.d), dtype=np.int64)
    return [
        (CylinderEvent(a_site, code, thr, True), CylinderEvent(b_site, code, thr, True)),
        (CylinderEvent(a_site, code, thr, False), CylinderEvent(b_site, code, thr, True)),
    ]


def cone_mixing_probe(model: EnvironmentModel, direction: Direction, zeta: float,
                      r_values: Sequence[float], event_family: Optional[list],
                      samples: int, seed: int) -> List[dict]:
    """Empirical phi-hat(r): max over the family of |P(A and B)/P(A) - P(B)|
    with B translated to the cone at level r.  A diagnostic, not a
    certificate."""
    if event_family is None:
        event_family = default_event_family(model, direction)
    ell = direction.ell_array
    out = []
    zero = np.zeros(direction.d, dtype=np.int64)
    for r in r_values:
        shift = np.asarray(np.ceil(r) * ell, dtype=np.int64)
        stats = []
        for a_ev, b_ev in event_family:
            n_a = n_b = n_ab = 0
            for i in range(samples):
                env = model.reseeded(subkey(seed, i, TAG_ENV))
                a = a_ev.evaluate(env, zero)
                b = b_ev.evaluate(env, shift)
                n_a += a
                n_b += b
                n_ab += a and b
            p_a = n_a / samples
            if p_a < 0.05:
                raise DegenerateEvent(f"P(A) = {p_a} below the 0.05 floor")
            p_b = n_b / samples
            p_b_given_a = n_ab / n_a
            stat = abs(p_b_given_a - p_b)
            se = (math.sqrt(p_b_given_a * (1 - p_b_given_a) / n_a)
                  + math.sqrt(p_b * (1 - p_b) / samples))
            stats.append((stat, 1.96 * se))
        phi_hat, ci = max(stats, key=lambda t: t[0])
        out.append({"r": float(r), "phi_hat": phi_hat, "ci": ci, "samples": samples})
    return out
