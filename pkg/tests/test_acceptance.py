"""Acceptance suite: every criterion at its stated scale and tolerance.

Each test prints one PASS/FAIL line in the pytest terminal summary (see
conftest) and asserts both the criterion and its runtime budget.  Seeds are
frozen, so the statistical checks are deterministic.
"""

import json
import math
import time

import numpy as np
import pytest

import rwre_lab as R
from rwre_lab._rng import TAG_ENV, TAG_STEPS, hash_key, subkey
from rwre_lab.cli import parse_config, run_experiment
from conftest import record_criterion

D_E1 = R.make_direction((1, 0), 0.0)

# the non-nestling two-kernel product environment of criteria 3, 4, 6, 7
K_A = R.TransitionKernel([0.35, 0.15, 0.25, 0.25])   # drift 0.2 along e1
K_B = R.TransitionKernel([0.45, 0.05, 0.25, 0.25])   # drift 0.4 along e1
K_DRIFT3 = R.TransitionKernel([0.4, 0.1, 0.25, 0.25])  # drift (0.3, 0)

# the two-kernel Ising example (drift +-0.2, Lemma-style pass parameters)
OMEGA_PLUS = R.TransitionKernel([0.4, 0.2, 0.2, 0.2])
OMEGA_MINUS = R.TransitionKernel([0.2, 0.4, 0.2, 0.2])
ISING_BETA, ISING_H, ISING_DELTA = 0.1, 1.3, 0.1


class _Criterion:
    def __init__(self, name: str, budget_s: float):
        self.name = name
        self.budget = budget_s
        self.checks = []
        self.t0 = time.time()

    def check(self, label: str, ok: bool):
        self.checks.append((label, bool(ok)))

    def finish(self, detail: str = ""):
        elapsed = time.time() - self.t0
        failed = [label for label, ok in self.checks if not ok]
        in_budget = elapsed < self.budget
        ok = not failed and in_budget
        info = f"{elapsed:.1f}s of {self.budget:.0f}s budget"
        if detail:
            info = f"{detail}; {info}"
        if failed:
            info += f"; failed: {failed}"
        record_criterion(self.name, ok, info)
        assert not failed, (self.name, failed)
        assert in_budget, (self.name, elapsed)


def _run_replicas(model, direction, zeta, kappa, L, horizon, replicas, seed):
    seqs, blocks = [], []
    for rep in range(replicas):
        env = model.reseeded(subkey(seed, rep, TAG_ENV))
        rec = R.simulate(env, direction, kappa, (0,) * model.d, horizon,
                         "coupled", hash_key(seed, rep, TAG_STEPS))
        seq = R.detect_regenerations(rec, direction, zeta, L, kappa)
        seqs.append(seq)
        blocks.append(R.blocks_or_empty(seq, kappa))
    return seqs, blocks


def _random_valid_pair(rng):
    d = int(rng.integers(1, 4))
    ell = tuple(int(c) for c in rng.integers(-2, 3, size=d))
    if all(c == 0 for c in ell):
        ell = (1,) + ell[1:]
    direction = R.make_direction(ell, 0.0)
    probs = rng.dirichlet(np.ones(2 * d) * 2.0)
    codes = direction.step_codes()
    kappa = 0.9 * float(rng.uniform(0.1, 1.0)) * min(float(probs[codes].min()),
                                                     1.0 / len(codes))
    return R.TransitionKernel(probs), direction, kappa


def test_criterion_01_coupling_marginal_identity():
    crit = _Criterion("criterion 1: coupling marginal identity (TV <= 1e-12, 100 pairs)", 1.0)
    rng = np.random.default_rng(101)
    done = 0
    while done < 100:
        k, direction, kappa = _random_valid_pair(rng)
        if kappa <= 1e-6:
            continue
        codes = direction.step_codes()
        mix = (1 - kappa * len(codes)) * R.coupled_step_distribution(k, -1, kappa, direction).probs
        for c in codes:
            mix = mix + kappa * R.coupled_step_distribution(k, int(c), kappa, direction).probs
        tv = 0.5 * float(np.abs(mix - k.probs).sum())
        crit.check(f"pair {done}", tv <= 1e-12)
        done += 1
    crit.finish()


def test_criterion_02_homogeneous_lln_oracle():
    crit = _Criterion("criterion 2: homogeneous LLN oracle (200 x 1e5, L=1)", 30.0)
    model = R.Homogeneous(master_seed=202, kernel=K_DRIFT3)
    seqs, blocks = _run_replicas(model, D_E1, 0.0, 0.05, 1, 100_000, 200, seed=4202)
    est = R.estimate_velocity(blocks)
    target = np.array([0.3, 0.0])
    crit.check("v_hat within 3 se of (0.3, 0)",
               bool(np.all(np.abs(est.v_hat - target) <= 3 * est.se)))
    crit.check("v_direct within 3 se of (0.3, 0)",
               bool(np.all(np.abs(est.v_direct - target) <= 3 * est.se_direct)))
    comb = np.sqrt(est.se ** 2 + est.se_direct ** 2)
    crit.check("estimators agree within 3 combined se",
               bool(np.all(np.abs(est.v_hat - est.v_direct) <= 3 * comb)))
    crit.finish(f"v_hat={est.v_hat.round(5).tolist()}")


def test_criterion_03_velocity_sign_and_identity():
    crit = _Criterion("criterion 3: velocity sign z>=5 and beta*v=gamma (product env)", 60.0)
    model = R.Product(master_seed=303, kernels=(K_A, K_B), weights=(0.5, 0.5))
    zs = {}
    for L in (1, 2):
        seqs, blocks = _run_replicas(model, D_E1, 0.0, 0.05, L, 20_000, 300, seed=4303)
        est = R.estimate_velocity(blocks)
        rep = R.estimate_moments(blocks, seqs, L, 2.0, 0.05, 0.0)
        z = est.v_hat[0] / est.se[0]
        zs[L] = round(float(z), 1)
        crit.check(f"L={L}: v_hat.e1 > 0 with z >= 5", est.v_hat[0] > 0 and z >= 5)
        taus1 = np.array([b.scaled_durations[0] for b, s in zip(blocks, seqs)
                          if s.survived_at_origin and b.count > 0])
        xs1 = np.stack([b.scaled_displacements[0] for b, s in zip(blocks, seqs)
                        if s.survived_at_origin and b.count > 0])
        resid = xs1 - np.outer(taus1, est.v_hat)
        se = resid.std(axis=0, ddof=1) / math.sqrt(len(taus1)) + rep.beta_hat * est.se
        crit.check(f"L={L}: beta_hat v_hat = gamma_hat within 3 se",
                   bool(np.all(np.abs(rep.beta_hat * est.v_hat - rep.gamma_hat) <= 3 * se)))
    crit.finish(f"z-scores {zs}")


def test_criterion_04_k_tail_geometry():
    crit = _Criterion("criterion 4: K-tail log-linearity (1e4 replicas) + Geom(0.5) fixture", 60.0)
    model = R.Product(master_seed=404, kernels=(K_A, K_B), weights=(0.5, 0.5))
    seqs, _ = _run_replicas(model, D_E1, 0.0, 0.05, 1, 20_000, 10_000, seed=4404)
    tail = R.k_tail(seqs)
    ratios = tail["ratios"][:3]  # P(K>=2)/P(K>=1) .. P(K>=4)/P(K>=3)
    crit.check("tail observed to k=4", len(ratios) == 3 and tail["n"] == 10_000)
    mean_ratio = float(np.mean(ratios))
    for i, r in enumerate(ratios):
        crit.check(f"ratio {i + 1} within 0.1 of mean", abs(r - mean_ratio) <= 0.1)

    rng = np.random.default_rng(4)
    ks = rng.geometric(0.5, size=20_000)
    synth = R.k_tail([_seq_stub(int(k)) for k in ks])
    for i, r in enumerate(synth["ratios"][:4]):
        n_i = synth["tail"][i] * synth["n"]
        crit.check(f"geometric fixture ratio {i + 1} ~ 0.5",
                   abs(r - 0.5) <= 3 * math.sqrt(0.25 / n_i))
    crit.finish(f"ratios={[round(r, 3) for r in ratios]}")


def _seq_stub(k: int) -> R.RegenSequence:
    return R.RegenSequence(L=1, taus=np.array([1]), positions=np.array([[1, 0]]),
                           censored_tail=True, k_values=np.array([k]), start=(0, 0),
                           end_position=np.array([1, 0]), horizon=1,
                           survived_at_origin=True)


def test_criterion_05_one_step_supermartingale():
    crit = _Criterion("criterion 5: one-step supermartingale at lambda0 (1e3 kernels x 2 deltas)", 5.0)
    rng = np.random.default_rng(505)
    for delta in (0.2, 0.5):
        lam0 = R.compute_lambda0(delta, 1.0)
        zeta = 0.9 * delta / 3.0
        direction = R.make_direction((1, 0), 0.0)
        bad = 0
        done = 0
        while done < 1_000:
            p_minus = float(rng.uniform(0.005, (1 - delta) / 2))
            p_plus = p_minus + delta + float(rng.uniform(0, (1 - delta - 2 * p_minus) * 0.8))
            lat = 1 - p_plus - p_minus
            if lat <= 0.01:
                continue
            split = float(rng.uniform(0.2, 0.8))
            k = R.TransitionKernel([p_plus, p_minus, lat * split, lat * (1 - split)])
            if not R.one_step_supermartingale_check(k, direction, zeta, delta, lam0):
                bad += 1
            done += 1
        crit.check(f"delta={delta}: all 1000 kernels pass", bad == 0)
    crit.finish()


def test_criterion_06_exit_moment_bound():
    crit = _Criterion("criterion 6: exit-time exponential moment bound (r in 5,10,20)", 60.0)
    model = R.Product(master_seed=606, kernels=(K_DRIFT3, K_B), weights=(0.5, 0.5))
    delta, kappa = 0.3, 0.1
    lam0 = R.compute_lambda0(delta, 1.0)
    details = []
    for r in (5.0, 10.0, 20.0):
        rep = R.exit_moment_check(model, D_E1, kappa, delta, lam0, r,
                                  replicas=20_000, horizon=4_000, seed=4606)
        crit.check(f"r={r}: estimate - 3 se <= exp(3 lam r)", rep["passes"])
        crit.check(f"r={r}: all replicas exited", rep["non_exit"] == 0)
        details.append(f"r={int(r)}: {rep['estimate']:.3f}<= {rep['bound']:.3f}")
    crit.finish("; ".join(details))


def test_criterion_07_kalikow_single_site():
    crit = _Criterion("criterion 7: Kalikow kernel at U={0} (mixture mean, exact rows)", 10.0)
    model = R.Product(master_seed=707, kernels=(K_A, K_B), weights=(0.5, 0.5))
    est = R.kalikow_mc(model, D_E1, 0.05, [(0, 0)], replicas=4_000, seed=4707)
    row = est.kernels[(0, 0)]
    target = 0.5 * (K_A.probs + K_B.probs)
    crit.check("row sums to 1 exactly", abs(float(row.sum()) - 1.0) <= 1e-12)
    for c in range(4):
        crit.check(f"entry {c} within 3 se of mixture mean",
                   abs(row[c] - target[c]) <= 3 * est.se[(0, 0)][c])
    crit.finish(f"row={row.round(4).tolist()}")


def test_criterion_08_sufficient_implies_cs_bound():
    crit = _Criterion("criterion 8: sufficient condition implies CS lower bound (20 draws)", 10.0)
    rng = np.random.default_rng(808)
    done = 0
    while done < 20:
        dp = float(rng.uniform(0.05, 0.5))
        dm = float(rng.uniform(0.05, 0.5))
        lat_p = float(rng.uniform(0.05, 0.3))
        lat_m = float(rng.uniform(0.05, 0.3))
        base_p = (1 - dp - 2 * lat_p) / 2
        base_m = (1 - dm - 2 * lat_m) / 2
        if base_p <= 0.01 or base_m <= 0.01:
            continue
        omega_p = R.TransitionKernel([base_p + dp, base_p, lat_p, lat_p])
        omega_m = R.TransitionKernel([base_m, base_m + dm, lat_m, lat_m])
        delta = float(rng.uniform(0.2, 0.8)) * dp
        beta = float(rng.uniform(0.0, 0.3))
        rhs = math.log((dm + delta) / (dp - delta)) + math.log(
            float(np.max(omega_p.probs / omega_m.probs)))
        h = 0.5 * (rhs + 4 * beta * 2) + float(rng.uniform(0.0, 1.0))
        rep = R.kalikow_sufficient_check(omega_p, omega_m, delta, beta, h, 2)
        if not rep.passes_L54:
            continue
        val = R.kalikow_cs_lhs(omega_p, omega_m, beta, h, 2, f_grid_resolution=5)
        crit.check(f"draw {done}: cs_lhs >= delta - 1e-6", val >= delta - 1e-6)
        done += 1
    crit.finish()


def test_criterion_09_ising_sampler_exactness():
    crit = _Criterion("criterion 9: Glauber matches 2^9 enumeration (0.01 TV) and beta=0 law", 60.0)
    import itertools
    params = R.IsingParams(beta=0.2, h=0.3, d=2, box=3, burn_in_sweeps=40)
    sites = [(i, j) for i in range(3) for j in range(3)]

    def energy(cfg):
        field = dict(zip(sites, cfg))
        e = 0.0
        for (i, j), sp in field.items():
            e += params.h * sp
            for di, dj in ((1, 0), (0, 1)):
                e += params.beta * sp * field.get((i + di, j + dj), 1)
            for di, dj in ((-1, 0), (0, -1)):
                if (i + di, j + dj) not in field:
                    e += params.beta * sp
        return e

    states = list(itertools.product([-1, 1], repeat=9))
    w = np.array([math.exp(energy(s)) for s in states])
    w /= w.sum()
    exact = np.array([sum(wi for s, wi in zip(states, w) if s[k] > 0) for k in range(9)])
    n = 100_000
    emp = np.zeros(9)
    for i in range(n):
        emp += (R.glauber_sample(params, i).ravel() > 0)
    emp /= n
    worst = float(np.abs(emp - exact).max())
    crit.check("single-site marginals within 0.01 TV of enumeration", worst <= 0.01)

    p0 = R.IsingParams(beta=0.0, h=0.4, d=2, box=32, burn_in_sweeps=1)
    f = R.glauber_sample(p0, seed=909)
    se = math.sqrt(1 - math.tanh(0.4) ** 2) / 32
    crit.check("beta=0 sweep matches i.i.d. law within 3 se",
               abs(float(f.mean()) - math.tanh(0.4)) <= 3 * se)
    crit.finish(f"worst site deviation {worst:.4f}")


def test_criterion_10_splitting_representation():
    crit = _Criterion("criterion 10: splitting representation (50 random pairs)", 5.0)
    rng = np.random.default_rng(1010)
    for i in range(50):
        n = int(rng.integers(2, 9))
        p = rng.dirichlet(np.ones(n) * float(rng.uniform(0.5, 3.0)))
        q = rng.dirichlet(np.ones(n) * float(rng.uniform(0.5, 3.0)))
        sc = R.split_couple(p, q)
        tv = float(np.maximum(p - q, 0).sum())
        ok = (np.abs(sc.marginal_first() - p).sum() <= 1e-12
              and np.abs(sc.marginal_second() - q).sum() <= 1e-12
              and abs((1 - sc.prob_equal()) - tv) <= 1e-12)
        crit.check(f"pair {i}", ok)
    crit.finish()


def test_criterion_11_ising_demo_desk_scale():
    crit = _Criterion("criterion 11: nestling Ising demo (1e3 x 1e5, L in 1,2,3)", 600.0)
    gamma = -math.log(R.dobrushin_coefficient(
        R.IsingParams(beta=ISING_BETA, h=ISING_H, d=2)))
    raw = {
        "kind": "ising_demo",
        "environment": {"kind": "ising_two_kernel",
                        "omega_plus": OMEGA_PLUS.probs.tolist(),
                        "omega_minus": OMEGA_MINUS.probs.tolist(),
                        "beta": ISING_BETA, "h": ISING_H, "d": 2,
                        "box": 16, "burn_in_sweeps": 6, "boundary": 1},
        "ell": [1, 0], "zeta": 0.1, "kappa": 0.1,
        "L": [1, 2, 3], "horizon": 100_000, "replicas": 1_000, "seed": 1111,
        "out": "rwre_out/acceptance_ising_demo",
        "extra": {"delta": ISING_DELTA, "alpha": 2.0,
                  "phi": {"gamma": gamma * math.sqrt(2.0), "C": 0.25}},
    }
    man = run_experiment(parse_config(raw))
    crit.check("Lemma-5.4-style sufficient condition passes", man.criteria["passes_L54"])
    crit.check("Dobrushin coefficient < 1 (weak-mixing regime)",
               man.criteria["dobrushin_c"] < 1)
    products = []
    for L in (1, 2, 3):
        vel = man.criteria[f"velocity_L{L}"]
        z = vel["v_hat"][0] / vel["se"][0]
        crit.check(f"L={L}: v_hat.e1 > 0 with z >= 3", vel["v_hat"][0] > 0 and z >= 3)
        rep = man.criteria[f"moments_L{L}"]
        crit.check(f"L={L}: moment product finite", math.isfinite(rep["product"]))
        crit.check(f"L={L}: survivor sample nonempty", rep["n_survivors"] > 30)
        products.append(rep["product"])
    trend = "decreasing" if products[0] > products[1] > products[2] else "non-monotone"
    censor = man.criteria["moments_L1"]["censor_rate"]
    crit.finish(f"v~{man.criteria['v_hat_e1']:.4f}, censor rate {censor:.2f}, "
                f"product per L {[round(p, 2) for p in products]} ({trend})")


def test_criterion_12_determinism_across_workers(tmp_path):
    crit = _Criterion("criterion 12: byte-identical reruns regardless of worker count", 60.0)
    base = {
        "kind": "lln",
        "environment": {"kind": "product",
                        "kernels": [K_A.probs.tolist(), K_B.probs.tolist()],
                        "weights": [0.5, 0.5]},
        "ell": [1, 0], "zeta": 0.0, "kappa": 0.05,
        "L": [1], "horizon": 5_000, "replicas": 16, "seed": 1212,
    }
    outs = []
    for name, threads in (("a", 1), ("b", 2), ("c", 1)):
        raw = dict(base, out=str(tmp_path / name), threads=threads)
        run_experiment(parse_config(raw))
        outs.append((tmp_path / name / "regen_L1.jsonl").read_bytes())
    crit.check("threads=1 vs threads=2 byte-identical", outs[0] == outs[1])
    crit.check("rerun byte-identical", outs[0] == outs[2])
    vel = [(tmp_path / n / "velocity.csv").read_bytes() for n in ("a", "b", "c")]
    crit.check("velocity.csv byte-identical", vel[0] == vel[1] == vel[2])
    crit.finish()
