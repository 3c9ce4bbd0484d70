import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import rwre_lab as R
from rwre_lab.geometry import Cone, cone_contains, unit_steps

D_E1 = R.make_direction((1, 0), 0.0)
K_EXAMPLE = R.TransitionKernel([0.4, 0.1, 0.25, 0.25])


class TestCoupledStepDistribution:
    def test_forced_mark_is_point_mass(self):
        out = R.coupled_step_distribution(K_EXAMPLE, 0, 0.1, D_E1)
        assert out.probs.tolist() == [1.0, 0.0, 0.0, 0.0]

    def test_residual_kernel_example(self):
        # probs' = (probs - kappa 1_ladder) / (1 - kappa), kappa = 0.1, E = {e1}
        out = R.coupled_step_distribution(K_EXAMPLE, -1, 0.1, D_E1)
        expect = [1 / 3, 1 / 9, 5 / 18, 5 / 18]
        assert np.allclose(out.probs, expect, atol=1e-15)

    def test_marginal_identity_exact(self):
        kappa = 0.1
        forced = R.coupled_step_distribution(K_EXAMPLE, 0, kappa, D_E1).probs
        resid = R.coupled_step_distribution(K_EXAMPLE, -1, kappa, D_E1).probs
        mix = kappa * forced + (1 - kappa) * resid
        assert np.abs(mix - K_EXAMPLE.probs).sum() <= 1e-12

    def test_kappa_too_large(self):
        with pytest.raises(R.KappaTooLarge):
            R.coupled_step_distribution(K_EXAMPLE, -1, 0.45, D_E1)
        with pytest.raises(R.KappaTooLarge):
            R.coupled_step_distribution(K_EXAMPLE, -1, 1.2, D_E1)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.05, 0.95))
def test_marginal_identity_random_kernels(seed, frac):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 4))
    ell = tuple(int(c) for c in rng.integers(-2, 3, size=d))
    if all(c == 0 for c in ell):
        ell = (1,) + ell[1:]
    direction = R.make_direction(ell, 0.0)
    probs = rng.dirichlet(np.ones(2 * d) * 2.0)
    k = R.TransitionKernel(probs)
    codes = direction.step_codes()
    kappa = frac * min(float(probs[codes].min()), 1.0 / len(codes)) * 0.999
    if kappa <= 0:
        return
    q0 = 1 - kappa * len(codes)
    mix = q0 * R.coupled_step_distribution(k, -1, kappa, direction).probs
    for c in codes:
        mix = mix + kappa * R.coupled_step_distribution(k, int(c), kappa, direction).probs
    assert np.abs(mix - probs).sum() <= 1e-12


class TestEpsilonSequence:
    def test_frequencies(self):
        d = R.make_direction((1, 1), 0.0)
        eps = R.EpsilonSequence(0.15, d, seed=5)
        marks = eps.marks(200_00)
        n = marks.size
        for code in d.step_codes():
            p_hat = float(np.mean(marks == code))
            assert abs(p_hat - 0.15) <= 3 * math.sqrt(0.15 * 0.85 / n)
        assert abs(float(np.mean(marks == -1)) - 0.7) <= 3 * math.sqrt(0.7 * 0.3 / n)

    def test_matches_simulation_marks(self):
        m = R.Homogeneous(master_seed=3, kernel=K_EXAMPLE)
        rec = R.simulate(m, D_E1, 0.1, (0, 0), 5_000, "coupled", seed=42)
        eps = R.EpsilonSequence(0.1, D_E1, seed=42)
        assert np.array_equal(eps.marks(5_000), rec.eps_marks)

    def test_invalid_kappa(self):
        with pytest.raises(R.KappaTooLarge):
            R.EpsilonSequence(0.0, D_E1, 1)
        with pytest.raises(R.KappaTooLarge):
            R.EpsilonSequence(1.0, D_E1, 1)


class TestSimulate:
    def test_near_deterministic_drift(self):
        k = R.TransitionKernel([0.97, 0.01, 0.01, 0.01])
        m = R.Homogeneous(master_seed=1, kernel=k)
        rec = R.simulate(m, D_E1, 0.005, (0, 0), 10_000, "quenched", seed=8)
        v = rec.positions[-1, 0] / 10_000
        var_step = (0.97 + 0.01) - 0.96 ** 2
        assert abs(v - 0.96) <= 3 * math.sqrt(var_step / 10_000)

    def test_one_step_law_matches_kernel(self):
        # homogeneous environment: step frequencies along one long coupled
        # path are the quenched one-step law (marginal identity)
        m = R.Homogeneous(master_seed=2, kernel=K_EXAMPLE)
        n = 1_000_000
        rec = R.simulate(m, D_E1, 0.1, (0, 0), n, "coupled", seed=3)
        steps = np.diff(rec.positions, axis=0)
        for code, e in [(0, (1, 0)), (1, (-1, 0)), (2, (0, 1)), (3, (0, -1))]:
            p = K_EXAMPLE.probs[code]
            p_hat = float(np.mean(np.all(steps == e, axis=1)))
            assert abs(p_hat - p) <= 3 * math.sqrt(p * (1 - p) / n), (code, p_hat, p)

    def test_deterministic_given_seed(self):
        m = R.Product(master_seed=4, kernels=(K_EXAMPLE, R.TransitionKernel([0.35, 0.15, 0.25, 0.25])),
                      weights=(0.5, 0.5))
        a = R.simulate(m, D_E1, 0.05, (0, 0), 2_000, "coupled", seed=7)
        b = R.simulate(m, D_E1, 0.05, (0, 0), 2_000, "coupled", seed=7)
        assert np.array_equal(a.positions, b.positions)
        assert np.array_equal(a.eps_marks, b.eps_marks)
        c = R.simulate(m, D_E1, 0.05, (0, 0), 2_000, "coupled", seed=8)
        assert not np.array_equal(a.positions, c.positions)

    def test_quenched_has_no_marks(self):
        m = R.Homogeneous(master_seed=1, kernel=K_EXAMPLE)
        rec = R.simulate(m, D_E1, 0.1, (0, 0), 100, "quenched", seed=1)
        assert rec.eps_marks.size == 0
        assert not rec.coupled

    def test_kappa_too_large_rejected(self):
        m = R.Homogeneous(master_seed=1, kernel=K_EXAMPLE)
        with pytest.raises(R.KappaTooLarge):
            R.simulate(m, D_E1, 0.45, (0, 0), 100, "coupled", seed=1)

    def test_start_point_respected(self):
        m = R.Homogeneous(master_seed=1, kernel=K_EXAMPLE)
        rec = R.simulate(m, D_E1, 0.1, (5, -3), 50, "coupled", seed=2)
        assert rec.start == (5, -3)
        assert rec.positions[0].tolist() == [5, -3]


def test_nearest_neighbor_and_mark_consistency():
    """Every simulated path has unit steps, and a nonzero mark forces its step."""
    rng = np.random.default_rng(11)
    for _ in range(1_000):
        d = int(rng.integers(1, 4))
        ell = tuple(int(c) for c in rng.integers(-2, 3, size=d))
        if all(c == 0 for c in ell):
            ell = (1,) + ell[1:]
        direction = R.make_direction(ell, 0.0)
        probs = rng.dirichlet(np.ones(2 * d) * 3.0)
        k = R.TransitionKernel(probs)
        codes = direction.step_codes()
        kappa = 0.5 * min(float(probs[codes].min()), 1.0 / len(codes))
        if kappa <= 1e-6:
            continue
        m = R.Homogeneous(master_seed=int(rng.integers(1 << 30)), kernel=k)
        rec = R.simulate(m, direction, kappa, (0,) * d, 64, "coupled",
                         seed=int(rng.integers(1 << 30)))
        steps = np.diff(rec.positions, axis=0)
        assert np.all(np.abs(steps).sum(axis=1) == 1)
        units = unit_steps(d)
        for t, mark in enumerate(rec.eps_marks):
            if mark >= 0:
                assert np.array_equal(steps[t], units[mark])


def test_ladder_windows_force_displacement_and_cone():
    """Wherever the marks contain the repeated ladder block, the path jumps by
    (L/|ell|_1) ell and stays in the cone."""
    direction = R.make_direction((1, 1), 0.1)
    k = R.TransitionKernel([0.3, 0.2, 0.3, 0.2])
    m = R.Homogeneous(master_seed=6, kernel=k)
    kappa = 0.15
    rec = R.simulate(m, direction, kappa, (0, 0), 50_000, "coupled", seed=13)
    pat = direction.ladder_codes()
    L = 2 * direction.ell_l1  # two ladder repetitions
    want = np.tile(pat, 2)
    found = 0
    for n in range(L, rec.horizon + 1):
        if np.array_equal(rec.eps_marks[n - L:n], want):
            found += 1
            jump = rec.positions[n] - rec.positions[n - L]
            assert jump.tolist() == [2, 2]
            cone = Cone(tuple(rec.positions[n - L]), direction, 0.1)
            for t in range(n - L, n + 1):
                assert cone_contains(cone, rec.positions[t])
    assert found >= 3


def test_modified_kernel_positive_on_ladder_under_a4():
    """For ell = e1 with delta > 2 kappa, the zero-mark kernel keeps strictly
    positive weight on the ladder step."""
    rng = np.random.default_rng(23)
    for _ in range(300):
        delta = float(rng.uniform(0.05, 0.6))
        kappa = float(rng.uniform(0.01, delta / 2 * 0.99))
        p_minus = float(rng.uniform(0.01, (1 - delta) / 2))
        p_plus = p_minus + delta + float(rng.uniform(0, 1 - delta - 2 * p_minus)) * 0.5
        lat = 1.0 - p_plus - p_minus
        k = R.TransitionKernel([p_plus, p_minus, lat / 2, lat / 2])
        assert R.local_drift(k)[0] >= delta - 1e-12
        out = R.coupled_step_distribution(k, -1, kappa, D_E1)
        assert out.probs[0] > 0


class TestExitTime:
    def test_singleton_region(self):
        m = R.Homogeneous(master_seed=1, kernel=K_EXAMPLE)
        rec = R.simulate(m, D_E1, 0.1, (0, 0), 100, "coupled", seed=4)
        assert R.exit_time(rec, lambda x: bool(np.all(x == 0))) == 1

    def test_halfspace_replay_oracle(self):
        m = R.Homogeneous(master_seed=1, kernel=K_EXAMPLE)
        rec = R.simulate(m, D_E1, 0.1, (0, 0), 2_000, "coupled", seed=5)
        t = R.exit_time(rec, lambda x: x[0] < 5)
        # replay: first index with x-coordinate >= 5
        expect = int(np.argmax(rec.positions[:, 0] >= 5))
        assert rec.positions[t, 0] >= 5
        assert t == expect

    def test_not_exited(self):
        m = R.Homogeneous(master_seed=1, kernel=K_EXAMPLE)
        rec = R.simulate(m, D_E1, 0.1, (0, 0), 50, "coupled", seed=6)
        assert R.exit_time(rec, lambda x: True) is None
