import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from conftest import random_state
from thermix.dense import DimensionError, thermal_energy
from thermix.hamiltonian import LocalTerm, PAULI_X, PAULI_Z, assemble_dense, custom, tfim
from thermix.metts import (BASES, ChainConfig, CollapseError, NO_CONVERGENCE_CAVEAT,
                           collapse_to_product, estimate_from_values, estimate_observable,
                           integrated_autocorrelation_time, merge_ensembles, metts_step,
                           run_chain, run_walkers, verify_metts_identity, walker_rng)
from thermix.mps import MatrixProductState, mps_from_dense, norm, product_state, to_dense

BELL = np.array([1, 0, 0, 1]) / np.sqrt(2)


def zz_chain(n):
    return custom(n, [LocalTerm(k, 2, -np.kron(PAULI_Z, PAULI_Z)) for k in range(n - 1)])


class TestCollapse:
    def test_product_state_deterministic(self, rng):
        for _ in range(20):
            bits, p = collapse_to_product(product_state([0, 1]), "Z", rng)
            assert bits == (0, 1) and p == 1.0

    def test_plus_state(self, rng):
        plus = product_state([np.array([1, 1]) / np.sqrt(2)])
        draws = [collapse_to_product(plus, "Z", rng) for _ in range(200)]
        assert {b for b, _ in draws} == {(0,), (1,)}
        assert all(p == pytest.approx(0.5) for _, p in draws)
        assert collapse_to_product(plus, "X", rng)[0] == (0,)

    def test_bell_never_mixed(self, rng):
        psi = mps_from_dense(BELL)
        seen = {collapse_to_product(psi, "Z", rng)[0] for _ in range(200)}
        assert seen == {(0, 0), (1, 1)}

    def test_probability_is_born_weight(self, rng):
        v = random_state(2 ** 5, rng)
        psi = mps_from_dense(v)
        for _ in range(10):
            bits, p = collapse_to_product(psi, "Z", rng)
            idx = int("".join(map(str, bits)), 2)
            assert_allclose(p, abs(v[idx]) ** 2, rtol=1e-10)

    def test_born_rule_frequencies(self):
        rng = np.random.default_rng(7)
        v = random_state(2 ** 3, rng)
        psi = mps_from_dense(v)
        draws = 100_000
        counts = np.zeros(8)
        for _ in range(draws):
            bits, _ = collapse_to_product(psi, "Z", rng)
            counts[int("".join(map(str, bits)), 2)] += 1
        p = np.abs(v) ** 2
        sigma = np.sqrt(draws * p * (1 - p))
        assert np.all(np.abs(counts - draws * p) <= 4 * sigma)

    def test_zero_state_raises(self, rng):
        zero = MatrixProductState((np.zeros((1, 2, 1)), np.ones((1, 2, 1))))
        with pytest.raises(CollapseError):
            collapse_to_product(zero, "Z", rng)


class TestStep:
    def test_infinite_temperature_step(self):
        cfg = ChainConfig(beta=0.0, steps=2, burn_in=0)
        rng = walker_rng(0, 0)
        counts = {}
        for _ in range(400):
            sample, nxt = metts_step((0, 1, 1), "Z", cfg, tfim(3), rng, step=0)
            assert_allclose(to_dense(sample.state), to_dense(product_state([0, 1, 1])))
            counts[nxt] = counts.get(nxt, 0) + 1
        assert sample.measured_basis == "X"
        assert len(counts) == 8
        assert min(counts.values()) > 20

    def test_sample_is_normalized_thermal_state(self):
        h = tfim(4)
        cfg = ChainConfig(beta=1.0, steps=2, burn_in=0, dtau=0.01)
        sample, _ = metts_step((0, 0, 1, 0), "Z", cfg, h, walker_rng(1, 0))
        hm = assemble_dense(h)
        w, v = np.linalg.eigh(hm)
        e = np.zeros(16)
        e[0b0010] = 1
        exact = (v * np.exp(-0.5 * w)) @ v.conj().T @ e
        assert_allclose(norm(sample.state), 1.0, rtol=1e-12)
        fid = abs(np.vdot(to_dense(sample.state), exact)) ** 2 / np.vdot(exact, exact).real
        assert fid > 1 - 1e-6
        assert_allclose(sample.log_weight, np.log(np.vdot(exact, exact).real), atol=1e-3)


class TestChain:
    def test_single_sample_ensemble(self):
        ens = run_chain(ChainConfig(beta=1.0, steps=4, burn_in=3, seed=3), tfim(4))
        assert len(ens) == 1 and ens.weights[0] == 1.0
        assert ens.metadata["caveat"] == NO_CONVERGENCE_CAVEAT

    def test_uniform_weights_and_normalized_states(self):
        ens = run_chain(ChainConfig(beta=1.0, steps=12, burn_in=2, seed=3), tfim(4))
        ens.validate()
        assert len(ens.metadata["records"]) == 12

    def test_commuting_chain_stays_in_z_basis(self):
        # with fixed-Z collapses a diagonal Hamiltonian never leaves the initial string
        cfg = ChainConfig(beta=1.0, steps=8, burn_in=0, schedule="fixed-z", seed=5)
        ens = run_chain(cfg, zz_chain(5))
        strings = {r["basis_string"] for r in ens.metadata["records"]}
        assert len(strings) == 1

    def test_infinite_temperature_energy(self):
        h = tfim(5, 1.0, 0.5)
        cfg = ChainConfig(beta=0.0, steps=410, burn_in=10, seed=11)
        ens = run_walkers(cfg, h, 2, workers=1)
        est = estimate_observable(ens, h)
        assert abs(est.mean - 0.0) <= 3 * est.stderr

    def test_small_chain_energy_vs_dense(self):
        h = tfim(6)
        cfg = ChainConfig(beta=1.0, steps=330, burn_in=10, dmax=16, seed=21)
        ens = run_walkers(cfg, h, 2, workers=1)
        est = estimate_observable(ens, h)
        assert abs(est.mean - thermal_energy(h, 1.0)) <= 3 * est.stderr

    def test_deterministic_across_workers(self):
        cfg = ChainConfig(beta=0.5, steps=6, burn_in=1, seed=9)
        a = run_walkers(cfg, tfim(4), 3, workers=1)
        b = run_walkers(cfg, tfim(4), 3, workers=2)
        assert_allclose(a.metadata["energies"], b.metadata["energies"], rtol=0, atol=0)
        assert a.metadata["records"] == b.metadata["records"]

    def test_merge_order_independent(self):
        cfg = ChainConfig(beta=0.5, steps=5, burn_in=1, seed=9)
        parts = [run_chain(cfg, tfim(3), w) for w in range(3)]
        m1 = merge_ensembles(parts)
        m2 = merge_ensembles(parts[::-1])
        assert_allclose(m1.metadata["energies"], m2.metadata["energies"])
        assert list(m1.metadata["walkers"]) == [0] * 4 + [1] * 4 + [2] * 4

    @pytest.mark.parametrize("kwargs", [dict(beta=-1.0, steps=3), dict(beta=1.0, steps=3, burn_in=3),
                                        dict(beta=1.0, steps=3, schedule="y"),
                                        dict(beta=1.0, steps=3, dtau=0.0)])
    def test_invalid_config(self, kwargs):
        with pytest.raises(ValueError):
            run_chain(ChainConfig(**kwargs), tfim(3))

    def test_schedule_autocorrelation_recorded(self):
        # reported for comparison only, the ordering is not asserted
        h = tfim(6)
        taus = {}
        for schedule in ("alternating", "fixed-z"):
            cfg = ChainConfig(beta=1.0, steps=120, burn_in=10, dmax=16, schedule=schedule, seed=4)
            ens = run_chain(cfg, h)
            taus[schedule] = integrated_autocorrelation_time(ens.metadata["energies"])
        assert all(t is None or t > 0 for t in taus.values())


class TestIdentity:
    def test_zero_hamiltonian(self):
        assert verify_metts_identity(custom(3, []), 1.0) <= 1e-14

    def test_diagonal_two_sites(self):
        assert verify_metts_identity(zz_chain(2), 1.0) <= 1e-12

    def test_tfim_six(self):
        assert verify_metts_identity(tfim(6), 1.0) <= 1e-10

    def test_size_limit(self):
        with pytest.raises(DimensionError):
            verify_metts_identity(tfim(7), 1.0)


class TestEstimator:
    def test_constant(self):
        est = estimate_from_values(np.full(50, 2.5))
        assert est.mean == 2.5 and est.stderr == 0.0 and est.tau is None

    def test_identity_operator(self):
        ens = run_chain(ChainConfig(beta=1.0, steps=6, burn_in=1, seed=1), tfim(3))
        est = estimate_observable(ens, np.eye(2), [1])
        assert_allclose(est.mean, 1.0, rtol=1e-12)
        assert est.stderr == 0.0

    def test_single_sample_flagged(self):
        est = estimate_from_values(np.array([0.3]))
        assert est.stderr is None and est.notes

    def test_iid_stderr(self):
        x = np.random.default_rng(0).normal(size=4000)
        est = estimate_from_values(x)
        assert_allclose(est.stderr, 1 / np.sqrt(4000), rtol=0.35)
        assert_allclose(est.tau, 1.0, atol=0.3)

    def test_correlated_series_tau(self):
        r = np.random.default_rng(1)
        x = np.zeros(20000)
        for k in range(1, len(x)):
            x[k] = 0.8 * x[k - 1] + r.normal()
        # AR(1) with phi = 0.8 has tau = (1 + phi) / (1 - phi) = 9
        assert_allclose(integrated_autocorrelation_time(x), 9.0, rtol=0.2)

    def test_weighted(self):
        est = estimate_from_values(np.array([0.0, 1.0]), np.array([0.25, 0.75]))
        assert_allclose(est.mean, 0.75)

    def test_window_required(self):
        ens = run_chain(ChainConfig(beta=1.0, steps=3, burn_in=1), tfim(3))
        with pytest.raises(ValueError):
            estimate_observable(ens, PAULI_X)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_x_basis_collapse_probability(seed):
    r = np.random.default_rng(seed)
    v = random_state(8, r)
    bits, p = collapse_to_product(mps_from_dense(v), "X", r)
    h3 = np.kron(np.kron(BASES["X"], BASES["X"]), BASES["X"])
    idx = int("".join(map(str, bits)), 2)
    assert_allclose(p, abs(np.vdot(h3[:, idx], v)) ** 2, rtol=1e-10)
