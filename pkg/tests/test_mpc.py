import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from collspins.liouville import (
    PAULI,
    BlochState,
    bloch_components,
    density_at,
    evolve_master,
    kron_all,
    master_rhs,
    pair_correlations,
    product_density,
)
from collspins.meanfield import evolve_meanfield, product_state
from collspins.model import CouplingMatrices, SpinSystem, chain, coupling_matrices, cubic_lattice
from collspins.mpc import (
    MPCRHS,
    MPCState,
    cumulant3,
    evolve_mpc,
    mpc_from_product,
    mpc_rhs,
    mpc_state_at,
    n_pairs,
    pair_index,
    state_size,
)
from collspins.odeint import IntegratorConfig

SIG = [np.eye(2), PAULI["x"], PAULI["y"], PAULI["z"]]


def _op(n, facs):
    return kron_all([facs.get(i, np.eye(2)) for i in range(n)])


def _heisenberg_generator(system, obs):
    """Adjoint Lindblad generator applied to a full-space observable."""
    n = system.n
    c = coupling_matrices(system)
    sm = [_op(n, {i: PAULI["-"]}) for i in range(n)]
    sp = [m.conj().T for m in sm]
    h = sum(c.omega[i, j] * sp[i] @ sm[j] for i in range(n) for j in range(n) if i != j)
    out = 1j * (h @ obs - obs @ h)
    for i in range(n):
        for j in range(n):
            a = sp[i] @ sm[j]
            out = out + c.gammam[i, j] * (sp[i] @ obs @ sm[j] - 0.5 * (a @ obs + obs @ a))
    return out


def _closed_expectation(state, string):
    """Expectation of a Pauli string with at most three non-identity factors, cumulant-closed."""
    s = state.singles.bloch()
    sites = [(i, a - 1) for i, a in enumerate(string) if a]
    corr = lambda p, q: state.corr(p[0], q[0])[p[1], q[1]]
    if not sites:
        return 1.0
    if len(sites) == 1:
        return s[sites[0]]
    if len(sites) == 2:
        return corr(*sites)
    assert len(sites) == 3, "generator produced a four-body string"
    p, q, r = sites
    return cumulant3((s[p], s[q], s[r]), (corr(q, r), corr(p, r), corr(p, q)))


def _oracle_rhs(system, state):
    """Derivative of every stored quantity from Pauli decomposition of the exact generator."""
    n = system.n
    strings = list(itertools.product(range(4), repeat=n))
    mats = {st_: kron_all([SIG[a] for a in st_]) for st_ in strings}

    def deriv(obs):
        g = _heisenberg_generator(system, obs)
        total = 0.0
        for st_, m in mats.items():
            coef = np.trace(m @ g) / 2**n
            if abs(coef) > 1e-15:
                total += coef * _closed_expectation(state, st_)
        assert abs(np.imag(total)) < 1e-12
        return np.real(total)

    singles = np.array([[deriv(_op(n, {k: SIG[a + 1]})) for a in range(3)] for k in range(n)])
    pairs = np.array(
        [
            [[deriv(_op(n, {k: SIG[a + 1], l: SIG[b + 1]})) for b in range(3)] for a in range(3)]
            for k in range(n)
            for l in range(k + 1, n)
        ]
    )
    return singles, pairs


def _random_state(rng, n, noise=0.1):
    st_ = mpc_from_product([BlochState(rng.uniform(0, np.pi), rng.uniform(0, 2 * np.pi)) for _ in range(n)])
    st_.pairs += noise * rng.normal(size=st_.pairs.shape)
    return st_


class TestState:
    def test_layout(self):
        assert n_pairs(4) == 6 and state_size(4) == 12 + 54
        idx = [pair_index(5, k, l) for k in range(5) for l in range(k + 1, 5)]
        assert idx == list(range(10))

    def test_product_examples(self):
        s = mpc_from_product([BlochState(np.pi / 2)] * 3)
        expect = np.zeros((3, 3))
        expect[0, 0] = 1.0
        assert np.allclose(s.corr(0, 2), expect, atol=1e-15)
        s = mpc_from_product([BlochState(0.0)] * 2)
        assert s.corr(0, 1)[2, 2] == 1.0 and np.abs(s.corr(0, 1)).sum() == 1.0
        s = mpc_from_product([BlochState(np.pi / 3)] * 2)
        assert s.corr(0, 1)[0, 2] == pytest.approx(np.sin(np.pi / 3) * np.cos(np.pi / 3))

    def test_transpose_accessor(self, rng):
        s = _random_state(rng, 4)
        for k in range(4):
            for l in range(4):
                if k != l:
                    assert np.array_equal(s.corr(l, k), s.corr(k, l).T)
        full = s.full()
        assert np.array_equal(full, full.transpose(1, 0, 3, 2))
        with pytest.raises(ValueError):
            s.corr(1, 1)

    def test_vector_round_trip(self, rng):
        s = _random_state(rng, 3)
        back = MPCState.from_vector(s.to_vector(), 3)
        assert np.array_equal(back.to_vector(), s.to_vector())
        with pytest.raises(ValueError):
            MPCState.from_vector(np.zeros(10), 3)

    def test_from_product_state(self):
        ps = product_state([BlochState(1.0)] * 2)
        assert np.array_equal(mpc_from_product(ps).to_vector(), mpc_from_product([BlochState(1.0)] * 2).to_vector())


class TestCumulant:
    def test_examples(self):
        assert cumulant3((0, 0, 0), (0.4, -0.2, 0.9)) == 0.0
        a, b, c = 0.3, -0.7, 0.5
        assert cumulant3((a, b, c), (b * c, a * c, a * b)) == pytest.approx(a * b * c, abs=1e-15)
        assert cumulant3((1, 0.5, -0.2), (0.1, 0.2, 0.3)) == pytest.approx(0.34, abs=1e-15)


class TestRHS:
    @pytest.mark.parametrize("seed", [0, 1])
    def test_matches_closed_heisenberg_generator(self, seed):
        rng = np.random.default_rng(seed)
        n = 4
        pos = chain(n, 0.23) + rng.normal(scale=0.05, size=(n, 3))
        system = SpinSystem(pos, dipole=[0.3, 0.4, np.sqrt(0.75)])
        state = _random_state(rng, n)
        singles, pairs = _oracle_rhs(system, state)
        got = mpc_rhs(system, state)
        assert np.abs(got.singles.bloch() - singles).max() < 1e-12
        assert np.abs(got.pairs - pairs).max() < 1e-12

    def test_ground_state_fixed_point(self):
        system = SpinSystem(cubic_lattice(2, 2, 1, 0.2))
        d = mpc_rhs(system, mpc_from_product([BlochState(0.0)] * 4))
        assert np.abs(d.to_vector()).max() < 1e-15

    @given(st.integers(2, 5), st.integers(0, 2**31))
    def test_exact_at_product_states(self, n, seed):
        rng = np.random.default_rng(seed)
        system = SpinSystem(chain(n, 0.3) + rng.normal(scale=0.04, size=(n, 3)), dipole=[0.6, 0.0, 0.8])
        blochs = [BlochState(rng.uniform(0, np.pi), rng.uniform(0, 2 * np.pi)) for _ in range(n)]
        drho = master_rhs(system, product_density(blochs))
        d = mpc_rhs(system, mpc_from_product(blochs))
        assert np.abs(d.singles.bloch() - bloch_components(drho)).max() < 1e-10
        assert np.abs(d.full() - pair_correlations(drho)).max() < 1e-10

    def test_single_spin_reduces_to_decay(self):
        system = SpinSystem(chain(1, 1.0))
        d = mpc_rhs(system, mpc_from_product([BlochState(np.pi / 2)]))
        assert d.singles.bloch() == pytest.approx(np.array([[-0.5, 0.0, 1.0]]), abs=1e-15)
        assert d.pairs.shape == (0, 3, 3)

    def test_size_errors(self):
        system = SpinSystem(chain(3, 1.0))
        with pytest.raises(ValueError):
            mpc_rhs(system, mpc_from_product([BlochState(0.0)] * 2))
        with pytest.raises(ValueError):
            MPCRHS(system)(np.zeros(5))


class TestEvolution:
    @pytest.mark.parametrize("d", [0.15, 1.0])
    def test_two_spins_exact(self, d):
        system = SpinSystem(chain(2, d))
        t = np.linspace(0, 5, 26)
        blochs = [BlochState(np.pi / 4)] * 2
        a = evolve_mpc(system, mpc_from_product(blochs), t)
        b = evolve_master(system, product_density(blochs), t)
        for k in range(len(t)):
            rho = density_at(b, k)
            s = mpc_state_at(a, k)
            assert np.abs(s.singles.bloch() - bloch_components(rho)).max() < 5e-6
            assert np.abs(s.corr(0, 1) - pair_correlations(rho)[0, 1]).max() < 5e-6

    def test_chain_seven_tracks_master(self):
        system = SpinSystem(chain(7, 0.15))
        t = np.linspace(0, 5, 51)
        blochs = [BlochState(np.pi / 2)] * 7
        exact = evolve_master(system, product_density(blochs), t)
        ex = np.array([bloch_components(density_at(exact, k))[3] for k in range(len(t))])
        tr = evolve_mpc(system, mpc_from_product(blochs), t)
        err = 0.5 * np.linalg.norm(tr.states[:, [3, 10, 17]] - ex, axis=1).max()
        assert err < 0.02

    def test_cube_subradiance(self):
        system = SpinSystem(cubic_lattice(2, 2, 2, 0.6), dipole=[0, 0, 1])
        blochs = [BlochState(np.pi / 2)] * 8
        t = [0.0, 2.0]
        mpc = evolve_mpc(system, mpc_from_product(blochs), t)
        ind = evolve_meanfield(system, product_state(blochs), t, mode="independent")
        assert np.all(mpc.states[-1, 16:24] < ind.states[-1, 16:24])

    def test_symmetry_preserved(self):
        # square plaquette with dipole along the normal: all nearest-neighbour pairs equivalent
        system = SpinSystem(cubic_lattice(2, 2, 1, 0.3), dipole=[0, 0, 1])
        tr = evolve_mpc(system, mpc_from_product([BlochState(1.1)] * 4), np.linspace(0, 3, 7))
        for k in range(len(tr)):
            s = mpc_state_at(tr, k)
            nn = [s.corr(0, 1), s.corr(0, 2), s.corr(1, 3), s.corr(2, 3)]
            for blk in nn[1:]:
                assert np.abs(blk - nn[0]).max() < 1e-8
            assert np.abs(s.corr(0, 3) - s.corr(1, 2)).max() < 1e-8

    def test_zero_interaction_limit(self):
        system = SpinSystem(chain(4, 0.3))
        free = CouplingMatrices(np.zeros((4, 4)), np.eye(4))
        blochs = [BlochState(0.4 * k + 0.3, 0.2 * k) for k in range(4)]
        t = np.linspace(0, 3, 7)
        # tight tolerances: the two solvers take different step sequences
        cfg = IntegratorConfig(rtol=1e-11, atol=1e-13)
        tr = evolve_mpc(system, mpc_from_product(blochs), t, cfg, couplings=free)
        ind = evolve_meanfield(system, product_state(blochs), t, cfg, mode="independent")
        assert np.abs(tr.states[:, :12] - ind.states).max() < 1e-9
        for k in range(len(t)):
            s = mpc_state_at(tr, k)
            b = s.singles.bloch()
            assert np.abs(s.full() - np.einsum("ka,lb->klab", b, b) * (1 - np.eye(4))[:, :, None, None]).max() < 1e-8

    def test_meta(self):
        tr = evolve_mpc(SpinSystem(chain(2, 1.0)), mpc_from_product([BlochState(0.5)] * 2), [0, 1])
        assert tr.method == "mpc" and tr.meta["n"] == 2
