import numpy as np
import pytest

from mcfkit import certify
from mcfkit.sdp import solve_guessing_sdp


def random_instance(rng, d=3, n_inputs=3):
    """Random pure states measured by a random rank-1 projective POVM."""
    z = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    q, r = np.linalg.qr(z)
    U = q * (np.diagonal(r) / np.abs(np.diagonal(r)))
    povm = [np.outer(U[:, a], U[:, a].conj()) for a in range(d)]
    states = []
    for _ in range(n_inputs):
        psi = rng.standard_normal(d) + 1j * rng.standard_normal(d)
        psi /= np.linalg.norm(psi)
        states.append(np.outer(psi, psi.conj()))
    probs = np.array(
        [[np.trace(E @ rho).real for E in povm] for rho in states]
    )
    probs = np.clip(probs, 0.0, None)
    probs /= probs.sum(axis=1, keepdims=True)
    return states, probs


def test_ideal_guessing_probability():
    solution = certify.guessing_probability_ideal()
    assert solution.value == pytest.approx(0.25, abs=1e-4)
    assert solution.duality_gap <= 1e-6
    assert solution.residuals["min_povm_eigenvalue"] > -1e-6
    assert solution.residuals["povm_identity_deviation"] < 1e-6
    assert solution.residuals["q_normalisation"] < 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_guessing_probability_bounds_and_gap(seed):
    rng = np.random.default_rng(seed)
    states, probs = random_instance(rng)
    solution = solve_guessing_sdp(states, 0, (3,), probs=probs)
    assert solution.value >= probs[0].max() - 1e-6
    assert solution.value >= 1.0 / probs.shape[1] - 1e-6
    assert solution.value <= 1.0 + 1e-6
    assert solution.duality_gap <= 1e-6


@pytest.mark.parametrize("seed", range(3))
def test_monotonicity_under_added_constraints(seed):
    # constraining fewer inputs can only help the adversary
    rng = np.random.default_rng(100 + seed)
    states, probs = random_instance(rng)
    full = solve_guessing_sdp(states, 0, (3,), probs=probs)
    reduced = solve_guessing_sdp(states[:2], 0, (3,), probs=probs[:2])
    assert reduced.value >= full.value - 1e-6


@pytest.mark.parametrize("seed", range(3))
def test_finite_statistics_at_least_exact(seed):
    rng = np.random.default_rng(200 + seed)
    states, probs = random_instance(rng)
    exact = solve_guessing_sdp(states, 0, (3,), probs=probs)
    finite = solve_guessing_sdp(
        states, 0, (3,), freqs=probs, halfwidths=np.full(len(states), 0.01)
    )
    assert finite.value >= exact.value - 1e-6
    # shrinking the intervals approaches the exact value from above
    tight = solve_guessing_sdp(
        states, 0, (3,), freqs=probs, halfwidths=np.full(len(states), 1e-6)
    )
    assert exact.value - 1e-5 <= tight.value <= finite.value + 1e-6


def test_halfwidth_monotonicity():
    rng = np.random.default_rng(42)
    states, probs = random_instance(rng)
    wide = solve_guessing_sdp(
        states, 0, (3,), freqs=probs, halfwidths=np.full(3, 0.05)
    )
    narrow = solve_guessing_sdp(
        states, 0, (3,), freqs=probs, halfwidths=np.full(3, 0.005)
    )
    assert wide.value >= narrow.value - 1e-6


def test_block_diagonal_matches_full_space():
    # restricting POVM variables to the block structure of the states
    # does not change the optimum
    rng = np.random.default_rng(7)
    states, probs = random_instance(rng, d=2)
    padded = []
    for rho in states:
        big = np.zeros((4, 4), dtype=complex)
        big[:2, :2] = 0.7 * rho
        big[2:, 2:] = 0.3 * rho
        padded.append(big)
    blocked = solve_guessing_sdp(padded, 0, (2, 2), probs=probs)
    full = solve_guessing_sdp(padded, 0, (4,), probs=probs)
    assert blocked.value == pytest.approx(full.value, abs=1e-5)


def test_infeasible_statistics_raise():
    rng = np.random.default_rng(3)
    states, probs = random_instance(rng)
    bad = probs.copy()
    bad[0] = [1.0, 0.0, 0.0]
    bad[1] = [1.0, 0.0, 0.0]
    # two distinct non-orthogonal pure states cannot both be identified
    # with certainty
    with pytest.raises(Exception):
        solve_guessing_sdp(states, 0, (3,), probs=bad)
