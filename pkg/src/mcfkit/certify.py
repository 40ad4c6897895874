"""Randomness certification for the 4-dimensional MDI protocol.

The preparation device emits five states: four logical basis states and
one mutually unbiased state. With a weak coherent source post-selected
on at least one detected photon, each input is a mixture of a
single-photon pure state (4-dim sector) and a two-photon pure state
(10-dim sector), so the certification Hilbert space has dimension 14.

Outcome alphabet (10 symbols, fixed order):
    0..3   single click at detector D_a
    4..9   coincidence D_i D_j for (i,j) in (0,1),(0,2),(0,3),(1,2),(1,3),(2,3)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linops import TwoPhotonFockState, two_photon_basis
from .sdp import DEFAULT_GAP_TOL, SdpSolution, solve_guessing_sdp

N_MODES = 4
N_INPUTS = 5
N_OUTCOMES = 10

COINCIDENCE_PAIRS = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
OUTCOME_LABELS = tuple(
    ["D%d" % a for a in range(4)] + ["D%dD%d" % p for p in COINCIDENCE_PAIRS]
)

MUB_STATE = np.array([1, -1, 1, 1], dtype=complex) / 2.0

# Two-photon companion of the unbiased input as printed in the source
# analysis: equal weight on the four doubly occupied kets and weight 2
# (alternating sign) on the six pair kets, norm 1/sqrt(28).
_REPORTED_PAIR_SIGNS = {
    (2, 3): -2.0,
    (1, 3): 2.0,
    (1, 2): -2.0,
    (0, 3): 2.0,
    (0, 2): -2.0,
    (0, 1): 2.0,
}


def truncated_poisson_weights(mu):
    """(p(1), p(2)) for a Poisson source truncated at two photons and
    post-selected on at least one photon."""
    if not mu > 0:
        raise ValueError("mean photon number must be positive")
    p1 = 1.0 / (1.0 + mu / 2.0)
    return p1, 1.0 - p1


def two_photon_unbiased_state(variant="reported"):
    """The two-photon sector state paired with the unbiased input.

    ``reported`` is the state quoted with the device characterization
    (pair/double amplitude ratio 2);
    ``bosonic`` is two indistinguishable photons in the unbiased mode
    (ratio sqrt(2), signs from the mode amplitudes).
    """
    basis = two_photon_basis(N_MODES)
    if variant == "bosonic":
        return TwoPhotonFockState.from_single_mode_state(MUB_STATE)
    if variant != "reported":
        raise ValueError("variant must be 'reported' or 'bosonic'")
    amps = np.zeros(len(basis), dtype=complex)
    for i in range(N_MODES):
        occ = [0] * N_MODES
        occ[i] = 2
        amps[basis.index(tuple(occ))] = 1.0
    for (i, j), w in _REPORTED_PAIR_SIGNS.items():
        occ = [0] * N_MODES
        occ[i] = occ[j] = 1
        amps[basis.index(tuple(occ))] = w
    return TwoPhotonFockState(N_MODES, amps / np.linalg.norm(amps))


@dataclass(frozen=True)
class PreparationEnsemble:
    """Density operators rho_x on the truncated <=2 photon space."""

    mu: float
    p1: float
    p2: float
    states: tuple  # five (14, 14) density matrices
    block_dims: tuple = (4, 10)
    variant: str = "reported"

    @property
    def dim(self):
        return sum(self.block_dims)

    def validate(self, tol=1e-10):
        for rho in self.states:
            if abs(np.trace(rho).real - 1.0) > tol:
                raise ValueError("state trace deviates from 1")
            if np.linalg.eigvalsh(rho).min() < -tol:
                raise ValueError("state has a negative eigenvalue")
        if abs(self.p1 + self.p2 - 1.0) > tol:
            raise ValueError("photon-number weights do not sum to 1")
        return self


def single_photon_inputs():
    """The five single-photon input states in the logical basis."""
    states = [np.eye(N_MODES, dtype=complex)[x] for x in range(N_MODES)]
    states.append(MUB_STATE.copy())
    return states


def build_input_states(mu, variant="reported"):
    """PreparationEnsemble for mean photon number ``mu``."""
    p1, p2 = truncated_poisson_weights(mu)
    basis = two_photon_basis(N_MODES)
    singles = single_photon_inputs()
    rhos = []
    for x in range(N_INPUTS):
        one = np.zeros(14, dtype=complex)
        one[:4] = singles[x]
        if x < N_MODES:
            occ = [0] * N_MODES
            occ[x] = 2
            amps = np.zeros(len(basis), dtype=complex)
            amps[basis.index(tuple(occ))] = 1.0
            two = TwoPhotonFockState(N_MODES, amps)
        else:
            two = two_photon_unbiased_state(variant)
        twovec = np.zeros(14, dtype=complex)
        twovec[4:] = two.amplitudes
        rho = p1 * np.outer(one, one.conj()) + p2 * np.outer(twovec, twovec.conj())
        rhos.append(rho)
    return PreparationEnsemble(
        mu=mu, p1=p1, p2=p2, states=tuple(rhos), variant=variant
    ).validate()


@dataclass(frozen=True)
class FrequencyTable:
    """Observed outcome frequencies per input with per-input round counts."""

    frequencies: np.ndarray  # (n_inputs, n_outcomes), rows sum to 1
    rounds: np.ndarray  # (n_inputs,) rounds in which each input was sent

    def __post_init__(self):
        freqs = np.asarray(self.frequencies, dtype=float)
        rounds = np.asarray(self.rounds, dtype=float)
        if freqs.ndim != 2:
            raise ValueError("frequencies must be a 2-d table")
        if rounds.shape != (freqs.shape[0],) or np.any(rounds < 1):
            raise ValueError("need one round count >= 1 per input")
        if np.max(np.abs(freqs.sum(axis=1) - 1.0)) > 1e-9:
            raise ValueError("frequency rows must sum to 1")
        object.__setattr__(self, "frequencies", freqs)
        object.__setattr__(self, "rounds", rounds)

    @classmethod
    def from_counts(cls, counts, rounds=None):
        counts = np.asarray(counts, dtype=float)
        totals = counts.sum(axis=1, keepdims=True)
        if np.any(totals <= 0):
            raise ValueError("every input needs at least one observed outcome")
        return cls(counts / totals, counts.sum(axis=1) if rounds is None else rounds)


def chernoff_halfwidth(epsilon, rounds):
    """Confidence-interval radius t(eps) = sqrt(ln(1/eps) / (2 n))."""
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    rounds = np.asarray(rounds, dtype=float)
    if np.any(rounds < 1):
        raise ValueError("round counts must be >= 1")
    return np.sqrt(np.log(1.0 / epsilon) / (2.0 * rounds))


def min_entropy(guessing_probability):
    """Certified bits per round, -log2 P_g."""
    if not 0 < guessing_probability <= 1 + 1e-9:
        raise ValueError("guessing probability must lie in (0, 1]")
    return float(-np.log2(min(guessing_probability, 1.0)))


def theoretical_upper_bound(probs, target):
    """-log2 of the most likely outcome for the target input: the entropy
    an adversary betting on that outcome can never be beaten by."""
    probs = np.asarray(probs, dtype=float)
    return float(-np.log2(probs[target].max()))


def _check_solution(solution: SdpSolution, probs, target):
    best_bet = float(np.asarray(probs, dtype=float)[target].max())
    m = np.asarray(probs).shape[1]
    if solution.value < best_bet - 1e-6 or solution.value < 1.0 / m - 1e-6:
        raise AssertionError(
            "solver value %.8f below the trivial guessing bound %.8f"
            % (solution.value, max(best_bet, 1.0 / m))
        )
    return solution


def guessing_probability_exact(
    ensemble: PreparationEnsemble, probs, target, gap_tol=DEFAULT_GAP_TOL
):
    """Maximal adversarial guessing probability for exact statistics."""
    probs = np.asarray(probs, dtype=float)
    if probs.shape[0] != len(ensemble.states):
        raise ValueError("one probability row per input is required")
    if np.max(np.abs(probs.sum(axis=1) - 1.0)) > 1e-9:
        raise ValueError("probability rows must sum to 1")
    solution = solve_guessing_sdp(
        ensemble.states,
        target,
        ensemble.block_dims,
        probs=probs,
        gap_tol=gap_tol,
    )
    return _check_solution(solution, probs, target)


def guessing_probability_finite(
    ensemble: PreparationEnsemble,
    table: FrequencyTable,
    epsilon,
    target,
    gap_tol=DEFAULT_GAP_TOL,
):
    """Guessing probability from finite statistics via interval constraints."""
    if table.frequencies.shape[0] != len(ensemble.states):
        raise ValueError("one frequency row per input is required")
    halfwidths = chernoff_halfwidth(epsilon, table.rounds)
    solution = solve_guessing_sdp(
        ensemble.states,
        target,
        ensemble.block_dims,
        freqs=table.frequencies,
        halfwidths=halfwidths,
        gap_tol=gap_tol,
    )
    return _check_solution(solution, table.frequencies, target)


def ideal_single_photon_problem():
    """The lossless single-photon reference problem (d = 4, 4 outcomes).

    Basis inputs are identified deterministically and the unbiased input
    gives uniform outcomes; its certified min-entropy is the 2-bit optimum.
    """
    singles = single_photon_inputs()
    rhos = [np.outer(s, s.conj()) for s in singles]
    probs = np.zeros((N_INPUTS, 4))
    probs[:4] = np.eye(4)
    probs[4] = 0.25
    return rhos, probs


def guessing_probability_ideal(gap_tol=DEFAULT_GAP_TOL):
    """Solve the ideal d=4 problem; P_g = 1/4, i.e. two certified bits."""
    rhos, probs = ideal_single_photon_problem()
    solution = solve_guessing_sdp(rhos, 4, (4,), probs=probs, gap_tol=gap_tol)
    return _check_solution(solution, probs, 4)
