"""Complex linear algebra for path-encoded qudits.

Conventions used throughout the package:

* single-photon states are complex vectors over the N core modes,
  normalised to unit L2 norm;
* two-photon states live on the bosonic occupation basis with exactly
  two photons distributed over N modes (basis size N(N+1)/2), sorted in
  ascending lexicographic order of the occupation vectors so that file
  outputs are stable;
* matrix fidelity is F(A, B) = |Tr(A^dag B)|^2 / N^2, which equals 1 for
  B = e^{i theta} A when A is an N x N unitary.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

UNITARITY_TOL = 1e-10
NORM_TOL = 1e-12


class DimensionMismatchError(ValueError):
    """Operands have incompatible shapes."""


class SingularMatrixError(ValueError):
    """Matrix is singular or too close to singular to unitarize."""


def is_unitary(U, tol=UNITARITY_TOL):
    """True if U^dag U = I entrywise within ``tol``."""
    U = np.asarray(U, dtype=complex)
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        return False
    d = U.shape[0]
    return bool(np.max(np.abs(U.conj().T @ U - np.eye(d))) <= tol)


def assert_unitary(U, tol=UNITARITY_TOL):
    if not is_unitary(U, tol):
        raise ValueError("matrix is not unitary within tolerance %g" % tol)
    return np.asarray(U, dtype=complex)


def has_real_border(U, tol=1e-9):
    """True if the first row and column are real and non-negative."""
    U = np.asarray(U, dtype=complex)
    border = np.concatenate([U[0, :], U[1:, 0]])
    return bool(np.max(np.abs(border.imag)) <= tol and np.min(border.real) >= -tol)


def normalize_state(psi, tol=NORM_TOL):
    """Return psi as an array, checking unit norm within ``tol``."""
    psi = np.asarray(psi, dtype=complex)
    nrm = np.sum(np.abs(psi) ** 2)
    if abs(nrm - 1.0) > tol:
        raise ValueError("state is not normalised: sum |a|^2 = %.15g" % nrm)
    return psi


def symmetric_bs_4(phi):
    """4x4 symmetric multi-port beamsplitter matrix with free phase ``phi``.

    Unitary for every phi; at phi = 0 all entries are +-1/2 with a
    Hadamard-like sign pattern.
    """
    if not np.isfinite(phi):
        raise ValueError("phi must be finite")
    e = np.exp(1j * phi)
    return 0.5 * np.array(
        [
            [1, 1, 1, 1],
            [1, e, -1, -e],
            [1, -1, 1, -1],
            [1, -e, -1, e],
        ],
        dtype=complex,
    )


def matrix_fidelity(A, B):
    """|Tr(A^dag B)|^2 / N^2 for two N x N complex matrices."""
    A = np.asarray(A, dtype=complex)
    B = np.asarray(B, dtype=complex)
    if A.shape != B.shape or A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatchError(
            "fidelity needs two square matrices of equal size, got %s and %s"
            % (A.shape, B.shape)
        )
    n = A.shape[0]
    return float(np.abs(np.trace(A.conj().T @ B)) ** 2 / n**2)


def prepare_state(phases):
    """Path-qudit state (1/2) sum_k e^{i phi_k} |k> from 4 modulator phases."""
    phases = np.asarray(phases, dtype=float)
    if phases.shape != (4,) or not np.all(np.isfinite(phases)):
        raise ValueError("expected 4 finite phases")
    return 0.5 * np.exp(1j * phases)


# Sign patterns of the four measurement basis states (rows) over the four
# core modes (columns); row a is the state resolved by detector D_a.
_BASIS_SIGNS = np.array(
    [
        [1, 1, 1, 1],
        [1, 1, -1, -1],
        [1, -1, 1, -1],
        [1, -1, -1, 1],
    ],
    dtype=float,
)


def measurement_basis(phases):
    """The four orthonormal measurement states for modulator phases phi^B.

    Returns a (4, 4) array whose row a is |psi_a>; at zero phases the rows
    coincide with the rows of ``symmetric_bs_4(0)``.
    """
    phases = np.asarray(phases, dtype=float)
    if phases.shape != (4,) or not np.all(np.isfinite(phases)):
        raise ValueError("expected 4 finite phases")
    return 0.5 * _BASIS_SIGNS * np.exp(1j * phases)[None, :]


def single_photon_outcome_probs(basis, state):
    """Outcome probabilities p_a = |<psi_a|state>|^2 for a projective basis."""
    basis = np.asarray(basis, dtype=complex)
    state = np.asarray(state, dtype=complex)
    if basis.ndim != 2 or basis.shape[1] != state.shape[0]:
        raise DimensionMismatchError(
            "basis shape %s does not match state dim %d" % (basis.shape, state.shape[0])
        )
    amps = basis.conj() @ state
    return np.abs(amps) ** 2


def two_photon_basis(modes):
    """Occupation vectors with exactly two photons, ascending lexicographic."""
    occ = []
    for i in range(modes):
        for j in range(i, modes):
            n = [0] * modes
            n[i] += 1
            n[j] += 1
            occ.append(tuple(n))
    occ.sort()
    return occ


@dataclass(frozen=True)
class TwoPhotonFockState:
    """Two photons over N modes, amplitudes on the fixed occupation basis."""

    modes: int
    amplitudes: np.ndarray  # complex, length N(N+1)/2, basis = two_photon_basis(N)

    def __post_init__(self):
        basis = two_photon_basis(self.modes)
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (len(basis),):
            raise ValueError(
                "expected %d amplitudes for %d modes, got %s"
                % (len(basis), self.modes, amps.shape)
            )
        nrm = np.sum(np.abs(amps) ** 2)
        if abs(nrm - 1.0) > NORM_TOL:
            raise ValueError("two-photon state not normalised: %.15g" % nrm)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def basis(self):
        return two_photon_basis(self.modes)

    def probabilities(self):
        return np.abs(self.amplitudes) ** 2

    @classmethod
    def from_occupation(cls, occupation):
        """Basis state |n_0 n_1 ... >, e.g. (2, 0, 0, 0)."""
        occupation = tuple(int(n) for n in occupation)
        basis = two_photon_basis(len(occupation))
        amps = np.zeros(len(basis), dtype=complex)
        amps[basis.index(occupation)] = 1.0
        return cls(len(occupation), amps)

    @classmethod
    def from_single_mode_state(cls, psi):
        """Both photons in the same single-photon state psi (bosonic)."""
        psi = normalize_state(psi)
        modes = psi.shape[0]
        basis = two_photon_basis(modes)
        amps = np.empty(len(basis), dtype=complex)
        for idx, occ in enumerate(basis):
            i, j = _occupied_pair(occ)
            if i == j:
                amps[idx] = np.sqrt(2.0) * psi[i] * psi[j]
            else:
                amps[idx] = 2.0 * psi[i] * psi[j]
        amps /= np.linalg.norm(amps)
        return cls(modes, amps)


def _occupied_pair(occ):
    """Mode pair (i <= j) holding the two photons of occupation vector occ."""
    hot = [k for k, n in enumerate(occ) if n]
    if len(hot) == 1:
        return hot[0], hot[0]
    return hot[0], hot[1]


def two_photon_evolve(U, state):
    """Propagate a two-photon state through the mode unitary U.

    Uses the bosonic substitution a_k^dag -> sum_j U_{jk} a_j^dag; amplitudes
    of doubly occupied output modes carry the usual sqrt(2) factor.
    """
    U = np.asarray(U, dtype=complex)
    if U.shape != (state.modes, state.modes):
        raise DimensionMismatchError(
            "unitary shape %s does not match %d modes" % (U.shape, state.modes)
        )
    modes = state.modes
    basis = state.basis
    index = {occ: k for k, occ in enumerate(basis)}
    out = np.zeros(len(basis), dtype=complex)
    for k_in, occ_in in enumerate(basis):
        a = state.amplitudes[k_in]
        if a == 0:
            continue
        i, j = _occupied_pair(occ_in)
        # a_i^dag a_j^dag |vac>, with 1/sqrt(2) normalisation when i == j
        pref = a / np.sqrt(2.0) if i == j else a
        for p in range(modes):
            for q in range(modes):
                coeff = pref * U[p, i] * U[q, j]
                occ_out = [0] * modes
                occ_out[p] += 1
                occ_out[q] += 1
                if p == q:
                    coeff *= np.sqrt(2.0)
                out[index[tuple(occ_out)]] += coeff
    nrm = np.linalg.norm(out)
    if abs(nrm - 1.0) > 1e-8:
        raise ValueError("propagation lost norm (%g); U not unitary?" % nrm)
    return TwoPhotonFockState(modes, out / nrm)


def two_photon_evolve_oracle(U, state):
    """Brute-force check of ``two_photon_evolve``.

    Embeds the state in the full mode x mode tensor space with explicit
    symmetrisation, applies U (x) U and maps back. Independent of the
    permanent-style path used by ``two_photon_evolve``.
    """
    U = np.asarray(U, dtype=complex)
    modes = state.modes
    basis = state.basis
    vec = np.zeros((modes, modes), dtype=complex)
    for k, occ in enumerate(basis):
        i, j = _occupied_pair(occ)
        if i == j:
            vec[i, j] = state.amplitudes[k]
        else:
            vec[i, j] = vec[j, i] = state.amplitudes[k] / np.sqrt(2.0)
    out = U @ vec @ U.T
    amps = np.zeros(len(basis), dtype=complex)
    for k, occ in enumerate(basis):
        i, j = _occupied_pair(occ)
        if i == j:
            amps[k] = out[i, j]
        else:
            amps[k] = np.sqrt(2.0) * 0.5 * (out[i, j] + out[j, i])
    return TwoPhotonFockState(modes, amps / np.linalg.norm(amps))


def unitarize(Z, tol=1e-12):
    """Nearest unitary Z (Z^dag Z)^{-1/2}, computed via the SVD."""
    Z = np.asarray(Z, dtype=complex)
    if Z.ndim != 2 or Z.shape[0] != Z.shape[1]:
        raise DimensionMismatchError("unitarize needs a square matrix")
    u, s, vh = np.linalg.svd(Z)
    if s[-1] <= tol:
        raise SingularMatrixError(
            "smallest singular value %.3g below threshold %.3g" % (s[-1], tol)
        )
    return u @ vh
