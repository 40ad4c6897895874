"""Transfer-matrix reconstruction for multi-port beamsplitters.

Pipeline: intensity tables give the moduli u_jk via split ratios, phase
scans against the reference input give the relative phases, both are
assembled into an experimental matrix with real border, and the nearest
real-border unitary is found by optimisation over the unconstrained
parametrisation Z -> Z (Z^dag Z)^{-1/2} followed by border-gauge fixing.
Measurement errors are propagated with a Monte Carlo over the full
reconstruction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .linops import (
    DimensionMismatchError,
    SingularMatrixError,
    matrix_fidelity,
    unitarize,
)


class DegenerateFitError(ValueError):
    """Phase scan shows no usable fringe (amplitude below threshold)."""


class ConvergenceError(RuntimeError):
    """Optimiser hit the iteration cap without meeting the gradient stop."""


@dataclass(frozen=True)
class IntensityTable:
    """Detected intensities I[j, k]: output port j for input port k."""

    values: np.ndarray
    errors: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError("intensity table must be square")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("intensities must be finite and non-negative")
        errors = self.errors
        if errors is None:
            errors = np.zeros_like(values)
        errors = np.asarray(errors, dtype=float)
        if errors.shape != values.shape or np.any(errors < 0):
            raise ValueError("errors must be non-negative and match the table shape")
        if np.any(values.sum(axis=0) <= 0):
            raise ValueError("every input column needs at least one nonzero intensity")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "errors", errors)

    @property
    def dim(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class PhaseScan:
    """Fringe scan for input pair (0, j) observed at output port k.

    ``samples`` has rows (scan phase, probability, error).
    """

    input_mode: int
    output_port: int
    samples: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 2 or samples.shape[1] != 3 or samples.shape[0] < 8:
            raise ValueError("need >= 8 samples of (phase, probability, error)")
        span = samples[:, 0].max() - samples[:, 0].min()
        if span < 2 * np.pi - 1e-9:
            raise ValueError("scan must span at least 2*pi")
        if np.any(samples[:, 1] < -1e-9) or np.any(samples[:, 1] > 1 + 1e-9):
            raise ValueError("probabilities must lie in [0, 1]")
        object.__setattr__(self, "samples", samples)


@dataclass(frozen=True)
class TomographyResult:
    experimental: np.ndarray  # reconstructed transfer matrix (not unitary)
    unitary: np.ndarray  # nearest real-border unitary
    fidelity_exp_unitary: float
    phases: np.ndarray  # gauge-fixed per-entry phases
    fidelity_errors: dict = field(default_factory=dict)  # 3-sigma halfwidths


def split_ratios(table: IntensityTable):
    """Split ratios r(j|k) = I[j,k] / sum_j I[j,k] and moduli u = sqrt(r)."""
    totals = table.values.sum(axis=0)
    r = table.values / totals[None, :]
    return r, np.sqrt(r)


def fit_phase(scan: PhaseScan, u_k0, u_kj, min_amplitude=1e-6):
    """Least-squares fit of A + B cos(phi + delta) to a fringe scan.

    Returns (delta in [0, 2*pi), rms residual). The moduli of the two
    interfering entries are accepted for validation: a vanishing product
    predicts no fringe, which the fit reports as DegenerateFitError.
    """
    for u in (u_k0, u_kj):
        if not 0 < u <= 1:
            raise ValueError("moduli must lie in (0, 1]")
    phi = scan.samples[:, 0]
    prob = scan.samples[:, 1]
    design = np.column_stack([np.ones_like(phi), np.cos(phi), np.sin(phi)])
    coeff, *_ = np.linalg.lstsq(design, prob, rcond=None)
    amp = np.hypot(coeff[1], coeff[2])
    if amp < min_amplitude:
        raise DegenerateFitError(
            "fringe amplitude %.3g below %.3g (u_k0 * u_kj ~ 0 or dephased data)"
            % (amp, min_amplitude)
        )
    delta = np.mod(np.arctan2(-coeff[2], coeff[1]), 2 * np.pi)
    residual = float(np.sqrt(np.mean((design @ coeff - prob) ** 2)))
    return float(delta), residual


def assemble_experimental_matrix(u, phases, border_tol=1e-9):
    """U~[j,k] = u[j,k] e^{i phases[j,k]} in the real-border gauge.

    ``phases`` must already be gauge fixed: first row and first column zero
    (the (N-1)^2 interior entries are the independent ones).
    """
    u = np.asarray(u, dtype=float)
    phases = np.asarray(phases, dtype=float)
    if u.shape != phases.shape or u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise DimensionMismatchError("moduli and phases must be square and congruent")
    if not np.all(np.isfinite(phases)):
        raise ValueError("missing or non-finite phase entries")
    border = np.concatenate([phases[0, :], phases[1:, 0]])
    if np.max(np.abs(np.remainder(border + np.pi, 2 * np.pi) - np.pi)) > border_tol:
        raise ValueError("border phases must be zero (real-border gauge violation)")
    return u * np.exp(1j * phases)


def gauge_fix_border(W, tol=1e-12):
    """Multiply rows/columns by phases so the first row and column are
    real non-negative; leaves |entries| unchanged."""
    W = np.asarray(W, dtype=complex).copy()
    col = W[:, 0]
    if np.any(np.abs(col) < tol) or np.any(np.abs(W[0, :]) < tol):
        raise ValueError("border entry too small to gauge fix")
    W *= np.exp(-1j * np.angle(col))[:, None]
    W *= np.exp(-1j * np.angle(W[0, :]))[None, :]
    return W


def _polar_with_directional(Z, dZ):
    """Polar factor W of Z and its Frechet derivative along dZ."""
    u, s, vh = np.linalg.svd(Z)
    W = u @ vh
    # H^{-1/2} derivative in the right singular basis
    dH = dZ.conj().T @ Z + Z.conj().T @ dZ
    v = vh.conj().T
    g = -1.0 / (s[:, None] * s[None, :] * (s[:, None] + s[None, :]))
    dS = v @ ((v.conj().T @ dH @ v) * g) @ v.conj().T
    S = v @ np.diag(1.0 / s) @ v.conj().T
    dW = dZ @ S + Z @ dS
    return W, dW


def _gauge_with_directional(W, dW, tiny=1e-12):
    """Border gauge fix G of W and its derivative along dW."""
    n = W.shape[0]
    ucol = W[:, 0]
    au = np.maximum(np.abs(ucol), tiny)
    p = ucol.conj() / au
    dp = dW[:, 0].conj() / au - p * (ucol.conj() * dW[:, 0]).real / au**2
    W1 = p[:, None] * W
    dW1 = dp[:, None] * W + p[:, None] * dW
    vrow = W1[0, :].copy()
    dvrow = dW1[0, :].copy()
    av = np.maximum(np.abs(vrow), tiny)
    r = vrow.conj() / av
    dr = dvrow.conj() / av - r * (vrow.conj() * dvrow).real / av**2
    r[0], dr[0] = 1.0, 0.0  # column 0 already real after the row fix
    G = W1 * r[None, :]
    dG = dW1 * r[None, :] + W1 * dr[None, :]
    return G, dG


def _border_cost_grad(x, target):
    """1 - F(target, gauge_fix(polar(Z))) and its gradient over vec(Z)."""
    n = target.shape[0]
    Z = (x[: n * n] + 1j * x[n * n :]).reshape(n, n)
    u, s, vh = np.linalg.svd(Z)
    W = u @ vh
    G, _ = _gauge_with_directional(W, np.zeros_like(W))
    c = np.trace(target.conj().T @ G)
    cost = 1.0 - (abs(c) ** 2) / n**2
    grad = np.empty_like(x)
    basis = np.zeros((n, n), dtype=complex)
    for idx in range(n * n):
        j, k = divmod(idx, n)
        for im, scale in ((0, 1.0), (1, 1j)):
            basis[j, k] = scale
            _, dW = _polar_with_directional(Z, basis)
            _, dG = _gauge_with_directional(W, dW)
            dc = np.trace(target.conj().T @ dG)
            grad[idx + im * n * n] = -2.0 * (c.conjugate() * dc).real / n**2
            basis[j, k] = 0.0
    return cost, grad


def project_to_unitary(
    experimental,
    restarts=20,
    max_iter=10_000,
    grad_tol=1e-10,
    seed=7,
):
    """Real-border unitary maximising the fidelity with ``experimental``.

    Runs L-BFGS from Z0 = experimental plus ``restarts`` random starting
    points; returns the best gauge-fixed unitary found.
    """
    target = np.asarray(experimental, dtype=complex)
    if target.ndim != 2 or target.shape[0] != target.shape[1]:
        raise DimensionMismatchError("expected a square matrix")
    sv = np.linalg.svd(target, compute_uv=False)
    if sv[-1] <= 1e-12:
        raise SingularMatrixError("experimental matrix is singular")
    n = target.shape[0]
    rng = np.random.default_rng(seed)

    def pack(Z):
        return np.concatenate([Z.real.ravel(), Z.imag.ravel()])

    starts = [target] + [
        rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        for _ in range(restarts)
    ]
    best = None
    any_converged = False
    for Z0 in starts:
        res = minimize(
            _border_cost_grad,
            pack(Z0),
            args=(target,),
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": max_iter, "gtol": grad_tol, "ftol": 0.0},
        )
        any_converged = any_converged or res.success
        if best is None or res.fun < best.fun:
            best = res
        if best.fun < 1e-12:  # fidelity already 1 up to round-off
            any_converged = True
            break
    if not any_converged and best.fun > 1e-12:
        raise ConvergenceError(
            "no start met the gradient stop %.1e within %d iterations"
            % (grad_tol, max_iter)
        )
    Z = (best.x[: n * n] + 1j * best.x[n * n :]).reshape(n, n)
    return gauge_fix_border(unitarize(Z))


def reconstruct(table: IntensityTable, scans, scan_errors=None):
    """Full reconstruction: split ratios + phase fits -> (U~, U^, phases).

    ``scans`` maps (output k, input j) -> PhaseScan for j >= 1. The fitted
    relative phases phi_kj - phi_k0 are put into the real-border gauge by
    subtracting the first-row values.
    """
    n = table.dim
    _, u = split_ratios(table)
    rel = np.zeros((n, n))
    for k in range(n):
        for j in range(1, n):
            delta, _ = fit_phase(scans[(k, j)], max(u[k, 0], 1e-9), max(u[k, j], 1e-9))
            # p(k|j) ~ cos(phi + phi_kj - phi_k0): the fitted offset IS the phase
            rel[k, j] = delta
    phases = np.mod(rel - rel[0:1, :], 2 * np.pi)
    phases[:, 0] = 0.0
    phases[0, :] = 0.0
    experimental = assemble_experimental_matrix(u, phases)
    unitary = project_to_unitary(experimental)
    return TomographyResult(
        experimental=experimental,
        unitary=unitary,
        fidelity_exp_unitary=matrix_fidelity(experimental, unitary),
        phases=phases,
    )


def synthesize_scans(U, points=24, noise=0.0, rng=None):
    """Noiseless (or Gaussian-noisy) fringe scans predicted by a transfer
    matrix U, matching the measurement model of ``fit_phase``."""
    U = np.asarray(U, dtype=complex)
    n = U.shape[0]
    rng = rng or np.random.default_rng(0)
    grid = np.linspace(0.0, 2 * np.pi, points, endpoint=True)
    scans = {}
    for k in range(n):
        for j in range(1, n):
            uk0, ukj = np.abs(U[k, 0]), np.abs(U[k, j])
            delta = np.angle(U[k, j]) - np.angle(U[k, 0])
            prob = 0.5 * (uk0**2 + ukj**2 + 2 * uk0 * ukj * np.cos(grid + delta))
            if noise:
                prob = np.clip(prob + rng.normal(0.0, noise, prob.shape), 0.0, 1.0)
            scans[(k, j)] = PhaseScan(j, k, np.column_stack([grid, prob, np.full_like(grid, noise)]))
    return scans


def synthesize_intensities(U, scale=1.0, errors=None):
    """IntensityTable with I[j,k] = scale * |U[j,k]|^2."""
    U = np.asarray(U, dtype=complex)
    values = scale * np.abs(U) ** 2
    return IntensityTable(values, errors)


def _batched_pipeline(intensities, phases):
    """Vectorised U~ and gauge-fixed polar projection for stacked draws.

    intensities: (m, n, n) non-negative; phases: (m, n, n) with zero border.
    Returns (U~ stack, U^ stack, singular-draw mask).
    """
    totals = intensities.sum(axis=1, keepdims=True)
    r = intensities / totals
    exp_stack = np.sqrt(r) * np.exp(1j * phases)
    sv = np.linalg.svd(exp_stack, compute_uv=False)
    bad = sv[:, -1] <= 1e-12
    good = exp_stack[~bad]
    u, _, vh = np.linalg.svd(good)
    W = u @ vh
    W = W * np.exp(-1j * np.angle(W[:, :, 0]))[:, :, None]
    W = W * np.exp(-1j * np.angle(W[:, 0, :]))[:, None, :]
    return exp_stack, W, bad


@dataclass(frozen=True)
class MonteCarloResult:
    fidelity_exp_unitary: float
    err3_exp_unitary: float
    fidelity_model: float | None
    err3_model: float | None
    rejected_draws: int
    samples: int


def monte_carlo_errors(
    table: IntensityTable,
    phases,
    phase_errors,
    samples=100_000,
    reference=None,
    seed=20240811,
):
    """Propagate intensity and phase errors through the reconstruction.

    Draws I ~ N(I, dI/3) and phi ~ N(phi, dphi/3) per entry, reruns the
    split-ratio -> assembly -> unitary-projection pipeline per draw (with
    the polar projection, which agrees with the iterative optimiser to
    well below the Monte Carlo spread), and reports mean fidelities with
    3-sigma halfwidths. Draws giving a singular matrix are redrawn and
    counted.
    """
    if samples < 100:
        raise ValueError("need at least 100 samples")
    phases = np.asarray(phases, dtype=float)
    phase_errors = np.asarray(phase_errors, dtype=float)
    if np.any(phase_errors < 0):
        raise ValueError("phase errors must be non-negative")
    n = table.dim
    rng = np.random.default_rng(seed)
    fid_exp = np.empty(samples)
    fid_model = np.empty(samples) if reference is not None else None
    done = 0
    rejected = 0
    while done < samples:
        m = samples - done
        draws_i = rng.normal(table.values, table.errors / 3.0, size=(m, n, n))
        draws_i = np.clip(draws_i, 1e-12, None)
        draws_p = rng.normal(phases, phase_errors / 3.0, size=(m, n, n))
        draws_p[:, 0, :] = 0.0
        draws_p[:, :, 0] = 0.0
        exp_stack, W, bad = _batched_pipeline(draws_i, draws_p)
        rejected += int(bad.sum())
        good_exp = exp_stack[~bad]
        k = W.shape[0]
        tr = np.einsum("mji,mji->m", good_exp.conj(), W)
        fid_exp[done : done + k] = np.abs(tr) ** 2 / n**2
        if fid_model is not None:
            trm = np.einsum("ji,mji->m", np.asarray(reference).conj(), W)
            fid_model[done : done + k] = np.abs(trm) ** 2 / n**2
        done += k
    result = MonteCarloResult(
        fidelity_exp_unitary=float(fid_exp.mean()),
        err3_exp_unitary=float(3.0 * fid_exp.std()),
        fidelity_model=float(fid_model.mean()) if fid_model is not None else None,
        err3_model=float(3.0 * fid_model.std()) if fid_model is not None else None,
        rejected_draws=rejected,
        samples=samples,
    )
    return result


def random_real_border_unitary(n, rng):
    """Haar-like random unitary gauge fixed to a real non-negative border."""
    z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    q, r = np.linalg.qr(z)
    q = q * (np.diagonal(r) / np.abs(np.diagonal(r)))[None, :]
    return gauge_fix_border(q)
