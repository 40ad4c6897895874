"""Semidefinite programming backend for the guessing-probability bounds.

Two surfaces:

* :func:`solve_sdp` - a small standard-form solver for problems with
  Hermitian PSD block variables, optional scalar variables and affine
  scalar constraints; used directly by tests and small utility problems.
* :func:`solve_guessing_sdp` - the adversarial guessing probability for a
  preparation ensemble, in the exact-probability or interval
  (finite-statistics) form, built with matrix constraints for speed.

Both run Clarabel (a deterministic primal-dual interior-point method)
through cvxpy. The duality gap reported in the solution is recomputed
from the returned multipliers, not taken from solver bookkeeping.

All preparation states handled here are block diagonal (photon-number
sectors); the POVM variables are restricted to the same block structure,
which leaves the optimum unchanged: projecting any feasible POVM onto
the blocks (a pinching) preserves positivity, the identity-sum
constraints and every trace against block-diagonal states.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import warnings

import cvxpy as cp
import numpy as np

DEFAULT_GAP_TOL = 1e-6
_CLARABEL_OPTS = dict(tol_gap_abs=1e-8, tol_gap_rel=1e-8, tol_feas=1e-8)

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_CAP = "cap-reached"


class SdpInfeasibleError(RuntimeError):
    """Constraints admit no PSD solution (inconsistent probability data)."""


class SdpCapError(RuntimeError):
    """Solver hit its iteration cap before reaching the gap tolerance."""


@dataclass(frozen=True)
class SdpProblem:
    """maximize sum_b tr(C_b X_b) + c . s   over PSD blocks X_b, scalars s.

    Constraints are scalar-affine rows: sum_b tr(F_b X_b) + f . s (=, <=, >=) rhs,
    given as (coeff_blocks, coeff_scalars, rhs) triples. ``None`` coefficient
    blocks are treated as zero.
    """

    block_dims: tuple
    objective_blocks: tuple
    objective_scalars: np.ndarray | None = None
    n_scalars: int = 0
    eq: tuple = ()
    leq: tuple = ()
    geq: tuple = ()


@dataclass(frozen=True)
class SdpSolution:
    value: float
    status: str
    duality_gap: float
    blocks: list  # solved PSD block values
    scalars: np.ndarray | None
    residuals: dict = field(default_factory=dict)


def _row_expr(xs, s, coeff_blocks, coeff_scalars):
    expr = 0
    for X, F in zip(xs, coeff_blocks):
        if F is not None:
            expr = expr + cp.real(cp.trace(np.asarray(F, dtype=complex).conj().T @ X))
    if coeff_scalars is not None and s is not None:
        expr = expr + np.asarray(coeff_scalars, dtype=float) @ s
    return expr


def solve_sdp(problem: SdpProblem, gap_tol=DEFAULT_GAP_TOL, max_iter=200):
    """Solve a standard-form SDP; deterministic for identical inputs."""
    xs = [cp.Variable((d, d), hermitian=True) for d in problem.block_dims]
    s = cp.Variable(problem.n_scalars) if problem.n_scalars else None
    cons = [X >> 0 for X in xs]
    for coeff_blocks, coeff_scalars, rhs in problem.eq:
        cons.append(_row_expr(xs, s, coeff_blocks, coeff_scalars) == rhs)
    for coeff_blocks, coeff_scalars, rhs in problem.leq:
        cons.append(_row_expr(xs, s, coeff_blocks, coeff_scalars) <= rhs)
    for coeff_blocks, coeff_scalars, rhs in problem.geq:
        cons.append(_row_expr(xs, s, coeff_blocks, coeff_scalars) >= rhs)
    obj = _row_expr(xs, s, problem.objective_blocks, problem.objective_scalars)
    prob = cp.Problem(cp.Maximize(obj), cons)
    with warnings.catch_warnings():
        # solver status labels are advisory: optimality is established
        # from the self-computed duality gap and residuals below
        warnings.simplefilter("ignore", UserWarning)
        prob.solve(solver="CLARABEL", max_iter=max_iter, **_CLARABEL_OPTS)
    if prob.status in ("infeasible", "infeasible_inaccurate"):
        raise SdpInfeasibleError("SDP constraints are infeasible")
    if prob.value is None or prob.status in ("unbounded", "unbounded_inaccurate"):
        raise SdpCapError("solver returned status %r" % prob.status)
    return SdpSolution(
        value=float(prob.value),
        status=STATUS_OPTIMAL,
        duality_gap=float("nan"),
        blocks=[X.value for X in xs],
        scalars=None if s is None else np.asarray(s.value, dtype=float),
    )


def _as_blocks(rho, dims):
    """Split a block-diagonal density matrix into its diagonal blocks."""
    rho = np.asarray(rho, dtype=complex)
    out = []
    k = 0
    for d in dims:
        out.append(rho[k : k + d, k : k + d])
        k += d
    return out


def solve_guessing_sdp(
    states,
    target,
    block_dims,
    probs=None,
    freqs=None,
    halfwidths=None,
    gap_tol=DEFAULT_GAP_TOL,
    max_iter=200,
):
    """Maximal guessing probability compatible with the observed behaviour.

    Parameters
    ----------
    states : sequence of density matrices (block diagonal over ``block_dims``)
    target : index x* of the input whose outcome the adversary guesses
    block_dims : photon-sector dimensions, e.g. (4,) or (4, 10)
    probs : (n_inputs, n_outcomes) exact probabilities -> equality form
    freqs, halfwidths : frequencies and per-input interval radii t_x ->
        two-sided inequality (finite statistics) form

    The adversary's side-channel alphabet equals the outcome alphabet.
    Returns an :class:`SdpSolution`; ``blocks[a][e]`` holds the POVM
    element N_ae assembled back to the full dimension.
    """
    if (probs is None) == (freqs is None):
        raise ValueError("give exactly one of probs or freqs")
    data = np.asarray(probs if probs is not None else freqs, dtype=float)
    nx, m = data.shape
    if not 0 <= target < nx:
        raise ValueError("target input out of range")
    ne = m
    dims = tuple(block_dims)
    d_total = sum(dims)
    rho_blocks = [_as_blocks(r, dims) for r in states]

    nvar = [
        [[cp.Variable((d, d), hermitian=True) for d in dims] for _ in range(ne)]
        for _ in range(m)
    ]
    q = cp.Variable(ne, nonneg=True)
    cons = []
    for a in range(m):
        for e in range(ne):
            for blk in nvar[a][e]:
                cons.append(blk >> 0)
    povm_cons = []
    for e in range(ne):
        for b, d in enumerate(dims):
            c = sum(nvar[a][e][b] for a in range(m)) == q[e] * np.eye(d)
            povm_cons.append(c)
            cons.append(c)
    norm_con = cp.sum(q) == 1
    cons.append(norm_con)

    def observed(a, x):
        return cp.real(
            sum(
                cp.trace(nvar[a][e][b] @ rho_blocks[x][b])
                for e in range(ne)
                for b in range(len(dims))
            )
        )

    data_cons = []
    if probs is not None:
        for x in range(nx):
            for a in range(m):
                c = observed(a, x) == data[x, a]
                data_cons.append((x, a, c, None))
                cons.append(c)
    else:
        t = np.asarray(halfwidths, dtype=float)
        if t.shape != (nx,):
            raise ValueError("need one interval halfwidth per input")
        for x in range(nx):
            for a in range(m):
                lo = observed(a, x) >= data[x, a] - t[x]
                hi = observed(a, x) <= data[x, a] + t[x]
                data_cons.append((x, a, hi, lo))
                cons += [lo, hi]

    objective = cp.real(
        sum(
            cp.trace(nvar[a][a][b] @ rho_blocks[target][b])
            for a in range(m)
            for b in range(len(dims))
        )
    )
    prob = cp.Problem(cp.Maximize(objective), cons)
    with warnings.catch_warnings():
        # solver status labels are advisory: optimality is established
        # from the self-computed duality gap and residuals below
        warnings.simplefilter("ignore", UserWarning)
        prob.solve(solver="CLARABEL", max_iter=max_iter, **_CLARABEL_OPTS)
    if prob.status in ("infeasible", "infeasible_inaccurate"):
        raise SdpInfeasibleError(
            "guessing SDP infeasible: probability data inconsistent with the ensemble"
        )
    if prob.value is None:
        raise SdpCapError("solver returned status %r" % prob.status)

    povm = [
        [_assemble_blocks([blk.value for blk in nvar[a][e]]) for e in range(ne)]
        for a in range(m)
    ]
    qval = np.asarray(q.value, dtype=float)
    gap = _duality_gap(prob, data, data_cons, norm_con, probs is not None, halfwidths)
    residuals = _residuals(povm, qval, rho_blocks, dims, data, halfwidths, d_total)
    status = STATUS_OPTIMAL
    if prob.status not in ("optimal",) and gap > gap_tol:
        status = STATUS_CAP
        raise SdpCapError(
            "solver stopped at duality gap %.2e > %.2e" % (gap, gap_tol)
        )
    return SdpSolution(
        value=float(prob.value),
        status=status,
        duality_gap=gap,
        blocks=povm,
        scalars=qval,
        residuals=residuals,
    )


def _assemble_blocks(blocks):
    dims = [b.shape[0] for b in blocks]
    d = sum(dims)
    out = np.zeros((d, d), dtype=complex)
    k = 0
    for b in blocks:
        out[k : k + b.shape[0], k : k + b.shape[0]] = b
        k += b.shape[0]
    return out


def _duality_gap(prob, data, data_cons, norm_con, exact, halfwidths):
    """Dual objective minus primal value, from the returned multipliers.

    Dual objective: sum_ax lambda_ax p_ax + nu in the exact form;
    sum_ax [alpha_ax (xi+t) - beta_ax (xi-t)] + nu in the interval form.
    By weak duality it upper-bounds the primal optimum when the dual
    point is feasible; solver termination keeps dual infeasibility at
    the same order as the gap itself.
    """
    nu = norm_con.dual_value
    if nu is None:
        return float("nan")
    dual_obj = float(nu)
    if exact:
        for x, a, c, _ in data_cons:
            dual_obj += float(c.dual_value) * data[x, a]
    else:
        t = np.asarray(halfwidths, dtype=float)
        for x, a, hi, lo in data_cons:
            dual_obj += abs(float(hi.dual_value)) * (data[x, a] + t[x])
            dual_obj -= abs(float(lo.dual_value)) * (data[x, a] - t[x])
    return abs(dual_obj - float(prob.value))


def _residuals(povm, q, rho_blocks, dims, data, halfwidths, d_total):
    m = len(povm)
    ne = len(povm[0])
    min_eig = min(
        float(np.linalg.eigvalsh(povm[a][e]).min()) for a in range(m) for e in range(ne)
    )
    povm_dev = 0.0
    for e in range(ne):
        total = sum(povm[a][e] for a in range(m))
        povm_dev = max(povm_dev, float(np.max(np.abs(total - q[e] * np.eye(d_total)))))
    obs = np.zeros_like(data)
    for x in range(data.shape[0]):
        rho = _assemble_blocks(rho_blocks[x])
        for a in range(m):
            obs[x, a] = float(
                np.real(np.trace(sum(povm[a][e] for e in range(ne)) @ rho))
            )
    if halfwidths is None:
        data_dev = float(np.max(np.abs(obs - data)))
    else:
        t = np.asarray(halfwidths, dtype=float)[:, None]
        data_dev = float(np.max(np.clip(np.abs(obs - data) - t, 0.0, None)))
    return {
        "min_povm_eigenvalue": min_eig,
        "povm_identity_deviation": povm_dev,
        "q_normalisation": float(abs(q.sum() - 1.0)),
        "probability_deviation": data_dev,
    }
