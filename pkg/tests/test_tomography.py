import numpy as np
import pytest

from mcfkit import linops
from mcfkit import tomography as tom


def test_intensity_table_validation():
    with pytest.raises(ValueError):
        tom.IntensityTable(np.ones((3, 4)))
    with pytest.raises(ValueError):
        tom.IntensityTable(-np.ones((4, 4)))
    with pytest.raises(ValueError):
        tom.IntensityTable(np.ones((4, 4)), -np.ones((4, 4)))
    table = tom.IntensityTable(np.ones((4, 4)))
    assert table.dim == 4


def test_split_ratios_columns_sum_to_one():
    rng = np.random.default_rng(2)
    table = tom.IntensityTable(rng.uniform(0.1, 5.0, (4, 4)))
    r, u = tom.split_ratios(table)
    np.testing.assert_allclose(r.sum(axis=0), 1.0, atol=1e-12)
    np.testing.assert_allclose(u**2, r, atol=1e-12)


def test_phase_scan_validation():
    grid = np.linspace(0, 2 * np.pi, 12)
    good = np.column_stack([grid, 0.5 + 0.4 * np.cos(grid), np.zeros(12)])
    tom.PhaseScan(1, 0, good)
    with pytest.raises(ValueError):  # too few samples
        tom.PhaseScan(1, 0, good[:5])
    with pytest.raises(ValueError):  # does not span 2*pi
        tom.PhaseScan(1, 0, np.column_stack([grid / 4, good[:, 1], good[:, 2]]))


@pytest.mark.parametrize("delta", [0.0, 0.7, np.pi, 4.5])
def test_fit_phase_recovers_offset(delta):
    grid = np.linspace(0, 2 * np.pi, 24)
    prob = 0.25 + 0.25 * np.cos(grid + delta)
    scan = tom.PhaseScan(1, 0, np.column_stack([grid, prob, np.zeros(24)]))
    fitted, residual = tom.fit_phase(scan, 0.5, 0.5)
    assert residual < 1e-12
    assert np.mod(fitted - delta, 2 * np.pi) == pytest.approx(
        0.0, abs=1e-9
    ) or np.mod(fitted - delta, 2 * np.pi) == pytest.approx(
        2 * np.pi, abs=1e-9
    )


def test_fit_phase_degenerate_scan():
    grid = np.linspace(0, 2 * np.pi, 24)
    flat = np.column_stack([grid, np.full(24, 0.3), np.zeros(24)])
    with pytest.raises(tom.DegenerateFitError):
        tom.fit_phase(tom.PhaseScan(1, 0, flat), 0.5, 0.5)


def test_assemble_requires_zero_border_phases():
    u = np.full((4, 4), 0.5)
    phases = np.zeros((4, 4))
    phases[0, 1] = 0.3
    with pytest.raises(ValueError):
        tom.assemble_experimental_matrix(u, phases)
    phases[0, 1] = 0.0
    phases[2, 2] = 1.2
    W = tom.assemble_experimental_matrix(u, phases)
    assert W[2, 2] == pytest.approx(0.5 * np.exp(1.2j))


def test_gauge_fix_border():
    rng = np.random.default_rng(3)
    U = tom.random_real_border_unitary(4, rng)
    # scramble with row/column phases, then restore
    scrambled = (
        np.exp(1j * rng.uniform(-np.pi, np.pi, 4))[:, None]
        * U
        * np.exp(1j * rng.uniform(-np.pi, np.pi, 4))[None, :]
    )
    fixed = tom.gauge_fix_border(scrambled)
    assert linops.has_real_border(fixed)
    np.testing.assert_allclose(np.abs(fixed), np.abs(U), atol=1e-12)
    np.testing.assert_allclose(fixed, U, atol=1e-9)


def test_projection_gradient_matches_finite_differences():
    rng = np.random.default_rng(8)
    n = 3
    target = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    x0 = rng.standard_normal(2 * n * n)
    cost, grad = tom._border_cost_grad(x0, target)
    for idx in rng.choice(2 * n * n, size=8, replace=False):
        h = 1e-6
        xp, xm = x0.copy(), x0.copy()
        xp[idx] += h
        xm[idx] -= h
        num = (
            tom._border_cost_grad(xp, target)[0]
            - tom._border_cost_grad(xm, target)[0]
        ) / (2 * h)
        assert grad[idx] == pytest.approx(num, abs=1e-5)


def test_project_to_unitary_identity_on_unitary_input():
    rng = np.random.default_rng(9)
    U = tom.random_real_border_unitary(4, rng)
    W = tom.project_to_unitary(U)
    assert linops.matrix_fidelity(W, U) == pytest.approx(1.0, abs=1e-10)


def test_project_to_unitary_rejects_singular():
    with pytest.raises(linops.SingularMatrixError):
        tom.project_to_unitary(np.zeros((4, 4)))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_round_trip_reconstruction(seed):
    rng = np.random.default_rng(seed)
    U = tom.random_real_border_unitary(4, rng)
    result = tom.reconstruct(
        tom.synthesize_intensities(U), tom.synthesize_scans(U)
    )
    assert linops.is_unitary(result.unitary)
    assert linops.has_real_border(result.unitary)
    assert linops.matrix_fidelity(result.unitary, U) > 1 - 1e-8


def test_round_trip_with_noise_degrades_gracefully():
    rng = np.random.default_rng(12)
    U = tom.random_real_border_unitary(4, rng)
    scans = tom.synthesize_scans(U, noise=0.01, rng=rng)
    result = tom.reconstruct(tom.synthesize_intensities(U), scans)
    assert linops.matrix_fidelity(result.unitary, U) > 0.99


def test_monte_carlo_errors_reproducible_and_scaled():
    rng = np.random.default_rng(21)
    U = tom.random_real_border_unitary(4, rng)
    table = tom.IntensityTable(np.abs(U) ** 2, 0.05 * np.abs(U) ** 2)
    phases = np.angle(U)
    kwargs = dict(
        samples=2000, reference=linops.symmetric_bs_4(0.0), seed=77
    )
    mc1 = tom.monte_carlo_errors(table, phases, np.full((4, 4), 0.02), **kwargs)
    mc2 = tom.monte_carlo_errors(table, phases, np.full((4, 4), 0.02), **kwargs)
    assert mc1 == mc2
    # tighter input errors give tighter fidelity errors
    small = tom.monte_carlo_errors(
        tom.IntensityTable(np.abs(U) ** 2, 0.005 * np.abs(U) ** 2),
        phases,
        np.full((4, 4), 0.002),
        **kwargs,
    )
    assert small.err3_exp_unitary < mc1.err3_exp_unitary
    assert small.err3_model < mc1.err3_model


def test_monte_carlo_zero_noise_has_zero_spread():
    rng = np.random.default_rng(22)
    U = tom.random_real_border_unitary(4, rng)
    table = tom.IntensityTable(np.abs(U) ** 2, np.zeros((4, 4)))
    mc = tom.monte_carlo_errors(
        table, np.angle(U), np.zeros((4, 4)), samples=500
    )
    assert mc.err3_exp_unitary == pytest.approx(0.0, abs=1e-12)
