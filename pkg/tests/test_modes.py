"""
Finite-difference effective Hamiltonian and its lowest eigenmodes.
"""

import math
import numpy as np
import spinamp
from spinamp import (
    EffectiveFields, GridSpec, ResolutionException, TrapGeometry, box_levels,
    discretize_heff, effective_fields, solve_lowest_modes, solve_tf, tf_atom_number,
    tf_radii
)
from spinamp_cli import load_species

SPECIES = load_species('rb87_f2')
MASS = SPECIES.atomic_mass


def free_fields(grid, potential=None):
    "Fields with a given V_eff and no pair coupling."
    V = np.zeros(grid.shape) if potential is None else potential
    return EffectiveFields(V_eff=V, Omega_eff=np.zeros(grid.shape), grid=grid)


def oscillator_potential(grid, omega):
    V = np.zeros(grid.shape)
    for coordinate in grid.mesh():
        V += 0.5 * MASS * omega ** 2 * coordinate ** 2
    return spinamp.joule_to_hz(V)


def box_errors(points, count=5):
    grid = GridSpec((1e-5,), (points,), margin=1.0)
    op = discretize_heff(free_fields(grid), SPECIES, grid)
    basis = solve_lowest_modes(op, count, math.inf)
    exact = box_levels(2e-5, MASS, count)
    return np.abs(basis.energies - exact) / exact, basis


def test_box_levels_converge_quadratically():
    "Halving the spacing cuts the box level error by ~4."
    coarse, _ = box_errors(200)
    fine, basis = box_errors(401)
    assert np.all(coarse / fine >= 3.5)
    assert np.all(fine < 1e-3)
    assert basis.orthonormality_error() < 1e-8


def test_box_levels_match_lattice_formula():
    "The discrete spectrum is 2t(1 - cos(k pi / (n + 1)))."
    grid = GridSpec((1e-5,), (120,), margin=1.0)
    op = discretize_heff(free_fields(grid), SPECIES, grid)
    basis = solve_lowest_modes(op, 8, math.inf)
    t = spinamp.hopping_energy(MASS, grid.spacing[0])
    k = np.arange(1, 9)
    assert np.allclose(basis.energies, 2 * t * (1 - np.cos(k * math.pi / 121)), rtol=1e-10)


def test_oscillator_levels():
    "A 1D harmonic V_eff gives (n + 1/2) f."
    omega = spinamp.HBAR / (MASS * 1e-12)
    grid = GridSpec((8e-6,), (801,), margin=1.0)
    op = discretize_heff(free_fields(grid, oscillator_potential(grid, omega)), SPECIES, grid)
    basis = solve_lowest_modes(op, 6, math.inf)
    frequency = omega / (2.0 * math.pi)
    assert np.allclose(basis.energies / frequency, np.arange(6) + 0.5, rtol=1e-3)
    assert basis.orthonormality_error() < 1e-8


def test_oscillator_shells_3d():
    "An isotropic 3D oscillator shows the 1, 3, 6 shell degeneracies."
    omega = spinamp.HBAR / (MASS * 1e-12)
    grid = GridSpec((6e-6,) * 3, (28, 28, 28), margin=1.0)
    op = discretize_heff(free_fields(grid, oscillator_potential(grid, omega)), SPECIES, grid)
    basis = solve_lowest_modes(op, 10, math.inf, seed=3)

    frequency = omega / (2.0 * math.pi)
    shells = np.rint(basis.energies / frequency - 1.5).astype(int)
    assert list(shells) == [0, 1, 1, 1, 2, 2, 2, 2, 2, 2]
    assert basis.orthonormality_error() < 1e-8


def test_solvers_agree():
    "Dense, shift-invert and Lanczos solves give the same spectrum."
    omega = spinamp.HBAR / (MASS * 1e-12)
    grid = GridSpec((8e-6,), (200,), margin=1.0)
    op = discretize_heff(free_fields(grid, oscillator_potential(grid, omega)), SPECIES, grid)
    dense = solve_lowest_modes(op, 12, math.inf)
    shifted = solve_lowest_modes(op, 12, math.inf, method='shift-invert', dense_limit=10)
    lanczos = solve_lowest_modes(op, 12, math.inf, method='lanczos', dense_limit=10)
    assert np.allclose(dense.energies, shifted.energies, rtol=1e-10)
    assert np.allclose(dense.energies, lanczos.energies, rtol=1e-9)
    assert np.allclose(np.abs(dense.modes), np.abs(shifted.modes), atol=1e-6 * np.abs(dense.modes).max())


def test_modes_are_reproducible():
    "The same operator and seed give bitwise identical modes."
    grid = GridSpec((1e-5,), (300,), margin=1.0)
    op = discretize_heff(free_fields(grid), SPECIES, grid)
    first = solve_lowest_modes(op, 10, math.inf, seed=5, dense_limit=10)
    second = solve_lowest_modes(op, 10, math.inf, seed=5, dense_limit=10)
    assert np.array_equal(first.energies, second.energies)
    assert np.array_equal(first.modes, second.modes)


def test_cutoff_stops_basis():
    "The basis ends with the first mode above the cutoff."
    grid = GridSpec((1e-5,), (200,), margin=1.0)
    op = discretize_heff(free_fields(grid), SPECIES, grid)
    everything = solve_lowest_modes(op, 200, math.inf)
    cutoff = float(everything.energies[20]) + 1e-6
    basis = solve_lowest_modes(op, 200, cutoff, initial_modes=4)
    assert basis.M == 22
    assert basis.energies[-1] > cutoff
    assert basis.energies[-2] <= cutoff


def test_mode_signs_fixed():
    "Every mode's largest-magnitude entry is positive."
    grid = GridSpec((1e-5,), (150,), margin=1.0)
    op = discretize_heff(free_fields(grid), SPECIES, grid)
    basis = solve_lowest_modes(op, 6, math.inf)
    for mode in basis.modes:
        assert mode[np.argmax(np.abs(mode))] > 0


def test_resolution_check():
    "A coarse grid does not resolve the healing length."
    trap = TrapGeometry.harmonic([2.0 * math.pi * 50.0], transverse_length=1e-6)
    N = tf_atom_number(SPECIES, trap, 2000.0)
    grid = GridSpec.around(SPECIES, trap, N, (60,))
    state = solve_tf(SPECIES, trap, N, grid)
    fields = effective_fields(SPECIES, trap, state)
    try:
        discretize_heff(fields, SPECIES, grid)
        assert False, 'Exception should have been thrown.'
    except ResolutionException as error:
        assert error.axis == 0
        assert error.required < error.spacing
        assert 'Required spacing' in str(error)


def test_mexican_hat_ground_mode():
    "For U1 > 0 the lowest mode lives on the Thomas-Fermi surface, not at the center."
    trap = TrapGeometry.harmonic([2.0 * math.pi * 50.0], transverse_length=1e-6)
    N = tf_atom_number(SPECIES, trap, 2000.0)
    grid = GridSpec.around(SPECIES, trap, N, (641,))
    state = solve_tf(SPECIES, trap, N, grid)
    fields = effective_fields(SPECIES, trap, state)
    op = discretize_heff(fields, SPECIES, grid)
    basis = solve_lowest_modes(op, 4, math.inf)

    x = grid.axes()[0]
    radius = tf_radii(SPECIES, trap, state.mu)[0]
    density = basis.mode_field(0) ** 2
    peak = abs(x[np.argmax(density)])
    assert 0.8 * radius <= peak <= 1.2 * radius
    assert density[np.argmin(np.abs(x))] < 1e-3 * density.max()


def test_shift_invert_factors_once(monkeypatch):
    "A 3D basis up to a cutoff costs one LU factorization and one ARPACK run."
    calls = {'splu': 0, 'eigsh': 0}
    splu, eigsh = spinamp.splu, spinamp.eigsh

    def counting_splu(*args, **kwargs):
        calls['splu'] += 1
        assert kwargs['permc_spec'] == 'MMD_AT_PLUS_A'
        return splu(*args, **kwargs)

    def counting_eigsh(*args, **kwargs):
        calls['eigsh'] += 1
        assert kwargs['OPinv'] is not None
        return eigsh(*args, **kwargs)

    monkeypatch.setattr(spinamp, 'splu', counting_splu)
    monkeypatch.setattr(spinamp, 'eigsh', counting_eigsh)

    omega = spinamp.HBAR / (MASS * 1e-12)
    frequency = omega / (2.0 * math.pi)
    grid = GridSpec((6e-6,) * 3, (28, 28, 28), margin=1.0)
    op = discretize_heff(free_fields(grid, oscillator_potential(grid, omega)), SPECIES, grid)
    basis = solve_lowest_modes(op, 400, 5.0 * frequency, initial_modes=4)

    assert calls == {'splu': 1, 'eigsh': 1}
    # shells 0..3 hold 1 + 3 + 6 + 10 modes, then the first mode of shell 4
    assert basis.M == 21
    assert basis.energies[-2] < 5.0 * frequency < basis.energies[-1]


def test_mode_count_estimate():
    "The semiclassical count tracks the number of box levels below an energy."
    grid = GridSpec((1e-5,), (200,), margin=1.0)
    op = discretize_heff(free_fields(grid), SPECIES, grid)
    first = box_levels(2e-5, MASS, 1)[0]
    energy = 10.5 ** 2 * first
    estimate = spinamp.estimate_mode_count(op, energy)
    assert abs(estimate - 10.5) < 0.1

    basis = solve_lowest_modes(op, 40, math.inf)
    assert int(np.sum(basis.energies < energy)) == int(estimate)
    assert spinamp.estimate_mode_count(op, -1.0) == 0.0


def test_failed_factorization_is_a_solver_error(monkeypatch):
    "An LU failure surfaces as SolverException."
    def failing_splu(*args, **kwargs):
        raise MemoryError('out of memory')

    monkeypatch.setattr(spinamp, 'splu', failing_splu)
    grid = GridSpec((1e-5,), (300,), margin=1.0)
    op = discretize_heff(free_fields(grid), SPECIES, grid)
    try:
        solve_lowest_modes(op, 10, math.inf, dense_limit=10)
        assert False, 'Exception should have been thrown.'
    except spinamp.SolverException as error:
        assert 'factorization' in str(error)


def oscillator_errors(points, count=5):
    omega = spinamp.HBAR / (MASS * 1e-12)
    grid = GridSpec((8e-6,), (points,), margin=1.0)
    op = discretize_heff(free_fields(grid, oscillator_potential(grid, omega)), SPECIES, grid)
    basis = solve_lowest_modes(op, count, math.inf)
    exact = (np.arange(count) + 0.5) * omega / (2.0 * math.pi)
    return np.abs(basis.energies - exact) / exact


def test_oscillator_levels_converge_quadratically():
    "Halving the spacing cuts the oscillator level error by ~4."
    coarse = oscillator_errors(200)
    fine = oscillator_errors(401)
    assert np.all(coarse / fine >= 3.5)
