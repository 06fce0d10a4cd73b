"""
Bogoliubov spectrum of the mode-projected pair-creation Hamiltonian.
"""

import math
import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import linear_sum_assignment
import spinamp
from spinamp import (
    BoxModel, CouplingMatrix, GridSpec, ModeBasis, Scenario, TrapGeometry,
    bdg_eigen, bdg_eigen_product_form, box_rate, coupling_matrix, instability_rate,
    tf_atom_number
)
from spinamp_cli import load_species

SPECIES = load_species('rb87_f2')


def lattice_basis(energies):
    "Basis of single-site modes, so A can be chosen freely."
    M = len(energies)
    grid = GridSpec((1e-6,), (M,), margin=1.0)
    modes = np.eye(M) / math.sqrt(grid.cell_volume)
    return ModeBasis(energies=np.asarray(energies, dtype=float), modes=modes, grid=grid)


def test_diagonal_coupling_matches_box():
    "With A = U1 n0 * 1 the pipeline reproduces the box oracle."
    spin = 10.0
    levels = 1.5 * np.arange(1, 31) ** 2
    model = BoxModel(levels=levels, n0=1.0, U1=spinamp.hz_to_joule(spin))
    basis = lattice_basis(levels + model.spin_energy)
    A = CouplingMatrix(model.spin_energy * np.eye(levels.size))

    checked = 0
    for q in np.linspace(-120.0, 5.0, 1251):
        squares = (levels + q) * (levels + q + 2 * model.spin_energy)
        if np.min(np.abs(squares)) < 1.0:
            continue
        expected, _ = box_rate(model, float(q))
        assert abs(bdg_eigen(basis, A, float(q)).Lambda - expected) <= 1e-9
        assert abs(bdg_eigen_product_form(basis, A, float(q)).Lambda - expected) <= 1e-9
        checked += 1
    assert checked > 500


def test_resonance_reaches_spin_energy():
    "Lambda = U1 n0 exactly when eta(q) hits a level, and the mode is that level."
    spin = 10.0
    levels = 1.5 * np.arange(1, 21) ** 2
    basis = lattice_basis(levels + spin)
    A = CouplingMatrix(spin * np.eye(levels.size))
    for n in (4, 7):
        q = -levels[n - 1] - spin
        for solver in (bdg_eigen, bdg_eigen_product_form):
            spectrum = solver(basis, A, q)
            assert math.isclose(spectrum.Lambda, spin, rel_tol=1e-9)
            density = spectrum.most_unstable_mode
            assert int(np.argmax(density)) == n - 1
            assert math.isclose(basis.grid.integrate(density), 1.0, rel_tol=1e-12)


def test_unstable_count():
    "One unstable eigenvalue per level with (eps + q)(eps + q + 2 U1 n0) < 0."
    spin = 10.0
    levels = 1.5 * np.arange(1, 21) ** 2
    basis = lattice_basis(levels + spin)
    A = CouplingMatrix(spin * np.eye(levels.size))
    q = -30.3
    squares = (levels + q) * (levels + q + 2 * spin)
    spectrum = bdg_eigen(basis, A, q)
    assert spectrum.unstable_count == int(np.count_nonzero(squares < 0))
    assert spectrum.eigenvalues.size == 2 * levels.size


def random_instance(rng, M):
    energies = np.sort(rng.uniform(0.0, 50.0, M))
    coupling = rng.normal(0.0, 5.0, (M, M))
    return lattice_basis(energies), CouplingMatrix(0.5 * (coupling + coupling.T))


def matched_distance(a, b):
    "Largest distance between two complex multisets under the best pairing."
    rows, cols = linear_sum_assignment(np.abs(a[:, None] - b[None, :]))
    return float(np.max(np.abs(a[rows] - b[cols])))


def test_product_form_matches_full_solve():
    "Product-form and full 2M solves give the same rate away from threshold."
    rng = np.random.default_rng(7)
    checked = 0
    for _ in range(200):
        basis, A = random_instance(rng, 12)
        q = float(rng.uniform(-80.0, 20.0))
        full = bdg_eigen(basis, A, q)
        product = bdg_eigen_product_form(basis, A, q)
        # xi^2 ~ 0 is a square-root branch point where neither solve is accurate
        if np.min(np.abs(full.eigenvalues ** 2)) < 1e-3:
            continue
        if full.Lambda == 0.0 or product.Lambda == 0.0:
            assert full.Lambda == product.Lambda
        else:
            assert np.isclose(full.Lambda, product.Lambda, rtol=1e-8, atol=0.0)
        checked += 1
    assert checked > 150


def test_product_form_squares_match_full_solve():
    "The product eigenvalues are the squared 2M eigenvalues, as multisets."
    rng = np.random.default_rng(11)
    for _ in range(20):
        basis, A = random_instance(rng, 6)
        q = float(rng.uniform(-80.0, 20.0))
        full = bdg_eigen(basis, A, q).eigenvalues ** 2
        product = bdg_eigen_product_form(basis, A, q).eigenvalues ** 2
        scale = max(1.0, float(np.max(np.abs(full))))
        assert matched_distance(full, product) <= 1e-9 * scale


def test_spectrum_quadruplet_symmetry():
    "The spectrum is closed under xi -> -xi and xi -> conj(xi)."
    rng = np.random.default_rng(3)
    for _ in range(30):
        basis, A = random_instance(rng, 10)
        q = float(rng.uniform(-80.0, 20.0))
        for solver in (bdg_eigen, bdg_eigen_product_form):
            xi = solver(basis, A, q).eigenvalues
            tolerance = 1e-7 * max(1.0, float(np.max(np.abs(xi))))
            assert matched_distance(xi, -xi) <= tolerance
            assert matched_distance(xi, np.conj(xi)) <= tolerance


def test_no_coupling_is_stable():
    "Without pair coupling every eigenvalue is real."
    basis = lattice_basis(np.linspace(1.0, 40.0, 10))
    A = CouplingMatrix(np.zeros((10, 10)))
    for q in (-100.0, -20.0, 0.0, 30.0):
        spectrum = bdg_eigen(basis, A, q)
        assert spectrum.Lambda == 0.0
        assert spectrum.most_unstable_mode is None
        assert spectrum.unstable_count == 0


def test_large_q_is_stable():
    "For q far above every level the spectrum is real."
    basis = lattice_basis(np.linspace(1.0, 40.0, 10))
    A = CouplingMatrix(3.0 * np.eye(10) + 0.5)
    assert instability_rate(1e4, basis, A) == 0.0
    assert instability_rate(1e4, basis, A, product_form=False) == 0.0


def trapped_scenario():
    "1D F=2 condensate with mu = 1 kHz."
    trap = TrapGeometry.harmonic([2.0 * math.pi * 50.0], transverse_length=1e-6)
    N = tf_atom_number(SPECIES, trap, 1000.0)
    grid = GridSpec.around(SPECIES, trap, N, (321,))
    return Scenario.prepare(SPECIES, trap, N, grid, M_cap=400, q_extent=60.0)


def test_constant_coupling_is_diagonal():
    "A uniform Omega_eff projects onto a multiple of the identity."
    scenario = trapped_scenario()
    fields = spinamp.EffectiveFields(
        V_eff=scenario.fields.V_eff,
        Omega_eff=np.full(scenario.basis.grid.shape, 7.0),
        grid=scenario.basis.grid,
    )
    A = coupling_matrix(scenario.basis, fields).A
    assert np.allclose(A, 7.0 * np.eye(scenario.basis.M), atol=1e-8 * 7.0)
    assert np.array_equal(A, A.T)


def test_trapped_f2_stable_for_positive_q():
    "An F=2 condensate (U1 > 0) is stable for q >= 0 and unstable below."
    scenario = trapped_scenario()
    for q in (0.0, 5.0, 20.0):
        assert scenario.spectrum(q).Lambda == 0.0

    bound = np.linalg.norm(scenario.coupling.A, 2)
    rates = [scenario.spectrum(q).Lambda for q in np.linspace(-60.0, -1.0, 40)]
    assert max(rates) > 0.0
    assert max(rates) <= bound * (1 + 1e-9)
    assert bound <= scenario.fields.spin_energy * (1 + 1e-9)


def test_trapped_product_mode_matches_full():
    "Both solvers reconstruct the same most-unstable mode density."
    scenario = trapped_scenario()
    rates = [(scenario.spectrum(q).Lambda, q) for q in np.linspace(-60.0, -1.0, 40)]
    _, q = max(rates)
    product = scenario.spectrum(q, product_form=True).most_unstable_mode
    full = scenario.spectrum(q, product_form=False).most_unstable_mode
    assert np.allclose(product, full, atol=1e-6 * full.max())


def test_coupling_matches_quadrature():
    "A_nn' of three box modes equals a trapezoid integral on a 4x finer grid."
    half_width = 1e-5
    grid = GridSpec((half_width,), (400,), margin=1.0)

    def modes(x):
        return np.array([
            math.sqrt(1.0 / half_width) * np.sin(n * math.pi * (x + half_width) / (2.0 * half_width))
            for n in (1, 2, 3)
        ])

    def omega(x):
        return 5.0 + 3.0 * np.cos(math.pi * x / half_width)

    x = grid.axes()[0]
    basis = ModeBasis(energies=np.array([1.0, 2.0, 3.0]), modes=modes(x), grid=grid)
    fields = spinamp.EffectiveFields(V_eff=np.zeros(grid.shape), Omega_eff=omega(x), grid=grid)
    A = coupling_matrix(basis, fields).A

    fine = np.linspace(-half_width, half_width, 4 * 401 + 1)
    phi = modes(fine)
    expected = np.array([[trapezoid(phi[i] * phi[j] * omega(fine), fine) for j in range(3)]
                         for i in range(3)])
    assert np.allclose(A, expected, rtol=0.0, atol=1e-6 * np.abs(expected).max())


def test_trapped_rate_is_continuous():
    "Lambda(q) has no jumps beyond a square-root edge on a 0.5 Hz grid."
    scenario = trapped_scenario()
    step = 0.5
    q = np.arange(-60.0, 0.0 + step / 2, step)
    rates = np.array([scenario.spectrum(float(value)).Lambda for value in q])
    spin = scenario.fields.spin_energy
    bound = 2.0 * math.sqrt(2.0 * spin * step) + step
    assert np.max(np.abs(np.diff(rates))) <= bound
    assert rates.max() > 0.0
