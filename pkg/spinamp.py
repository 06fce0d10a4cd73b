"""
Computes the magnetic-field dependent instability spectrum of a trapped spinor
Bose-Einstein condensate that starts out in the m_F=0 Zeeman sublevel.

Spin-changing collisions turn pairs of m_F=0 atoms into correlated m_F=+1/-1
pairs. Whether that pair creation grows exponentially, and how fast, is set by
the most unstable spin Bogoliubov mode of the initial condensate. The pipeline
implemented here is:

    species -> Thomas-Fermi ground state -> effective potentials
            -> eigenmodes of the effective Hamiltonian
            -> Bogoliubov spectrum of the mode-projected pair Hamiltonian
            -> sweeps over the quadratic Zeeman energy q, resonances and fits

All energies handed around between stages are in Hz (SI energy divided by
Planck's constant), lengths in meters and densities in m^-d for a
d-dimensional model.
"""

import os, math, logging
from warnings import warn as show_warning
from enum import Enum
from functools import reduce
from dataclasses import dataclass, replace
from concurrent.futures import ThreadPoolExecutor
from typing import (
    Any, Dict, Iterable, List, Mapping, NamedTuple, Optional,
    Sequence, Tuple, Union
)

import numpy as np
import scipy.linalg
import scipy.sparse as sps
from numpy.typing import NDArray
from scipy import constants, optimize, signal, stats
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh, splu

# Type aliases
FloatArray = NDArray[np.float64]
ComplexArray = NDArray[np.complex128]
LengthSpec = Union[Sequence[float], Mapping[int, float]]

log = logging.getLogger('spinamp')

H = constants.h
HBAR = constants.hbar
BOHR_RADIUS = constants.physical_constants['Bohr radius'][0]
BOHR_MAGNETON_HZ_PER_GAUSS = (
    constants.physical_constants['Bohr magneton in Hz/T'][0] * 1e-4
)

# Even total-spin collision channels per hyperfine level.
CHANNELS = {1: (0, 2), 2: (0, 2, 4)}

# |Im xi| below this (Hz) counts as a real eigenvalue.
REAL_TOLERANCE_HZ = 1e-6
MIN_GRID_MARGIN = 1.2
MIN_SWEEP_POINTS = 16
RESIDUAL_TOLERANCE = 1e-8
# Grid columns per block in mode-space products.
COLUMN_BLOCK = 16384
DEFAULT_M_CAP = {1: 400, 2: 400, 3: 800}
WORKERS_ENV = 'SPINAMP_WORKERS'


class SpinampException(Exception):
    "Catch-all for spinamp exceptions"


class ConfigException(SpinampException):
    """
    Indicates that a configuration cannot be used as given: a field is missing,
    a preset cannot be found or a species has the wrong number of scattering
    channels for its hyperfine level.
    """


class ValidationException(ConfigException):
    "A value is present but outside of its allowed range or inconsistent."


class DomainException(SpinampException):
    "The computational grid cannot hold the Thomas-Fermi condensate."


class ResolutionException(SpinampException):
    """
    Indicates that the grid spacing does not resolve the healing length.

    The message reports the offending axis together with the spacing that
    would be required.
    """

    def __init__(self, axis: int, spacing: float, required: float, healing_length: float) -> None:
        self.axis = axis
        self.spacing = spacing
        self.required = required
        self.healing_length = healing_length
        super().__init__(str(self))

    def __str__(self) -> str:
        return (
            f'Grid spacing {self.spacing:.4g} m along axis {self.axis} does '
            f'not resolve the healing length {self.healing_length:.4g} m.\n'
            f'Required spacing: <= {self.required:.4g} m (increase the point '
            f'count along this axis).'
        )


class NumericException(SpinampException):
    """
    Indicates that a numerical step failed.

    Carries a report (condition numbers, offending q, residuals) that is
    appended to the message so failures can be diagnosed from a log alone.
    """

    def __init__(self, message: str, report: Optional[Dict[str, Any]] = None) -> None:
        super().__init__(message)
        self.message = message
        self.report: Dict[str, Any] = dict(report or {})

    def __str__(self) -> str:
        message = self.message
        if self.report:
            message += '\n\nReport:\n'
            for key, value in self.report.items():
                message += f'    {key}: {value}\n'
        return message.rstrip()


class SolverException(NumericException):
    "The sparse eigensolver did not converge or violated its residual bound."


class FitException(NumericException):
    "A least-squares fit had nothing (or not enough) to fit."


class PartialResultException(NumericException):
    "Some entries of a batch failed; the partial result is kept on the error."

    def __init__(self, message: str, failures: List[Any], partial: Any = None) -> None:
        super().__init__(message, {'failures': failures})
        self.failures = failures
        self.partial = partial


class QualitativeWarning(UserWarning):
    "Emitted by estimates that are only meaningful up to an unknown prefactor."


def hz_to_joule(energy_hz: Any) -> Any:
    "Convert an energy given in Hz (E/h) to Joule."
    return energy_hz * H


def joule_to_hz(energy: Any) -> Any:
    "Convert an energy given in Joule to Hz (E/h)."
    return energy / H


def healing_length(mass: float, energy_hz: float) -> float:
    "Length scale hbar/sqrt(2 m E) for an interaction energy E given in Hz."
    return HBAR / math.sqrt(2.0 * mass * hz_to_joule(abs(energy_hz)))


# ---------------------------------------------------------------------------
# Species, traps and Zeeman energy
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpeciesParams:
    """
    Atomic species at one hyperfine level.

    Attributes:
        name(str): preset identifier, e.g. 'rb87_f2'.
        atomic_mass(float): mass in kg.
        hyperfine_F(int): 1 or 2.
        scattering_lengths(tuple): (total spin, length in m) pairs sorted by
            channel. Only even channels exist.
        U0(float): density interaction strength in J*m^3.
        U1(float): spin interaction strength in J*m^3.
        qze_coefficient(float): quadratic Zeeman coefficient in Hz/G^2
            (signed), or None when the preset does not provide one.
        source(str): literature reference for the scattering lengths.
    """
    name: str
    atomic_mass: float
    hyperfine_F: int
    scattering_lengths: Tuple[Tuple[int, float], ...]
    U0: float
    U1: float
    qze_coefficient: Optional[float] = None
    source: str = ''

    def channel_strengths(self) -> Dict[int, float]:
        "Return g_F = 4 pi hbar^2 a_F / m for every channel."
        return {
            spin: 4.0 * math.pi * HBAR ** 2 * length / self.atomic_mass
            for spin, length in self.scattering_lengths
        }

    def lengths(self) -> Dict[int, float]:
        return dict(self.scattering_lengths)


def interaction_strengths(F: int, g: Mapping[int, float]) -> Tuple[float, float]:
    """
    Combine channel strengths g_F into the density and spin interaction
    strengths (U0, U1) of the m_F=0 pair-creation problem.

    The combinations are written around g_0 so that equal channels give U1 = 0
    without rounding residue.

    Args:
        F(int): hyperfine level, 1 or 2.
        g(dict): channel strength keyed by total spin.

    Returns:
        The tuple (U0, U1) in the units of g.
    """
    if F == 1:
        u0 = g[0] + 2.0 * (g[2] - g[0]) / 3.0
        u1 = (g[2] - g[0]) / 3.0
    elif F == 2:
        u0 = g[0] + (10.0 * (g[2] - g[0]) + 18.0 * (g[4] - g[0])) / 35.0
        u1 = (7.0 * (g[4] - g[0]) + 5.0 * (g[4] - g[2])) / 35.0
    else:
        raise ConfigException(f'Hyperfine level F={F} is not supported (1 or 2).')
    return u0, u1


def build_species(name: str, F: int, scattering_lengths: LengthSpec, atomic_mass: float,
                  qze_coefficient: Optional[float] = None, source: str = '') -> SpeciesParams:
    """
    Build a species from its scattering lengths.

    Args:
        name(str): preset identifier.
        F(int): hyperfine level, 1 or 2.
        scattering_lengths: either a sequence ordered by channel (a0, a2[, a4])
            or a mapping from total spin to length. Lengths in meters.
        atomic_mass(float): mass in kg.
        qze_coefficient(float): signed quadratic Zeeman coefficient in Hz/G^2.
        source(str): literature reference.

    Raises:
        ConfigException: if the number of channels does not match F.
        ValidationException: if a mass or length is not positive.

    Returns:
        A SpeciesParams with U0 and U1 filled in.
    """
    if F not in CHANNELS:
        raise ConfigException(f'Species {name}: hyperfine level F={F} is not supported (1 or 2).')

    channels = CHANNELS[F]
    if isinstance(scattering_lengths, Mapping):
        lengths = {int(spin): float(a) for spin, a in scattering_lengths.items()}
        if set(lengths) != set(channels):
            raise ConfigException(
                f'Species {name}: F={F} needs scattering lengths for channels '
                f'{list(channels)}, got {sorted(lengths)}'
            )
    else:
        values = [float(a) for a in scattering_lengths]
        if len(values) != len(channels):
            raise ConfigException(
                f'Species {name}: F={F} needs {len(channels)} scattering '
                f'lengths, got {len(values)}'
            )
        lengths = dict(zip(channels, values))

    if not atomic_mass > 0:
        raise ValidationException(f'Species {name}: atomic mass must be positive, got {atomic_mass}')
    for spin, length in lengths.items():
        if not length > 0:
            raise ValidationException(
                f'Species {name}: scattering length a{spin} must be positive, got {length}'
            )

    ordered = tuple(sorted(lengths.items()))
    g = {spin: 4.0 * math.pi * HBAR ** 2 * a / atomic_mass for spin, a in ordered}
    u0, u1 = interaction_strengths(F, g)
    return SpeciesParams(
        name=name,
        atomic_mass=float(atomic_mass),
        hyperfine_F=int(F),
        scattering_lengths=ordered,
        U0=u0,
        U1=u1,
        qze_coefficient=None if qze_coefficient is None else float(qze_coefficient),
        source=source,
    )


def b_to_q(B: Any, species: SpeciesParams) -> Any:
    """
    Quadratic Zeeman energy (Hz) of a magnetic field B (Gauss).

    Raises:
        ConfigException: if the species has no quadratic Zeeman coefficient.
    """
    if species.qze_coefficient is None:
        raise ConfigException(
            f'Species {species.name} has no quadratic Zeeman coefficient '
            f'(qze_hz_per_gauss2) configured'
        )
    return species.qze_coefficient * np.square(B) if isinstance(B, np.ndarray) \
        else species.qze_coefficient * B * B


def breit_rabi_qze_coefficient(hyperfine_splitting_hz: float, nuclear_spin: float, F: float,
                               g_J: float, g_I: float) -> float:
    """
    Second-order Breit-Rabi quadratic Zeeman coefficient in Hz/G^2.

    q is the shift of m_F=+-1 relative to m_F=0. The upper hyperfine manifold
    (F = I + 1/2) is pushed down, the lower one up, so the coefficient is
    negative for F=2 and positive for F=1 in Rb-87.

    Args:
        hyperfine_splitting_hz(float): ground-state hyperfine splitting in Hz.
        nuclear_spin(float): I.
        F(float): hyperfine level, I +- 1/2.
        g_J(float): electron g-factor.
        g_I(float): nuclear g-factor (same sign convention as g_J).

    Returns:
        The signed coefficient such that q = coefficient * B^2.
    """
    x_per_gauss = (g_J - g_I) * BOHR_MAGNETON_HZ_PER_GAUSS / hyperfine_splitting_hz
    magnitude = hyperfine_splitting_hz * x_per_gauss ** 2 / (2.0 * nuclear_spin + 1.0) ** 2
    if math.isclose(F, nuclear_spin + 0.5):
        return -magnitude
    if math.isclose(F, nuclear_spin - 0.5):
        return magnitude
    raise ValidationException(f'F={F} is not a ground hyperfine level of I={nuclear_spin}')


class TrapKind(str, Enum):
    HARMONIC = 'harmonic'
    BOX = 'box'


# Volume of the d-dimensional unit ball.
UNIT_BALL = {1: 2.0, 2: math.pi, 3: 4.0 * math.pi / 3.0}


@dataclass(frozen=True)
class TrapGeometry:
    """
    Confinement of the condensate.

    Attributes:
        kind(TrapKind): harmonic or box.
        dimensionality(int): 1, 2 or 3.
        frequencies(tuple): angular trap frequencies in rad/s (harmonic).
        half_widths(tuple): box half-widths in m (box).
        transverse_length(float): for 1D/2D models, the frozen transverse
            extent in m. Couplings are divided by transverse_length^(3-d).
    """
    kind: TrapKind
    dimensionality: int
    frequencies: Tuple[float, ...] = ()
    half_widths: Tuple[float, ...] = ()
    transverse_length: Optional[float] = None

    def __post_init__(self) -> None:
        if self.dimensionality not in (1, 2, 3):
            raise ValidationException(f'Trap dimensionality must be 1, 2 or 3, got {self.dimensionality}')

        values = self.frequencies if self.kind == TrapKind.HARMONIC else self.half_widths
        label = 'frequencies' if self.kind == TrapKind.HARMONIC else 'half-widths'
        if len(values) != self.dimensionality:
            raise ValidationException(
                f'{self.dimensionality}D {self.kind.value} trap needs '
                f'{self.dimensionality} {label}, got {len(values)}'
            )
        if not all(v > 0 for v in values):
            raise ValidationException(f'Trap {label} must be strictly positive, got {values}')

        if self.dimensionality < 3:
            if self.transverse_length is None or not self.transverse_length > 0:
                raise ValidationException(
                    f'{self.dimensionality}D trap needs a positive transverse length'
                )

    @classmethod
    def harmonic(cls, frequencies: Sequence[float],
                 transverse_length: Optional[float] = None) -> 'TrapGeometry':
        "Harmonic trap from angular frequencies in rad/s."
        values = tuple(float(w) for w in frequencies)
        return cls(TrapKind.HARMONIC, len(values), frequencies=values,
                   transverse_length=transverse_length)

    @classmethod
    def box(cls, half_widths: Sequence[float],
            transverse_length: Optional[float] = None) -> 'TrapGeometry':
        "Hard-wall box from half-widths in m."
        values = tuple(float(w) for w in half_widths)
        return cls(TrapKind.BOX, len(values), half_widths=values,
                   transverse_length=transverse_length)

    def coupling_scale(self) -> float:
        "Factor turning a 3D coupling (J*m^3) into a d-dimensional one."
        if self.dimensionality == 3:
            return 1.0
        assert self.transverse_length is not None
        return 1.0 / self.transverse_length ** (3 - self.dimensionality)

    def mean_frequency(self) -> float:
        "Geometric mean angular frequency (rad/s) of a harmonic trap."
        if self.kind != TrapKind.HARMONIC:
            raise ValidationException('A box trap has no trap frequency')
        return float(np.prod(self.frequencies) ** (1.0 / self.dimensionality))

    def potential(self, species: SpeciesParams, grid: 'GridSpec') -> FloatArray:
        """
        Confining potential V(r) on the grid, in Hz.

        The box potential is zero on every grid node: the walls coincide with
        the Dirichlet boundary of the grid.
        """
        if grid.ndim != self.dimensionality:
            raise ValidationException(
                f'Grid has {grid.ndim} axes but the trap is {self.dimensionality}D'
            )
        if self.kind == TrapKind.BOX:
            return np.zeros(grid.shape)

        potential = np.zeros(grid.shape)
        for omega, coordinate in zip(self.frequencies, grid.mesh()):
            potential += 0.5 * species.atomic_mass * omega ** 2 * coordinate ** 2
        return joule_to_hz(potential)


@dataclass(frozen=True)
class ZeemanConfig:
    "Quadratic Zeeman energy q in Hz, optionally with the field B it came from."
    q: float
    B: Optional[float] = None

    @classmethod
    def from_field(cls, B: float, species: SpeciesParams) -> 'ZeemanConfig':
        return cls(q=float(b_to_q(B, species)), B=float(B))


def reference_length(species: SpeciesParams, trap: TrapGeometry) -> float:
    """
    Natural length of the problem, sqrt(hbar / (m omega_ref)) with omega_ref
    the geometric mean trap frequency. Box traps use the geometric mean
    half-width instead.
    """
    if trap.kind == TrapKind.BOX:
        return float(np.prod(trap.half_widths) ** (1.0 / trap.dimensionality))
    return math.sqrt(HBAR / (species.atomic_mass * trap.mean_frequency()))


# ---------------------------------------------------------------------------
# Thomas-Fermi mean field
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """
    Uniform Cartesian grid made of the interior nodes of a Dirichlet box.

    Along every axis the walls sit at +-half_width and the nodes are
    x_i = -L + (i + 1) d with d = 2 L / (points + 1).

    Attributes:
        half_widths(tuple): extent of the box along each axis in m.
        points(tuple): node count along each axis (>= 3).
        margin(float): ratio between half-width and Thomas-Fermi radius the
            grid was built with (1.0 for box traps).
    """
    half_widths: Tuple[float, ...]
    points: Tuple[int, ...]
    margin: float = 1.5

    def __post_init__(self) -> None:
        if len(self.half_widths) != len(self.points):
            raise ValidationException(
                f'Grid has {len(self.half_widths)} extents but {len(self.points)} point counts'
            )
        if not 1 <= len(self.points) <= 3:
            raise ValidationException(f'Grid must have 1 to 3 axes, got {len(self.points)}')
        if any(n < 3 for n in self.points):
            raise ValidationException(f'Grid needs at least 3 points per axis, got {self.points}')
        if not all(w > 0 for w in self.half_widths):
            raise ValidationException(f'Grid extents must be positive, got {self.half_widths}')

    @classmethod
    def around(cls, species: SpeciesParams, trap: TrapGeometry, N: float,
               points: Sequence[int], margin: float = 1.5) -> 'GridSpec':
        """
        Build the default grid for a condensate of N atoms.

        Harmonic traps get margin * Thomas-Fermi radius per axis, box traps get
        exactly the box.
        """
        points = tuple(int(n) for n in points)
        if trap.kind == TrapKind.BOX:
            return cls(trap.half_widths, points, margin=1.0)

        if margin < MIN_GRID_MARGIN:
            raise ValidationException(f'Grid margin must be >= {MIN_GRID_MARGIN}, got {margin}')
        mu = tf_chemical_potential(species, trap, N)
        radii = tf_radii(species, trap, mu)
        return cls(tuple(margin * r for r in radii), points, margin=float(margin))

    @property
    def ndim(self) -> int:
        return len(self.points)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.points)

    @property
    def size(self) -> int:
        return int(np.prod(self.points))

    @property
    def spacing(self) -> Tuple[float, ...]:
        return tuple(2.0 * w / (n + 1) for w, n in zip(self.half_widths, self.points))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axes(self) -> List[FloatArray]:
        "Node coordinates along each axis."
        return [
            -w + d * np.arange(1, n + 1)
            for w, n, d in zip(self.half_widths, self.points, self.spacing)
        ]

    def mesh(self) -> Tuple[FloatArray, ...]:
        return tuple(np.meshgrid(*self.axes(), indexing='ij'))

    def integrate(self, values: FloatArray) -> float:
        "Grid-cell-volume weighted sum."
        return float(np.sum(values) * self.cell_volume)


def tf_chemical_potential(species: SpeciesParams, trap: TrapGeometry, N: float) -> float:
    """
    Closed-form Thomas-Fermi chemical potential (Hz) in the continuum.

    For a d-dimensional harmonic trap mu scales as N^(2/(d+2)), i.e. N^(2/5)
    in 3D. For a box mu = N U0 / volume.
    """
    u0 = joule_to_hz(species.U0 * trap.coupling_scale())
    if trap.kind == TrapKind.BOX:
        volume = float(np.prod([2.0 * w for w in trap.half_widths]))
        return N * u0 / volume

    d = trap.dimensionality
    mass = species.atomic_mass
    extent = np.prod([math.sqrt(2.0 / (mass * w ** 2)) for w in trap.frequencies])
    # N u0 = mu_J^(1 + d/2) * extent * V_d * 2 / (d + 2), mu_J in Joule
    prefactor = extent * UNIT_BALL[d] * 2.0 / (d + 2)
    mu_joule = (N * hz_to_joule(u0) / prefactor) ** (2.0 / (d + 2))
    return float(joule_to_hz(mu_joule))


def tf_atom_number(species: SpeciesParams, trap: TrapGeometry, mu: float) -> float:
    "Inverse of tf_chemical_potential: atoms needed for a chemical potential mu (Hz)."
    u0 = joule_to_hz(species.U0 * trap.coupling_scale())
    if trap.kind == TrapKind.BOX:
        volume = float(np.prod([2.0 * w for w in trap.half_widths]))
        return mu * volume / u0

    d = trap.dimensionality
    mass = species.atomic_mass
    extent = np.prod([math.sqrt(2.0 / (mass * w ** 2)) for w in trap.frequencies])
    prefactor = extent * UNIT_BALL[d] * 2.0 / (d + 2)
    return float(hz_to_joule(mu) ** (1.0 + d / 2.0) * prefactor / hz_to_joule(u0))


def tf_radii(species: SpeciesParams, trap: TrapGeometry, mu: float) -> Tuple[float, ...]:
    "Thomas-Fermi radii (m) for a chemical potential mu in Hz."
    if trap.kind == TrapKind.BOX:
        return trap.half_widths
    mu_joule = hz_to_joule(mu)
    return tuple(
        math.sqrt(2.0 * mu_joule / (species.atomic_mass * w ** 2)) for w in trap.frequencies
    )


@dataclass(frozen=True, eq=False)
class CondensateState:
    """
    Thomas-Fermi ground state of the m_F=0 condensate.

    Attributes:
        mu(float): chemical potential in Hz.
        n0(ndarray): density on the grid in m^-d.
        N(float): atom number.
        peak_density(float): maximum of n0.
        grid(GridSpec): grid the density lives on.
    """
    mu: float
    n0: FloatArray
    N: float
    peak_density: float
    grid: GridSpec


def solve_tf(species: SpeciesParams, trap: TrapGeometry, N: float, grid: GridSpec) -> CondensateState:
    """
    Thomas-Fermi density n0 = max(0, (mu - V)/U0) normalized to N on the grid.

    Box traps are normalized in closed form over the grid cells. Otherwise mu
    is found by bisection of the discrete atom count on [0, 10 mu_closed],
    where mu_closed is the continuum estimate.

    Raises:
        ValidationException: if N or U0 is not positive or grid and trap
            disagree on the dimensionality.
        DomainException: if the grid does not contain the condensate with at
            least the minimum margin.
        NumericException: if the normalization misses N by more than 1e-10.

    Returns:
        A CondensateState.
    """
    if not N > 0:
        raise ValidationException(f'Atom number must be positive, got {N}')
    if not species.U0 > 0:
        raise ValidationException(
            f'Species {species.name} has U0={species.U0:.3e} J m^3; the Thomas-Fermi '
            f'solver needs a repulsive condensate (U0 > 0)'
        )
    if grid.ndim != trap.dimensionality:
        raise ValidationException(
            f'Grid has {grid.ndim} axes but the trap is {trap.dimensionality}D'
        )

    u0 = joule_to_hz(species.U0 * trap.coupling_scale())
    estimate = tf_chemical_potential(species, trap, N)
    potential = trap.potential(species, grid)

    if trap.kind == TrapKind.BOX:
        mu = N * u0 / (grid.size * grid.cell_volume)
    else:
        radii = tf_radii(species, trap, estimate)
        for axis, (radius, width) in enumerate(zip(radii, grid.half_widths)):
            if width < MIN_GRID_MARGIN * radius:
                raise DomainException(
                    f'Grid half-width {width:.4g} m along axis {axis} does not '
                    f'contain the Thomas-Fermi radius {radius:.4g} m with the '
                    f'minimum margin {MIN_GRID_MARGIN}. Increase the grid margin.'
                )

        def excess(mu: float) -> float:
            return grid.integrate(np.maximum(0.0, mu - potential)) / u0 - N

        mu = optimize.bisect(
            excess, 0.0, 10.0 * estimate, xtol=1e-14 * estimate, rtol=1e-14, maxiter=400
        )

    n0 = np.maximum(0.0, mu - potential) / u0

    if trap.kind == TrapKind.HARMONIC:
        for axis in range(grid.ndim):
            edges = np.take(n0, [0, grid.points[axis] - 1], axis=axis)
            if np.any(edges > 0):
                raise DomainException(
                    f'Condensate reaches the grid edge along axis {axis}. '
                    f'Increase the grid margin.'
                )

    counted = grid.integrate(n0)
    if abs(counted - N) > 1e-10 * N:
        raise NumericException(
            'Thomas-Fermi normalization failed',
            {'requested_N': N, 'integrated_N': counted, 'mu_hz': mu},
        )

    log.info(f'Thomas-Fermi: N={N:.4g} mu={mu:.6g} Hz peak density={n0.max():.4g} m^-{grid.ndim}')
    return CondensateState(mu=float(mu), n0=n0, N=float(N), peak_density=float(n0.max()), grid=grid)


@dataclass(frozen=True, eq=False)
class EffectiveFields:
    """
    Potentials felt by the m_F=+-1 fluctuations, both in Hz.

    Attributes:
        V_eff(ndarray): V + (U0 + U1) n0 - mu.
        Omega_eff(ndarray): U1 n0, the local pair-creation coupling.
        grid(GridSpec): grid of both fields.
        density_energy(float): U0 * peak density in Hz.
        spin_energy(float): U1 * peak density in Hz (signed).
    """
    V_eff: FloatArray
    Omega_eff: FloatArray
    grid: GridSpec
    density_energy: float = 0.0
    spin_energy: float = 0.0


def effective_fields(species: SpeciesParams, trap: TrapGeometry, state: CondensateState) -> EffectiveFields:
    """
    Effective potential and pair coupling of the m_F=+-1 components.

    Inside the Thomas-Fermi support V_eff reduces to (U1/U0)(mu - V): a
    mexican hat for U1 > 0 with its rim on the Thomas-Fermi surface.

    Raises:
        ValidationException: if the state was computed on a grid that does not
            fit the trap.
    """
    grid = state.grid
    if grid.ndim != trap.dimensionality or state.n0.shape != grid.shape:
        raise ValidationException(
            f'Condensate density of shape {state.n0.shape} does not match the '
            f'{trap.dimensionality}D trap / grid {grid.shape}'
        )

    scale = trap.coupling_scale()
    u0 = joule_to_hz(species.U0 * scale)
    u1 = joule_to_hz(species.U1 * scale)
    potential = trap.potential(species, grid)

    return EffectiveFields(
        V_eff=potential + (u0 + u1) * state.n0 - state.mu,
        Omega_eff=u1 * state.n0,
        grid=grid,
        density_energy=float(u0 * state.peak_density),
        spin_energy=float(u1 * state.peak_density),
    )


def column_density(values: FloatArray, grid: GridSpec, axis: int) -> FloatArray:
    "Integrate a field along one axis, as an absorption image along that axis would."
    return np.sum(values, axis=axis) * grid.spacing[axis]


# ---------------------------------------------------------------------------
# Analytic oracles
# ---------------------------------------------------------------------------


class Regime(str, Enum):
    STABLE = 'Stable'
    UNSTABLE_ZERO_K = 'UnstableZeroK'
    UNSTABLE_FINITE_K = 'UnstableFiniteK'


@dataclass(frozen=True)
class HomogeneousRegime:
    """
    Instability regime of a homogeneous m_F=0 condensate.

    Attributes:
        regime(Regime): classification of q.
        q_cr(float): critical Zeeman energy -U1 n0 in Hz.
        k_max(float): wavenumber (1/m) of the most unstable modes, only for
            UnstableFiniteK and when the atomic mass is known.
    """
    regime: Regime
    q_cr: float
    k_max: Optional[float] = None


def homogeneous_rate(q: float, q_cr: float, mass: Optional[float] = None) -> Tuple[float, HomogeneousRegime]:
    """
    Instability rate (Hz) of the most unstable mode of a homogeneous condensate.

    Stable above q_cr + |q_cr|, a circular arc sqrt(q_cr^2 - (q - q_cr)^2)
    between q_cr and q_cr + |q_cr| (k = 0 most unstable), and the plateau |q_cr|
    below q_cr. The boundary q = q_cr belongs to the arc, where both formulas
    agree.

    Args:
        q(float): quadratic Zeeman energy in Hz.
        q_cr(float): -U1 n0 in Hz.
        mass(float): atomic mass in kg, used for k_max.

    Returns:
        The rate in Hz and the HomogeneousRegime.
    """
    if q >= q_cr + abs(q_cr):
        return 0.0, HomogeneousRegime(Regime.STABLE, q_cr)

    if q >= q_cr:
        rate = math.sqrt(max(0.0, q_cr ** 2 - (q - q_cr) ** 2))
        return rate, HomogeneousRegime(Regime.UNSTABLE_ZERO_K, q_cr, 0.0 if mass else None)

    k_max = None
    if mass:
        k_max = math.sqrt(2.0 * mass * hz_to_joule(q_cr - q)) / HBAR
    return abs(q_cr), HomogeneousRegime(Regime.UNSTABLE_FINITE_K, q_cr, k_max)


def homogeneous_curve(q_values: Iterable[float], q_cr: float) -> FloatArray:
    "homogeneous_rate over many q values, the featureless reference curve."
    return np.array([homogeneous_rate(float(q), q_cr)[0] for q in q_values])


@dataclass(frozen=True, eq=False)
class BoxModel:
    """
    Condensate of uniform density in a hard-wall box.

    Attributes:
        levels(ndarray): kinetic level energies eps_n in Hz, lowest first.
        n0(float): uniform density.
        U1(float): spin interaction strength, same volume units as 1/n0.
    """
    levels: FloatArray
    n0: float
    U1: float

    def __post_init__(self) -> None:
        levels = np.asarray(self.levels, dtype=float)
        if levels.ndim != 1 or levels.size < 2:
            raise ValidationException('A box model needs at least two levels')
        if np.any(np.diff(levels) <= 0):
            raise ValidationException('Box levels must be strictly increasing')
        object.__setattr__(self, 'levels', levels)

    @classmethod
    def from_box(cls, width: float, mass: float, count: int, n0: float, U1: float) -> 'BoxModel':
        "1D box of full width `width` (m): eps_n = n^2 h / (8 m width^2), n = 1..count."
        return cls(levels=box_levels(width, mass, count), n0=n0, U1=U1)

    @property
    def spin_energy(self) -> float:
        "U1 n0 in Hz."
        return float(joule_to_hz(self.U1 * self.n0))

    def eta(self, q: float) -> float:
        "Detuning -q - U1 n0; a level at this energy is resonant."
        return -q - self.spin_energy


def box_levels(width: float, mass: float, count: int) -> FloatArray:
    "Kinetic levels (Hz) of a 1D hard-wall box of full width `width` (m)."
    n = np.arange(1, count + 1)
    return n ** 2 * H / (8.0 * mass * width ** 2)


def box_rate(model: BoxModel, q: float) -> Tuple[float, int]:
    """
    Instability rate (Hz) of a box condensate, xi_n^2 = (eps_n + q)(eps_n + q + 2 U1 n0).

    Above the threshold eta(q) > (eps_1 + eps_2)/2 the rate is taken from the
    level closest to eta(q); below it the maximum over all levels is used.

    Returns:
        The rate in Hz and the selected level number n (1 = lowest level).
    """
    levels = model.levels
    spin = model.spin_energy
    xi2 = (levels + q) * (levels + q + 2.0 * spin)
    eta = model.eta(q)

    if eta > 0.5 * (levels[0] + levels[1]):
        index = int(np.argmin(np.abs(levels - eta)))
        rate = math.sqrt(max(0.0, -xi2[index]))
    else:
        rates = np.sqrt(np.maximum(0.0, -xi2))
        index = int(np.argmax(rates))
        rate = float(rates[index])
    return rate, index + 1


# ---------------------------------------------------------------------------
# Eigenmodes of the effective Hamiltonian
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HeffOperator:
    """
    Finite-difference H_eff = -hbar^2 nabla^2 / 2m + V_eff in Hz.

    Attributes:
        matrix(csr_matrix): symmetric sparse matrix acting on C-ordered fields.
        grid(GridSpec): grid the operator acts on.
        potential_min(float): min(V_eff), a lower bound of the spectrum.
        potential(ndarray): V_eff on the grid, flattened, in Hz.
        mass(float): particle mass in kg.
    """
    matrix: sps.csr_matrix
    grid: GridSpec
    potential_min: float
    potential: FloatArray
    mass: float

    @property
    def size(self) -> int:
        return int(self.matrix.shape[0])


def hopping_energy(mass: float, spacing: float) -> float:
    "Finite-difference hopping t = hbar^2 / (2 m d^2) in Hz."
    return float(joule_to_hz(HBAR ** 2 / (2.0 * mass * spacing ** 2)))


def discretize_heff(fields: EffectiveFields, species: SpeciesParams, grid: GridSpec,
                    resolution: str = 'density', resolution_factor: float = 0.5) -> HeffOperator:
    """
    Second-order central-difference H_eff with Dirichlet walls.

    Args:
        fields(EffectiveFields): V_eff provides the diagonal.
        species(SpeciesParams): provides the mass.
        grid(GridSpec): must be the grid of the fields.
        resolution(str): healing length the spacing is checked against:
            'density' (hbar/sqrt(2 m U0 n_peak)), 'spin'
            (hbar/sqrt(2 m |U1| n_peak)) or 'none'.
        resolution_factor(float): spacing must not exceed this fraction of
            the healing length.

    Raises:
        ValidationException: on grid mismatch or an unknown resolution mode.
        ResolutionException: if an axis is under-resolved.

    Returns:
        A HeffOperator.
    """
    if fields.grid != grid:
        raise ValidationException('Effective fields were computed on a different grid')

    energies = {'density': fields.density_energy, 'spin': fields.spin_energy, 'none': 0.0}
    if resolution not in energies:
        raise ValidationException(f'Unknown resolution check {resolution!r}')

    energy = energies[resolution]
    if energy != 0.0:
        xi = healing_length(species.atomic_mass, energy)
        for axis, d in enumerate(grid.spacing):
            if d > resolution_factor * xi:
                raise ResolutionException(axis, d, resolution_factor * xi, xi)

    def second_difference(n: int, t: float) -> sps.csr_matrix:
        return sps.diags([-t, 2.0 * t, -t], [-1, 0, 1], shape=(n, n), format='csr')

    def identity(n: int) -> sps.csr_matrix:
        return sps.identity(n, format='csr')

    kinetic = sps.csr_matrix((grid.size, grid.size))
    for axis, (n, d) in enumerate(zip(grid.points, grid.spacing)):
        factors = [identity(m) for m in grid.points]
        factors[axis] = second_difference(n, hopping_energy(species.atomic_mass, d))
        kinetic = kinetic + reduce(lambda a, b: sps.kron(a, b, format='csr'), factors)

    matrix = (kinetic + sps.diags(fields.V_eff.ravel(), format='csr')).tocsr()
    return HeffOperator(matrix=matrix, grid=grid, potential_min=float(fields.V_eff.min()),
                        potential=fields.V_eff.ravel().copy(), mass=float(species.atomic_mass))


@dataclass(frozen=True, eq=False)
class ModeBasis:
    """
    Lowest eigenpairs of H_eff.

    Attributes:
        energies(ndarray): eps_n in Hz, ascending.
        modes(ndarray): shape (M, grid.size); real fields normalized so that
            sum(phi_n phi_m) * cell_volume = delta_nm.
        grid(GridSpec): grid of the modes.
        energy_cutoff(float): cutoff the basis was built for, in Hz.
        cap(int): maximum basis size that was allowed.
    """
    energies: FloatArray
    modes: FloatArray
    grid: GridSpec
    energy_cutoff: float = math.inf
    cap: int = 0

    @property
    def M(self) -> int:
        return int(self.energies.size)

    def mode_field(self, n: int) -> FloatArray:
        return self.modes[n].reshape(self.grid.shape)

    def overlap(self) -> FloatArray:
        "Discrete inner products <phi_n|phi_m>."
        return (self.modes @ self.modes.T) * self.grid.cell_volume

    def orthonormality_error(self) -> float:
        return float(np.max(np.abs(self.overlap() - np.eye(self.M))))


def default_energy_cutoff(q_extent: float, fields: EffectiveFields) -> float:
    "Basis cutoff |q|_max + 4 |U1| n_peak covering every resonance of a sweep."
    return abs(q_extent) + 4.0 * abs(fields.spin_energy)


def _moment_operator(grid: GridSpec) -> FloatArray:
    """
    Position weight used to order degenerate modes: first and second
    coordinate moments with incommensurate axis weights.
    """
    golden = (math.sqrt(5.0) - 1.0) / 2.0
    weight = np.zeros(grid.size)
    for axis, (coordinate, width) in enumerate(zip(grid.mesh(), grid.half_widths)):
        x = coordinate.ravel() / width
        weight += golden ** axis * (x + 0.5 * golden * x ** 2)
    return weight


def _canonicalize(energies: FloatArray, vectors: FloatArray, grid: GridSpec) -> FloatArray:
    """
    Make eigenvectors reproducible: rotate degenerate subspaces onto the
    eigenbasis of the coordinate-moment operator (ordered by moment) and fix
    every sign so the largest-magnitude entry is positive. Works in place.
    """
    weight = _moment_operator(grid)

    start = 0
    while start < energies.size:
        stop = start + 1
        tolerance = 1e-9 * max(1.0, abs(energies[start]))
        while stop < energies.size and energies[stop] - energies[stop - 1] <= tolerance:
            stop += 1
        if stop - start > 1:
            block = vectors[:, start:stop]
            moments = block.T @ (weight[:, None] * block)
            _, rotation = scipy.linalg.eigh(0.5 * (moments + moments.T))
            vectors[:, start:stop] = block @ rotation
        start = stop

    for j in range(vectors.shape[1]):
        if vectors[np.argmax(np.abs(vectors[:, j])), j] < 0:
            vectors[:, j] *= -1.0
    return vectors


def estimate_mode_count(op: HeffOperator, energy: float) -> float:
    """
    Semiclassical number of H_eff eigenvalues below `energy` (Hz): the
    phase-space volume where hbar^2 k^2 / 2m + V_eff < energy, in units of
    (2 pi)^d.
    """
    depth = np.maximum(0.0, energy - op.potential)
    k = np.sqrt(2.0 * op.mass * hz_to_joule(depth)) / HBAR
    d = op.grid.ndim
    return UNIT_BALL[d] / (2.0 * math.pi) ** d * op.grid.integrate(k ** d)


def shift_invert_operator(op: HeffOperator, sigma: float) -> LinearOperator:
    """
    (H_eff - sigma)^-1 applied through one sparse LU factorization.

    sigma must lie below the spectrum, which makes the shifted matrix positive
    definite: pivots stay on the diagonal and the columns follow a
    minimum-degree ordering of A^T + A to limit fill on 3D stencils.

    Raises:
        SolverException: if the factorization fails or runs out of memory.
    """
    shifted = (op.matrix - sigma * sps.identity(op.size, format='csr')).tocsc()
    try:
        lu = splu(shifted, permc_spec='MMD_AT_PLUS_A', diag_pivot_thresh=0.0,
                  options={'SymmetricMode': True})
    except (RuntimeError, MemoryError) as error:
        raise SolverException(
            'Sparse LU factorization of the shifted H_eff failed',
            {'matrix_size': op.size, 'shift_hz': sigma, 'error': str(error)},
        ) from error

    log.debug(f'H_eff LU: {lu.L.nnz + lu.U.nnz} nonzeros for {op.size} grid points')
    return LinearOperator(shifted.shape, matvec=lu.solve, dtype=np.float64)


def _lowest_eigenpairs(op: HeffOperator, k: int, seed: int, method: str,
                       max_iterations: Optional[int], dense_limit: int,
                       inverse: Optional[LinearOperator] = None) -> Tuple[FloatArray, FloatArray]:
    "Lowest k eigenpairs (ascending) with unit Euclidean eigenvectors."
    n = op.size
    if n <= dense_limit or k >= n - 1:
        k = min(k, n)
        values, vectors = scipy.linalg.eigh(op.matrix.toarray(), subset_by_index=[0, k - 1])
        return values, vectors

    v0 = np.random.default_rng(seed).standard_normal(n)
    # Lanczos basis size; ncv vectors of n floats dominate the ARPACK memory
    ncv = min(n, k + max(k // 4, 32))
    try:
        if method == 'shift-invert':
            sigma = op.potential_min - 1.0
            if inverse is None:
                inverse = shift_invert_operator(op, sigma)
            values, vectors = eigsh(op.matrix, k=k, sigma=sigma, which='LM', OPinv=inverse,
                                    v0=v0, ncv=ncv, maxiter=max_iterations, tol=0)
        else:
            values, vectors = eigsh(op.matrix, k=k, which='SA', v0=v0, ncv=ncv,
                                    maxiter=max_iterations, tol=0)
    except ArpackNoConvergence as error:
        raise SolverException(
            f'Eigensolver did not converge for the lowest {k} modes',
            {
                'method': method,
                'converged': len(error.eigenvalues),
                'max_iterations': max_iterations,
                'matrix_size': n,
            },
        ) from error

    order = np.argsort(values, kind='stable')
    return values[order], vectors[:, order]


def residual_norms(op: HeffOperator, energies: FloatArray, vectors: FloatArray) -> FloatArray:
    "||H v - eps v|| for unit Euclidean eigenvectors, a few columns at a time."
    norms = np.empty(energies.size)
    step = 64
    for start in range(0, energies.size, step):
        block = vectors[:, start:start + step]
        norms[start:start + step] = np.linalg.norm(
            op.matrix @ block - block * energies[start:start + step], axis=0
        )
    return norms


def solve_lowest_modes(op: HeffOperator, M_cap: int, cutoff: float, seed: int = 0,
                       method: str = 'shift-invert', max_iterations: Optional[int] = None,
                       dense_limit: int = 2000, initial_modes: int = 32) -> ModeBasis:
    """
    Lowest eigenpairs of H_eff up to an energy cutoff.

    One request covers the semiclassical mode count below the cutoff plus a
    margin (see estimate_mode_count). If the highest returned mode still lies
    below the cutoff the request doubles, up to M_cap, reusing the single
    shift-invert factorization. The basis keeps every mode up to and including
    the first one above the cutoff. Degenerate subspaces are rotated into a
    reproducible basis (see _canonicalize).

    Args:
        op(HeffOperator): the discretized effective Hamiltonian.
        M_cap(int): maximum number of modes.
        cutoff(float): energy cutoff in Hz.
        seed(int): seed of the Lanczos starting vector.
        method(str): 'shift-invert' (default) or 'lanczos'.
        max_iterations(int): ARPACK iteration limit.
        dense_limit(int): grids up to this size use dense LAPACK.
        initial_modes(int): smallest first request.

    Raises:
        SolverException: on non-convergence, a failed factorization or when a
            residual exceeds 1e-8 * max(1, |eps_n|).

    Returns:
        A ModeBasis.
    """
    if M_cap < 1:
        raise ValidationException(f'Mode cap must be positive, got {M_cap}')
    if method not in ('shift-invert', 'lanczos'):
        raise ValidationException(f'Unknown eigensolver {method!r}')

    M_cap = min(M_cap, op.size)
    inverse = None
    if method == 'shift-invert' and op.size > dense_limit:
        # sigma sits below the spectrum: every eigenvalue is >= min(V_eff)
        inverse = shift_invert_operator(op, op.potential_min - 1.0)

    estimate = estimate_mode_count(op, cutoff) if math.isfinite(cutoff) else float(M_cap)
    k = min(M_cap, max(initial_modes, int(math.ceil(1.1 * estimate)) + 8))
    log.debug(f'H_eff: about {estimate:.1f} modes below {cutoff:.6g} Hz, requesting {k}')
    while True:
        energies, vectors = _lowest_eigenpairs(op, k, seed, method, max_iterations,
                                               dense_limit, inverse)
        log.debug(f'H_eff: {k} modes up to {energies[-1]:.6g} Hz (cutoff {cutoff:.6g} Hz)')
        if energies[-1] > cutoff or k >= M_cap:
            break
        k = min(2 * k, M_cap)

    above = np.nonzero(energies > cutoff)[0]
    count = int(above[0]) + 1 if above.size else energies.size
    energies, vectors = energies[:count], vectors[:, :count]

    vectors = _canonicalize(energies, vectors, op.grid)

    residuals = residual_norms(op, energies, vectors)
    bound = RESIDUAL_TOLERANCE * np.maximum(1.0, np.abs(energies))
    if np.any(residuals > bound):
        worst = int(np.argmax(residuals / bound))
        raise SolverException(
            'Eigenpair residuals exceed the tolerance',
            {
                'worst_mode': worst,
                'energy_hz': float(energies[worst]),
                'residual': float(residuals[worst]),
                'bound': float(bound[worst]),
            },
        )

    if count == M_cap and energies[-1] <= cutoff:
        log.warning(f'Mode cap {M_cap} reached at {energies[-1]:.6g} Hz below the cutoff {cutoff:.6g} Hz')

    log.info(f'H_eff basis: {count} modes, {energies[0]:.6g} .. {energies[-1]:.6g} Hz')
    modes = np.ascontiguousarray(vectors.T)
    del vectors
    modes /= math.sqrt(op.grid.cell_volume)
    return ModeBasis(energies=energies, modes=modes, grid=op.grid,
                     energy_cutoff=float(cutoff), cap=int(M_cap))


# ---------------------------------------------------------------------------
# Bogoliubov spectrum
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CouplingMatrix:
    "A_nn' = integral of Omega_eff phi_n phi_n' in Hz, exactly symmetric."
    A: FloatArray

    @property
    def M(self) -> int:
        return int(self.A.shape[0])


def coupling_matrix(basis: ModeBasis, fields: EffectiveFields) -> CouplingMatrix:
    """
    Project the pair coupling Omega_eff onto the mode basis.

    Raises:
        ValidationException: if basis and fields live on different grids.
    """
    if basis.grid != fields.grid:
        raise ValidationException('Mode basis and effective fields live on different grids')
    omega = fields.Omega_eff.ravel()
    A = np.zeros((basis.M, basis.M))
    for start in range(0, omega.size, COLUMN_BLOCK):
        block = basis.modes[:, start:start + COLUMN_BLOCK]
        A += (block * omega[start:start + COLUMN_BLOCK]) @ block.T
    A *= basis.grid.cell_volume
    return CouplingMatrix(0.5 * (A + A.T))


@dataclass(frozen=True, eq=False)
class BdGSpectrum:
    """
    Spin Bogoliubov spectrum at one q.

    Attributes:
        q(float): quadratic Zeeman energy in Hz.
        eigenvalues(ndarray): 2M complex xi_nu in Hz.
        Lambda(float): max |Im xi_nu| in Hz, 0 when all are real.
        most_unstable_mode(ndarray): normalized density of the most unstable
            mode on the grid, None when the spectrum is stable.
        unstable_count(int): number of eigenvalues with Im xi > 0.
    """
    q: float
    eigenvalues: ComplexArray
    Lambda: float
    most_unstable_mode: Optional[FloatArray]
    unstable_count: int


def _most_unstable(values: ComplexArray) -> Tuple[float, int, int]:
    "Rate, index of the most unstable eigenvalue and the unstable count."
    rates = np.abs(values.imag)
    # ties resolved towards positive imaginary part, then smaller real part
    index = int(np.lexsort((values.real, -values.imag, -rates))[0])
    rate = float(rates[index])
    if rate < REAL_TOLERANCE_HZ:
        rate = 0.0
    unstable = int(np.count_nonzero(values.imag > REAL_TOLERANCE_HZ))
    return rate, index, unstable


def _mode_density(basis: ModeBasis, coefficients: ComplexArray) -> FloatArray:
    "|sum_n c_n phi_n|^2 normalized to unit integral, on the grid."
    amplitude = coefficients @ basis.modes
    density = np.abs(amplitude) ** 2
    total = basis.grid.integrate(density)
    if total > 0:
        density = density / total
    return density.reshape(basis.grid.shape)


def _check_finite(values: ComplexArray, matrix: NDArray[Any], q: float) -> None:
    if not np.all(np.isfinite(values)):
        raise NumericException(
            'Bogoliubov eigensolve returned non-finite eigenvalues',
            {'q_hz': q, 'condition': float(np.linalg.cond(matrix))},
        )


def bdg_matrix(energies: FloatArray, A: CouplingMatrix, q: float) -> FloatArray:
    "The 2M x 2M block matrix [[D, A], [-A, -D]] with D = diag(eps_n + q)."
    D = np.diag(energies + q)
    return np.block([[D, A.A], [-A.A, -D]])


def bdg_eigen(basis: ModeBasis, A: CouplingMatrix, q: float) -> BdGSpectrum:
    """
    Full 2M x 2M Bogoliubov eigensolve of the mode-projected pair Hamiltonian.

    The most unstable mode is mapped back to the grid with the upper (u) block
    of its eigenvector.

    Raises:
        NumericException: when LAPACK fails, with the condition number.
    """
    matrix = bdg_matrix(basis.energies, A, q)
    try:
        values, vectors = scipy.linalg.eig(matrix)
    except (np.linalg.LinAlgError, ValueError) as error:
        raise NumericException(
            'Bogoliubov eigensolve failed',
            {'q_hz': q, 'condition': float(np.linalg.cond(matrix)), 'error': str(error)},
        ) from error
    _check_finite(values, matrix, q)

    rate, index, unstable = _most_unstable(values)
    mode = None
    if rate > 0:
        mode = _mode_density(basis, vectors[:basis.M, index])
    return BdGSpectrum(q=float(q), eigenvalues=values, Lambda=rate,
                       most_unstable_mode=mode, unstable_count=unstable)


def bdg_eigen_product_form(basis: ModeBasis, A: CouplingMatrix, q: float) -> BdGSpectrum:
    """
    Bogoliubov spectrum from the M x M product (D - A)(D + A), whose
    eigenvalues are xi^2.

    With s = u + v the eigenvector of the product, u - v = (D + A) s / xi,
    which recovers the u block for the mode profile without the 2M solve.

    Raises:
        NumericException: when LAPACK fails, with the condition number.
    """
    d = basis.energies + q
    plus = np.diag(d) + A.A
    minus = np.diag(d) - A.A
    product = minus @ plus
    try:
        squares, vectors = scipy.linalg.eig(product)
    except (np.linalg.LinAlgError, ValueError) as error:
        raise NumericException(
            'Bogoliubov product-form eigensolve failed',
            {'q_hz': q, 'condition': float(np.linalg.cond(product)), 'error': str(error)},
        ) from error
    _check_finite(squares, product, q)

    xi = np.sqrt(squares.astype(complex))
    values = np.concatenate([xi, -xi])
    rate, index, unstable = _most_unstable(values)

    mode = None
    if rate > 0:
        s = vectors[:, index % basis.M]
        u = 0.5 * (s + plus @ s / values[index])
        mode = _mode_density(basis, u)
    return BdGSpectrum(q=float(q), eigenvalues=values, Lambda=rate,
                       most_unstable_mode=mode, unstable_count=unstable)


def instability_rate(q: float, basis: ModeBasis, A: CouplingMatrix, product_form: bool = True) -> float:
    "Lambda(q) = max |Im xi| in Hz."
    solver = bdg_eigen_product_form if product_form else bdg_eigen
    return solver(basis, A, q).Lambda


# ---------------------------------------------------------------------------
# Experiments: sweeps, resonances, fits
# ---------------------------------------------------------------------------


class Extremum(NamedTuple):
    "Refined extremum of a sampled curve."
    q: float
    value: float


class PlateauReport(NamedTuple):
    """
    Flatness of Lambda(q) over a window and its decay below the window.

    spread is max |Lambda - mean| / mean over the window and decay_ratio is
    Lambda(decay_q) / mean.
    """
    q_min: float
    q_max: float
    mean: float
    spread: float
    decay_q: float
    decay_ratio: float


@dataclass(frozen=True, eq=False)
class SweepResult:
    """
    Lambda(q) sampled over a q grid.

    Attributes:
        q(ndarray): ascending q samples in Hz.
        Lambda(ndarray): instability rate at each q in Hz.
        resonances(list): refined local maxima as Extremum(q, Lambda).
        minima(list): refined local minima.
        q_tilde_cr(float): effective critical q of the low-|q| lobe, if fitted.
        plateau(PlateauReport): filled in by the F=1 scenario.
    """
    q: FloatArray
    Lambda: FloatArray
    resonances: List[Extremum]
    minima: List[Extremum]
    q_tilde_cr: Optional[float] = None
    plateau: Optional[PlateauReport] = None


@dataclass(frozen=True)
class ScenarioConfig:
    """
    Everything needed to reproduce one scenario run. Physical quantities keep
    the units they are written with in config files.

    Attributes:
        name(str): scenario name.
        species(SpeciesParams): resolved species.
        trap_kind(TrapKind): harmonic or box.
        trap_frequencies_hz(tuple): trap frequencies omega / 2 pi.
        trap_half_widths_m(tuple): box half-widths.
        transverse_length_m(float): frozen extent for 1D/2D models.
        atoms(float): atom number.
        grid_points(tuple): default grid.
        reduced_points(tuple): optional coarse grid.
        reduced(bool): run on the coarse grid.
        margin(float): grid half-width over Thomas-Fermi radius.
        resolution(str): healing-length check ('density', 'spin', 'none').
        resolution_factor(float): allowed spacing over healing length.
        m_cap(int): mode cap, 0 for the dimensional default.
        cutoff_hz(float): mode energy cutoff, None for the default rule.
        eigensolver(str): 'shift-invert' or 'lanczos'.
        q_min_hz, q_max_hz(float): q sweep range.
        b_min_g, b_max_g(float): optional field sweep range, replaces q range.
        steps(int): number of sweep samples.
        atom_numbers(tuple): atom numbers for the scaling fit.
        plateau_min_hz, plateau_max_hz, decay_q_hz(float): plateau window and
            the q where the decay is read off.
        seed(int): eigensolver seed.
        product_form(bool): use the M x M product solver.
        output_dir(str): where CLI outputs go.
    """
    name: str
    species: SpeciesParams
    trap_kind: TrapKind
    atoms: float
    grid_points: Tuple[int, ...]
    q_min_hz: float
    q_max_hz: float
    steps: int
    trap_frequencies_hz: Tuple[float, ...] = ()
    trap_half_widths_m: Tuple[float, ...] = ()
    transverse_length_m: Optional[float] = None
    reduced_points: Optional[Tuple[int, ...]] = None
    reduced: bool = False
    margin: float = 1.5
    resolution: str = 'density'
    resolution_factor: float = 0.5
    m_cap: int = 0
    cutoff_hz: Optional[float] = None
    eigensolver: str = 'shift-invert'
    b_min_g: Optional[float] = None
    b_max_g: Optional[float] = None
    atom_numbers: Tuple[float, ...] = ()
    plateau_min_hz: Optional[float] = None
    plateau_max_hz: Optional[float] = None
    decay_q_hz: Optional[float] = None
    seed: int = 0
    product_form: bool = True
    output_dir: str = 'spinamp-output'

    @property
    def trap(self) -> TrapGeometry:
        if self.trap_kind == TrapKind.BOX:
            return TrapGeometry.box(self.trap_half_widths_m, self.transverse_length_m)
        return TrapGeometry.harmonic(
            [2.0 * math.pi * f for f in self.trap_frequencies_hz], self.transverse_length_m
        )

    @property
    def points(self) -> Tuple[int, ...]:
        if self.reduced and self.reduced_points:
            return self.reduced_points
        return self.grid_points

    @property
    def mode_cap(self) -> int:
        return self.m_cap or DEFAULT_M_CAP[len(self.grid_points)]

    def q_grid(self) -> FloatArray:
        "Ascending q samples of the sweep (converted from B when a field range is set)."
        if self.b_min_g is not None and self.b_max_g is not None:
            fields = np.linspace(self.b_min_g, self.b_max_g, self.steps)
            return q_grid_from_field(fields, self.species)
        return np.linspace(self.q_min_hz, self.q_max_hz, self.steps)

    def q_extent(self) -> float:
        return float(np.max(np.abs(self.q_grid())))

    @property
    def has_plateau(self) -> bool:
        return self.plateau_min_hz is not None or self.plateau_max_hz is not None

    def plateau_window(self) -> Tuple[float, float, float]:
        "(q_min, q_max, decay_q) of the plateau report, defaulting to 0..6 Hz and -5 Hz."
        return (
            0.0 if self.plateau_min_hz is None else self.plateau_min_hz,
            6.0 if self.plateau_max_hz is None else self.plateau_max_hz,
            -5.0 if self.decay_q_hz is None else self.decay_q_hz,
        )

    def with_atoms(self, N: float) -> 'ScenarioConfig':
        return replace(self, atoms=float(N))


def worker_count(requested: Optional[int] = None) -> int:
    "Sweep worker count: argument, then $SPINAMP_WORKERS, then the CPU count."
    if requested is None:
        env = os.environ.get(WORKERS_ENV)
        requested = int(env) if env else (os.cpu_count() or 1)
    if requested < 1:
        raise ValidationException(f'Worker count must be positive, got {requested}')
    return requested


def q_grid_from_field(fields_gauss: Iterable[float], species: SpeciesParams) -> FloatArray:
    "Ascending q samples (Hz) for a set of magnetic fields (G)."
    return np.sort(np.asarray(b_to_q(np.asarray(list(fields_gauss), dtype=float), species)))


def _refine(q: FloatArray, values: FloatArray, i: int) -> Extremum:
    "Vertex of the parabola through samples i-1, i, i+1."
    x = q[i - 1:i + 2] - q[i]
    a, b, c = np.polyfit(x, values[i - 1:i + 2], 2)
    if a == 0:
        return Extremum(float(q[i]), float(values[i]))
    shift = float(np.clip(-b / (2.0 * a), x[0], x[2]))
    return Extremum(float(q[i] + shift), float(a * shift ** 2 + b * shift + c))


def find_extrema(q: FloatArray, values: FloatArray) -> Tuple[List[Extremum], List[Extremum]]:
    """
    Strict local maxima and minima over 3-sample windows, each refined with a
    parabola through its neighbours.
    """
    maxima = signal.argrelextrema(values, np.greater)[0]
    minima = signal.argrelextrema(values, np.less)[0]
    return [_refine(q, values, i) for i in maxima], [_refine(q, values, i) for i in minima]


def significant_resonances(sweep: SweepResult, contrast: float = 1.3) -> List[Extremum]:
    """
    Merge resonances that are not separated by a deep enough valley.

    Neighbouring peaks stay separate only when the smaller of the two is at
    least `contrast` times the lowest sample between them; otherwise the
    higher peak represents both.
    """
    peaks = sorted(sweep.resonances, key=lambda p: p.q)
    if not peaks:
        return []

    kept = [peaks[0]]
    for peak in peaks[1:]:
        previous = kept[-1]
        between = (sweep.q >= previous.q) & (sweep.q <= peak.q)
        valley = float(sweep.Lambda[between].min()) if np.any(between) else 0.0
        if valley <= 0 or min(previous.value, peak.value) >= contrast * valley:
            kept.append(peak)
        elif peak.value > previous.value:
            kept[-1] = peak
    return kept


def low_q_resonance(sweep: SweepResult) -> Optional[Extremum]:
    "The resonance closest to q = 0."
    if not sweep.resonances:
        return None
    return min(sweep.resonances, key=lambda p: abs(p.q))


def plateau_report(sweep: SweepResult, q_min: float, q_max: float, decay_q: float) -> PlateauReport:
    """
    Flatness of Lambda over [q_min, q_max] and the ratio Lambda(decay_q)/mean.

    Raises:
        ValidationException: if no sample falls inside the window.
    """
    window = (sweep.q >= q_min) & (sweep.q <= q_max)
    if not np.any(window):
        raise ValidationException(f'No sweep samples inside the plateau window [{q_min}, {q_max}] Hz')
    values = sweep.Lambda[window]
    mean = float(values.mean())
    spread = float(np.max(np.abs(values - mean)) / mean) if mean > 0 else math.inf
    decayed = float(np.interp(decay_q, sweep.q, sweep.Lambda))
    return PlateauReport(q_min, q_max, mean, spread, decay_q, decayed / mean if mean > 0 else math.inf)


def arc_rate(q: Any, q_tilde_cr: float) -> Any:
    "sqrt(q~^2 - (q - q~)^2), clipped at zero, in Hz."
    return np.sqrt(np.maximum(0.0, q_tilde_cr ** 2 - (q - q_tilde_cr) ** 2))


def _first_lobe(q: FloatArray, values: FloatArray) -> slice:
    """
    Samples from the stability edge down to the first minimum of the lobe that
    opens there. The unstable side is always towards lower q.
    """
    unstable = np.nonzero(values > REAL_TOLERANCE_HZ)[0]
    if unstable.size == 0:
        raise FitException('No unstable samples to fit an effective critical q to')
    top = int(unstable[-1])
    stop = 0
    for i in range(top - 1, 0, -1):
        if values[i] < values[i - 1] and values[i] <= values[i + 1]:
            stop = i
            break
    return slice(stop, min(top + 2, q.size))


def fit_q_tilde_cr(sweep: SweepResult) -> float:
    """
    Effective critical q of the low-|q| lobe.

    Fits Lambda(q) = sqrt(q~^2 - (q - q~)^2) over the first lobe. The squared
    model Lambda^2 + q^2 = 2 q~ q is linear in q~ and seeds the nonlinear fit.

    Raises:
        FitException: if the lobe has no unstable samples.

    Returns:
        q~_cr in Hz.
    """
    lobe = _first_lobe(sweep.q, sweep.Lambda)
    q, values = sweep.q[lobe], sweep.Lambda[lobe]
    unstable = values > REAL_TOLERANCE_HZ
    if not np.any(unstable):
        raise FitException('No unstable samples in the first lobe', {'q_range_hz': (float(q[0]), float(q[-1]))})

    qu, vu = q[unstable], values[unstable]
    denominator = 2.0 * np.sum(qu ** 2)
    if denominator > 0:
        guess = float(np.sum(qu * (vu ** 2 + qu ** 2)) / denominator)
    else:
        guess = float(-vu.max())

    try:
        params, _ = optimize.curve_fit(arc_rate, q, values, p0=[guess])
    except (RuntimeError, ValueError) as error:
        raise FitException('Arc fit did not converge', {'initial_q_tilde_cr_hz': guess}) from error
    return float(params[0])


class Scenario:
    """
    Shared, read-only inputs of a q-sweep: the condensate, its effective fields,
    the H_eff mode basis and the coupling matrix. q only enters the diagonal of
    the Bogoliubov problem, so one Scenario serves every q.
    """

    def __init__(self, species: SpeciesParams, trap: TrapGeometry, state: CondensateState,
                 fields: EffectiveFields, basis: ModeBasis, coupling: CouplingMatrix,
                 product_form: bool = True) -> None:
        self.species = species
        self.trap = trap
        self.state = state
        self.fields = fields
        self.basis = basis
        self.coupling = coupling
        self.product_form = product_form

    @classmethod
    def prepare(cls, species: SpeciesParams, trap: TrapGeometry, N: float, grid: GridSpec,
                M_cap: int, cutoff: Optional[float] = None, q_extent: float = 0.0, seed: int = 0,
                resolution: str = 'density', resolution_factor: float = 0.5,
                method: str = 'shift-invert', product_form: bool = True) -> 'Scenario':
        """
        Run the q-independent part of the pipeline.

        Args:
            species, trap, N, grid: the condensate.
            M_cap(int): mode cap.
            cutoff(float): mode cutoff in Hz, default_energy_cutoff when None.
            q_extent(float): largest |q| the scenario will be swept over.
            seed(int): eigensolver seed.
            resolution, resolution_factor: grid resolution check.
            method(str): eigensolver.
            product_form(bool): solver used by spectrum().

        Returns:
            A Scenario.
        """
        state = solve_tf(species, trap, N, grid)
        fields = effective_fields(species, trap, state)
        op = discretize_heff(fields, species, grid, resolution, resolution_factor)
        if cutoff is None:
            cutoff = default_energy_cutoff(q_extent, fields)
        basis = solve_lowest_modes(op, M_cap, cutoff, seed=seed, method=method)
        coupling = coupling_matrix(basis, fields)
        return cls(species, trap, state, fields, basis, coupling, product_form)

    @classmethod
    def from_config(cls, config: ScenarioConfig) -> 'Scenario':
        trap = config.trap
        if config.reduced:
            show_warning(
                f'Scenario {config.name} runs on the reduced grid {config.points}; '
                f'resonance positions shift against the full-resolution reference.'
            )
        grid = GridSpec.around(config.species, trap, config.atoms, config.points, config.margin)
        return cls.prepare(
            config.species, trap, config.atoms, grid, config.mode_cap,
            cutoff=config.cutoff_hz, q_extent=config.q_extent(), seed=config.seed,
            resolution=config.resolution, resolution_factor=config.resolution_factor,
            method=config.eigensolver, product_form=config.product_form,
        )

    def spectrum(self, q: float, product_form: Optional[bool] = None) -> BdGSpectrum:
        use_product = self.product_form if product_form is None else product_form
        solver = bdg_eigen_product_form if use_product else bdg_eigen
        return solver(self.basis, self.coupling, q)

    def homogeneous_q_cr(self) -> float:
        "-U1 n_peak, the critical q of a homogeneous condensate at the peak density."
        return -self.fields.spin_energy

    def sweep(self, q_grid: Iterable[float], workers: Optional[int] = None) -> SweepResult:
        """
        Lambda(q) over a monotone q grid, fanned out over a thread pool.

        Raises:
            ValidationException: for grids with fewer than 16 points or that are
                not strictly monotone.
            NumericException: annotated with the offending q.
        """
        q = np.asarray(list(q_grid), dtype=float)
        if q.ndim != 1 or q.size < MIN_SWEEP_POINTS:
            raise ValidationException(f'A sweep needs at least {MIN_SWEEP_POINTS} q values, got {q.size}')
        steps = np.diff(q)
        if not (np.all(steps > 0) or np.all(steps < 0)):
            raise ValidationException('Sweep q values must be strictly monotone')
        q = np.sort(q)

        def evaluate(value: float) -> float:
            try:
                return self.spectrum(float(value)).Lambda
            except NumericException as error:
                error.report.setdefault('q_hz', float(value))
                raise

        count = worker_count(workers)
        log.info(f'Sweeping {q.size} q values in [{q[0]:.6g}, {q[-1]:.6g}] Hz on {count} workers')
        with ThreadPoolExecutor(max_workers=count) as pool:
            rates = np.array(list(pool.map(evaluate, q)), dtype=float)

        resonances, minima = find_extrema(q, rates)
        q_tilde_cr = None
        try:
            q_tilde_cr = fit_q_tilde_cr(SweepResult(q, rates, resonances, minima))
        except FitException as error:
            log.info(f'No effective critical q: {error.message}')
        return SweepResult(q, rates, resonances, minima, q_tilde_cr)


def sweep_lambda(config: ScenarioConfig, q_grid: Optional[Iterable[float]] = None,
                 workers: Optional[int] = None, scenario: Optional[Scenario] = None) -> SweepResult:
    """
    Lambda(q) for a scenario config, over its own q grid unless one is given.
    An already prepared Scenario for the same config can be passed in.
    """
    if scenario is None:
        scenario = Scenario.from_config(config)
    return scenario.sweep(config.q_grid() if q_grid is None else q_grid, workers)


@dataclass(frozen=True, eq=False)
class ScalingFit:
    """
    Power law q_res = amplitude * N^gamma fitted in log-log space.

    Attributes:
        atom_numbers(ndarray): N values that produced a resonance.
        q_resonance(ndarray): |q| of the low-|q| resonance per N, in Hz.
        gamma(float): fitted exponent.
        gamma_stderr(float): standard error of gamma.
        amplitude(float): prefactor.
        residuals(ndarray): log-space residuals.
        peak_densities(ndarray): condensate peak density per N (pipeline fits).
        q_tilde_cr(ndarray): effective critical q per N (pipeline fits).
        density_r_squared(float): R^2 of q~_cr against peak density.
    """
    atom_numbers: FloatArray
    q_resonance: FloatArray
    gamma: float
    gamma_stderr: float
    amplitude: float
    residuals: FloatArray
    peak_densities: Optional[FloatArray] = None
    q_tilde_cr: Optional[FloatArray] = None
    density_r_squared: Optional[float] = None


def power_law_fit(atom_numbers: Sequence[float], q_resonance: Sequence[float]) -> ScalingFit:
    """
    Least squares of log q_res against log N.

    Raises:
        FitException: with fewer than two points or non-positive values.
    """
    x = np.asarray(atom_numbers, dtype=float)
    y = np.asarray(q_resonance, dtype=float)
    if x.size < 2 or np.any(x <= 0) or np.any(y <= 0):
        raise FitException('Power-law fit needs at least two positive points', {'points': x.size})
    result = stats.linregress(np.log(x), np.log(y))
    residuals = np.log(y) - (result.intercept + result.slope * np.log(x))
    return ScalingFit(
        atom_numbers=x, q_resonance=y, gamma=float(result.slope),
        gamma_stderr=float(result.stderr), amplitude=float(math.exp(result.intercept)),
        residuals=residuals,
    )


def scaling_fit(config: ScenarioConfig, atom_numbers: Optional[Sequence[float]] = None,
                workers: Optional[int] = None) -> ScalingFit:
    """
    Exponent gamma of the low-|q| resonance position against atom number.

    Each N runs the full pipeline; the N entries fan out over the worker pool
    and each sweep runs single-threaded inside its worker.

    Raises:
        PartialResultException: if some N showed no resonance. The fit over
            the remaining points (if any) is attached as `partial`.
    """
    values = sorted(float(n) for n in (atom_numbers or config.atom_numbers))
    if not values:
        raise ValidationException('Scaling fit needs a list of atom numbers')
    q_grid = config.q_grid()

    def run(N: float) -> Tuple[float, Optional[Extremum], float, Optional[float]]:
        scenario = Scenario.from_config(config.with_atoms(N))
        sweep = scenario.sweep(q_grid, workers=1)
        return N, low_q_resonance(sweep), scenario.state.peak_density, sweep.q_tilde_cr

    with ThreadPoolExecutor(max_workers=worker_count(workers)) as pool:
        results = list(pool.map(run, values))

    found = [(N, peak, density, q_tilde) for N, peak, density, q_tilde in results if peak is not None]
    failures = [N for N, peak, _, _ in results if peak is None]

    fit: Optional[ScalingFit] = None
    if len(found) >= 2:
        fit = power_law_fit([r[0] for r in found], [abs(r[1].q) for r in found])  # type: ignore[union-attr]
        densities = np.array([r[2] for r in found])
        q_tildes = [r[3] for r in found]
        r_squared = None
        if all(v is not None for v in q_tildes) and len(found) >= 3:
            r_squared = float(stats.linregress(densities, np.array(q_tildes, dtype=float)).rvalue ** 2)
        fit = replace(fit, peak_densities=densities,
                      q_tilde_cr=np.array([np.nan if v is None else v for v in q_tildes]),
                      density_r_squared=r_squared)
        log.info(f'Scaling fit: gamma={fit.gamma:.4f} +- {fit.gamma_stderr:.4f}')

    if failures:
        raise PartialResultException(
            f'No low-|q| resonance for {len(failures)} atom number(s)', failures, fit
        )
    if fit is None:
        raise FitException('Scaling fit needs at least two atom numbers with a resonance')
    return fit


def growth_estimate(Lambda: float, t: float, seed_atoms: float = 0.0) -> float:
    """
    Pair population grown from a seed in time t (s) at instability rate
    Lambda (Hz): 2 (seed + 1/2) sinh^2(2 pi Lambda t).

    This is a linear-regime, single-mode heuristic. The absolute population also
    depends on how the growth is triggered, so only ratios between rates are
    meaningful.
    """
    show_warning(
        'growth_estimate is qualitative: linear regime, dominant mode pair only, '
        'no calibration of the seed', QualitativeWarning, stacklevel=2
    )
    return 2.0 * (seed_atoms + 0.5) * math.sinh(2.0 * math.pi * Lambda * t) ** 2


def growth_ratio(lambda_a: float, lambda_b: float, t: float, seed_atoms: float = 0.0) -> float:
    "Ratio of the estimated populations grown at two rates from the same seed."
    return growth_estimate(lambda_a, t, seed_atoms) / growth_estimate(lambda_b, t, seed_atoms)


def scenario_f2_hannover(config: ScenarioConfig, workers: Optional[int] = None,
                         scenario: Optional[Scenario] = None) -> SweepResult:
    """
    Multi-resonant F=2 sweep (U1 > 0): Lambda(q) with its resonances and the
    effective critical q of the low-|q| lobe.
    """
    if not config.species.U1 > 0:
        raise ValidationException(f'Scenario {config.name} needs an F=2-like species with U1 > 0')
    return sweep_lambda(config, workers=workers, scenario=scenario)


def scenario_f1_leslie(config: ScenarioConfig, workers: Optional[int] = None,
                       scenario: Optional[Scenario] = None) -> SweepResult:
    """
    Single-resonant F=1 sweep (U1 < 0) with the plateau report: flatness of
    Lambda over [plateau_min_hz, plateau_max_hz] (default 0..6 Hz) and its decay
    at decay_q_hz (default -5 Hz).
    """
    if not config.species.U1 < 0:
        raise ValidationException(f'Scenario {config.name} needs an F=1-like species with U1 < 0')
    sweep = sweep_lambda(config, workers=workers, scenario=scenario)
    plateau = plateau_report(sweep, *config.plateau_window())
    log.info(f'Plateau: mean {plateau.mean:.4g} Hz, spread {plateau.spread:.3f}, decay {plateau.decay_ratio:.3f}')
    return replace(sweep, plateau=plateau)


def run_scenario(config: ScenarioConfig, workers: Optional[int] = None,
                 scenario: Optional[Scenario] = None) -> SweepResult:
    "Sweep a scenario, adding the plateau report when the config defines one."
    if config.has_plateau:
        return scenario_f1_leslie(config, workers, scenario)
    return sweep_lambda(config, workers=workers, scenario=scenario)
