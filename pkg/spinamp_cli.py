# type: ignore[attr-defined]
"""
Command line interface of spinamp.

Loads scenario configs (YAML, physical quantities carry a unit suffix), runs
the pipeline and writes CSV/JSON/binary results next to a resolved config echo
that reproduces the run:

    spinamp sweep --preset f2_hannover
    spinamp sweep --config spinamp-output/f2_hannover/config.echo.yaml
    spinamp oracle homogeneous --qcr -30 --q -30

Exit codes: 0 success, 2 usage error, 3 configuration or file error, 4 numerical
error. Errors also print one JSON object {"error", "exit_code", "message"} to stderr.
"""

import sys, csv, json, math, time, struct, pathlib, argparse, logging, dataclasses
from typing import Mapping

import numpy as np
import yaml

import spinamp
from spinamp import (
    BOHR_RADIUS, BoxModel, ConfigException, DomainException, GridSpec,
    NumericException, PartialResultException, ResolutionException, Scenario,
    ScenarioConfig, SpinampException, TrapKind,
    ValidationException, build_species, homogeneous_rate, box_rate
)


PRESET_DIR = pathlib.Path(__file__).parent / 'presets'
ECHO_NAME = 'config.echo.yaml'

EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_NUMERIC = 4

FIELD_MAGIC = b'SPFD'
FIELD_VERSION = 1

REFERENCE_GAMMA = 0.36
REFERENCE_GAMMA_STDERR = 0.02

_REQUIRED = object()

log = logging.getLogger('spinamp')


class UsageException(SpinampException):
    "Bad command line."


class ArgumentParser(argparse.ArgumentParser):
    "Raises instead of exiting so usage errors get the JSON error report."

    def error(self, message):
        raise UsageException(f'{self.prog}: {message}')


# ---------------------------------------------------------------------------
# Config files
# ---------------------------------------------------------------------------


class ConfigLocator:
    """
    Maps dotted field paths ('sweep.q_min_hz') of a YAML document to the line
    they are written on, so errors can point into the file.
    """

    def __init__(self, path, text):
        self.path = path
        self.lines = {}
        try:
            node = yaml.compose(text, Loader=yaml.SafeLoader)
        except yaml.YAMLError:
            node = None
        if node is not None:
            self._walk(node, '')

    def _walk(self, node, prefix):
        if not isinstance(node, yaml.MappingNode):
            return
        for key, value in node.value:
            name = f'{prefix}.{key.value}' if prefix else str(key.value)
            self.lines[name] = key.start_mark.line + 1
            self._walk(value, name)

    def line(self, field):
        "Line of a field, or of its closest enclosing section."
        while field:
            if field in self.lines:
                return self.lines[field]
            field = field.rpartition('.')[0]
        return None

    def error(self, field, message, kind=ValidationException):
        line = self.line(field)
        where = f'{self.path}:{line}' if line else str(self.path)
        return kind(f'{where}: {field}: {message}')


class ConfigSection:
    "Typed, consuming reader over one mapping of a config document."

    def __init__(self, data, prefix, locator):
        if not isinstance(data, Mapping):
            raise locator.error(prefix or '<root>', 'expected a mapping', ConfigException)
        self.data = dict(data)
        self.prefix = prefix
        self.locator = locator
        self.seen = set()

    def path(self, key):
        return f'{self.prefix}.{key}' if self.prefix else key

    def has(self, key):
        return self.data.get(key) is not None

    def raw(self, key, default=_REQUIRED):
        self.seen.add(key)
        value = self.data.get(key)
        if value is None:
            if default is _REQUIRED:
                raise self.locator.error(self.path(key), 'missing required field', ConfigException)
            return default
        return value

    def section(self, key, required=True):
        value = self.raw(key, _REQUIRED if required else None)
        if value is None:
            return None
        return ConfigSection(value, self.path(key), self.locator)

    def number(self, key, default=_REQUIRED):
        value = self.raw(key, default)
        if value is None or value is default:
            return value
        return self._to_float(key, value)

    def integer(self, key, default=_REQUIRED):
        value = self.raw(key, default)
        if value is default:
            return value
        if isinstance(value, bool) or not isinstance(value, int):
            raise self.locator.error(self.path(key), f'expected an integer, got {value!r}')
        return value

    def text(self, key, default=_REQUIRED):
        value = self.raw(key, default)
        if value is default:
            return value
        return str(value)

    def flag(self, key, default=_REQUIRED):
        value = self.raw(key, default)
        if not isinstance(value, bool):
            raise self.locator.error(self.path(key), f'expected true or false, got {value!r}')
        return value

    def numbers(self, key, default=_REQUIRED):
        value = self.raw(key, default)
        if value is default:
            return value
        if not isinstance(value, list):
            raise self.locator.error(self.path(key), 'expected a list of numbers')
        return tuple(self._to_float(key, v) for v in value)

    def integers(self, key, default=_REQUIRED):
        value = self.raw(key, default)
        if value is default:
            return value
        if not isinstance(value, list) or not all(
            isinstance(v, int) and not isinstance(v, bool) for v in value
        ):
            raise self.locator.error(self.path(key), 'expected a list of integers')
        return tuple(value)

    def _to_float(self, key, value):
        # YAML 1.1 reads 7.0e4 (no exponent sign) as a string
        if isinstance(value, bool):
            raise self.locator.error(self.path(key), f'expected a number, got {value!r}')
        try:
            return float(value)
        except (TypeError, ValueError):
            raise self.locator.error(self.path(key), f'expected a number, got {value!r}')

    def finish(self):
        "Reject fields nobody asked for (typos, missing unit suffixes)."
        for key in self.data:
            if key not in self.seen:
                raise self.locator.error(
                    self.path(key),
                    'unknown field (physical quantities need a unit suffix '
                    'such as _hz, _m, _g, _s or _kg)',
                    ConfigException
                )


def read_yaml(path):
    "Parse a YAML file, returning (data, locator)."
    path = pathlib.Path(path)
    if not path.is_file():
        raise ConfigException(f'Config file {path} does not exist.')
    text = path.read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as error:
        mark = getattr(error, 'problem_mark', None)
        where = f'{path}:{mark.line + 1}' if mark else str(path)
        raise ConfigException(f'{where}: cannot parse YAML: {error}')
    return data, ConfigLocator(path, text)


def species_from_section(section):
    "Build a SpeciesParams from a species mapping (preset file or inline)."
    F = section.integer('F')
    channels = spinamp.CHANNELS.get(F)
    if channels is None:
        raise section.locator.error(section.path('F'), f'F={F} is not supported (1 or 2)', ConfigException)

    lengths = {}
    for spin in channels:
        if section.has(f'a{spin}_m'):
            lengths[spin] = section.number(f'a{spin}_m')
        elif section.has(f'a{spin}_bohr'):
            lengths[spin] = section.number(f'a{spin}_bohr') * BOHR_RADIUS
        else:
            raise section.locator.error(
                section.path(f'a{spin}_m'),
                f'missing scattering length for channel {spin} (a{spin}_m or a{spin}_bohr)',
                ConfigException
            )

    species = build_species(
        name=section.text('name'),
        F=F,
        scattering_lengths=lengths,
        atomic_mass=section.number('mass_kg'),
        qze_coefficient=section.number('qze_hz_per_gauss2', None),
        source=section.text('source', ''),
    )
    section.finish()
    return species


def load_species(name_or_path):
    """
    Load a species preset by name (presets/species/<name>.yaml) or path.

    Raises:
        ConfigException: for unknown presets or missing fields.
    """
    path = pathlib.Path(name_or_path)
    if not path.suffix:
        path = PRESET_DIR / 'species' / f'{name_or_path}.yaml'
        if not path.is_file():
            known = sorted(p.stem for p in (PRESET_DIR / 'species').glob('*.yaml'))
            raise ConfigException(f'Unknown species preset {name_or_path!r}. Known presets: {known}')
    data, locator = read_yaml(path)
    return species_from_section(ConfigSection(data, '', locator))


def parse_config(data, locator):
    "Build a ScenarioConfig from a parsed document."
    root = ConfigSection(data, '', locator)
    name = root.text('name')

    species_value = root.raw('species')
    if isinstance(species_value, str):
        species = load_species(species_value)
    else:
        species = species_from_section(ConfigSection(species_value, 'species', locator))

    trap = root.section('trap')
    kind_name = trap.text('kind')
    try:
        kind = TrapKind(kind_name)
    except ValueError:
        raise locator.error('trap.kind', f'expected harmonic or box, got {kind_name!r}')
    frequencies, half_widths = (), ()
    if kind == TrapKind.HARMONIC:
        frequencies = trap.numbers('frequencies_hz')
    else:
        half_widths = trap.numbers('half_widths_m')
    transverse = trap.number('transverse_length_m', None)
    trap.finish()

    grid = root.section('grid')
    points = grid.integers('points')
    reduced_points = grid.integers('reduced_points', None)
    reduced = grid.flag('reduced', False)
    margin = grid.number('margin', 1.5)
    resolution = grid.text('resolution', 'density')
    resolution_factor = grid.number('resolution_factor', 0.5)
    grid.finish()

    basis = root.section('basis', required=False)
    m_cap, cutoff, eigensolver = 0, None, 'shift-invert'
    if basis is not None:
        m_cap = basis.integer('m_cap', 0)
        cutoff = basis.number('cutoff_hz', None)
        eigensolver = basis.text('eigensolver', 'shift-invert')
        basis.finish()

    sweep = root.section('sweep')
    b_min = sweep.number('b_min_g', None)
    b_max = sweep.number('b_max_g', None)
    q_min = sweep.number('q_min_hz', None if b_min is not None else _REQUIRED)
    q_max = sweep.number('q_max_hz', None if b_max is not None else _REQUIRED)
    steps = sweep.integer('steps')
    atom_numbers = sweep.numbers('atom_numbers', ())
    plateau_min = sweep.number('plateau_min_hz', None)
    plateau_max = sweep.number('plateau_max_hz', None)
    decay_q = sweep.number('decay_q_hz', None)
    sweep.finish()

    solver = root.section('solver', required=False)
    seed, product_form = 0, True
    if solver is not None:
        seed = solver.integer('seed', 0)
        product_form = solver.flag('product_form', True)
        solver.finish()

    atoms = root.number('atoms')
    output_dir = root.text('output_dir', f'spinamp-output/{name}')
    root.finish()

    config = ScenarioConfig(
        name=name,
        species=species,
        trap_kind=kind,
        atoms=atoms,
        grid_points=points,
        q_min_hz=q_min if q_min is not None else 0.0,
        q_max_hz=q_max if q_max is not None else 0.0,
        steps=steps,
        trap_frequencies_hz=frequencies,
        trap_half_widths_m=half_widths,
        transverse_length_m=transverse,
        reduced_points=reduced_points,
        reduced=reduced,
        margin=margin,
        resolution=resolution,
        resolution_factor=resolution_factor,
        m_cap=m_cap,
        cutoff_hz=cutoff,
        eigensolver=eigensolver,
        b_min_g=b_min,
        b_max_g=b_max,
        atom_numbers=atom_numbers,
        plateau_min_hz=plateau_min,
        plateau_max_hz=plateau_max,
        decay_q_hz=decay_q,
        seed=seed,
        product_form=product_form,
        output_dir=output_dir,
    )
    validate_config(config, locator)
    return config


def validate_config(config, locator=None):
    """
    Range checks that need the whole config.

    Raises:
        ValidationException: naming the field (and its line when known).
    """
    def fail(field, message):
        if locator is not None:
            return locator.error(field, message)
        return ValidationException(f'{field}: {message}')

    if not config.atoms > 0:
        raise fail('atoms', f'must be positive, got {config.atoms}')
    if config.steps < spinamp.MIN_SWEEP_POINTS:
        raise fail('sweep.steps', f'a sweep needs at least {spinamp.MIN_SWEEP_POINTS} points, got {config.steps}')
    if config.b_min_g is not None or config.b_max_g is not None:
        if config.b_min_g is None or config.b_max_g is None:
            raise fail('sweep.b_min_g', 'b_min_g and b_max_g must be given together')
        if not config.b_min_g < config.b_max_g:
            raise fail('sweep.b_min_g', f'field range is inverted ({config.b_min_g} >= {config.b_max_g})')
        if not config.b_min_g >= 0:
            raise fail('sweep.b_min_g', 'fields must be non-negative')
    elif not config.q_min_hz < config.q_max_hz:
        raise fail('sweep.q_min_hz', f'q range is inverted ({config.q_min_hz} >= {config.q_max_hz})')
    if len(config.grid_points) not in (1, 2, 3):
        raise fail('grid.points', 'expected 1 to 3 point counts')
    if config.reduced_points and len(config.reduced_points) != len(config.grid_points):
        raise fail('grid.reduced_points', 'must have as many entries as grid.points')
    if config.reduced and not config.reduced_points:
        raise fail('grid.reduced', 'reduced run requested but no grid.reduced_points given')
    if config.margin < spinamp.MIN_GRID_MARGIN and config.trap_kind == TrapKind.HARMONIC:
        raise fail('grid.margin', f'must be >= {spinamp.MIN_GRID_MARGIN}, got {config.margin}')
    if config.resolution not in ('density', 'spin', 'none'):
        raise fail('grid.resolution', f'expected density, spin or none, got {config.resolution!r}')
    if config.eigensolver not in ('shift-invert', 'lanczos'):
        raise fail('basis.eigensolver', f'expected shift-invert or lanczos, got {config.eigensolver!r}')
    if config.m_cap < 0:
        raise fail('basis.m_cap', 'must be positive (0 selects the default)')
    if config.b_min_g is not None and config.species.qze_coefficient is None:
        raise fail('sweep.b_min_g', f'species {config.species.name} has no qze_hz_per_gauss2')
    try:
        trap = config.trap
    except ValidationException as error:
        raise fail('trap', str(error))
    if trap.dimensionality != len(config.grid_points):
        raise fail('grid.points', f'{len(config.grid_points)} point counts for a {trap.dimensionality}D trap')


def load_config(path):
    """
    Read and validate a scenario config file.

    Raises:
        ConfigException: with file, line and field of the first problem.

    Returns:
        A ScenarioConfig.
    """
    data, locator = read_yaml(path)
    return parse_config(data, locator)


def resolve_preset(name):
    path = PRESET_DIR / 'scenarios' / f'{name}.yaml'
    if not path.is_file():
        known = sorted(p.stem for p in (PRESET_DIR / 'scenarios').glob('*.yaml'))
        raise ConfigException(f'Unknown scenario preset {name!r}. Known presets: {known}')
    return path


def species_echo(species):
    data = {'name': species.name, 'F': species.hyperfine_F, 'mass_kg': species.atomic_mass}
    for spin, length in species.scattering_lengths:
        data[f'a{spin}_m'] = length
    if species.qze_coefficient is not None:
        data['qze_hz_per_gauss2'] = species.qze_coefficient
    if species.source:
        data['source'] = species.source
    return data


def echo_config(config):
    "Resolved config as a plain mapping; loading it back gives an equal config."
    trap = {'kind': config.trap_kind.value}
    if config.trap_kind == TrapKind.HARMONIC:
        trap['frequencies_hz'] = list(config.trap_frequencies_hz)
    else:
        trap['half_widths_m'] = list(config.trap_half_widths_m)
    if config.transverse_length_m is not None:
        trap['transverse_length_m'] = config.transverse_length_m

    grid = {
        'points': list(config.grid_points),
        'reduced': config.reduced,
        'margin': config.margin,
        'resolution': config.resolution,
        'resolution_factor': config.resolution_factor,
    }
    if config.reduced_points:
        grid['reduced_points'] = list(config.reduced_points)

    basis = {'m_cap': config.m_cap, 'eigensolver': config.eigensolver}
    if config.cutoff_hz is not None:
        basis['cutoff_hz'] = config.cutoff_hz

    sweep = {'steps': config.steps}
    if config.b_min_g is not None:
        sweep['b_min_g'] = config.b_min_g
        sweep['b_max_g'] = config.b_max_g
    else:
        sweep['q_min_hz'] = config.q_min_hz
        sweep['q_max_hz'] = config.q_max_hz
    if config.atom_numbers:
        sweep['atom_numbers'] = list(config.atom_numbers)
    for key in ('plateau_min_hz', 'plateau_max_hz', 'decay_q_hz'):
        if getattr(config, key) is not None:
            sweep[key] = getattr(config, key)

    return {
        'name': config.name,
        'species': species_echo(config.species),
        'trap': trap,
        'atoms': config.atoms,
        'grid': grid,
        'basis': basis,
        'sweep': sweep,
        'solver': {'seed': config.seed, 'product_form': config.product_form},
        'output_dir': config.output_dir,
    }


def write_echo(config, directory):
    path = pathlib.Path(directory) / ECHO_NAME
    path.write_text(yaml.safe_dump(echo_config(config), sort_keys=False))
    return path


# ---------------------------------------------------------------------------
# Result files
# ---------------------------------------------------------------------------


def _format(value):
    if isinstance(value, (float, np.floating)):
        return f'{float(value):.17g}'
    return str(value)


def write_csv(path, schema, columns, rows):
    """
    CSV with a '# schema=<name>' first line, a header row and floats written
    with 17 significant digits.
    """
    with open(path, 'w', newline='') as file:
        file.write(f'# schema={schema}\n')
        writer = csv.writer(file, lineterminator='\n')
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format(v) for v in row])


def format_csv(schema, columns, rows):
    "Same layout as write_csv, returned as text."
    lines = [f'# schema={schema}', ','.join(columns)]
    lines.extend(','.join(_format(v) for v in row) for row in rows)
    return '\n'.join(lines) + '\n'


def read_csv(path):
    "Returns (schema, columns, rows) with rows as lists of strings."
    with open(path, newline='') as file:
        first = file.readline().strip()
        if not first.startswith('# schema='):
            raise ConfigException(f'{path} has no schema line')
        reader = csv.reader(file)
        columns = next(reader)
        return first[len('# schema='):], columns, [row for row in reader]


def _plain(value):
    "Make numpy values JSON-serializable."
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_plain(v) for v in value]
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def write_json(path, data):
    with open(path, 'w') as file:
        json.dump(_plain(data), file, indent=2, sort_keys=True)
        file.write('\n')


def write_field(path, values, spacing):
    """
    Binary field file, little-endian throughout:

        b'SPFD' | uint32 version | uint32 ndim | uint64 dims[ndim]
        | float64 spacing[ndim] | float64 values (C order)
    """
    values = np.ascontiguousarray(values, dtype='<f8')
    ndim = values.ndim
    header = FIELD_MAGIC + struct.pack('<II', FIELD_VERSION, ndim)
    header += struct.pack(f'<{ndim}Q', *values.shape)
    header += struct.pack(f'<{ndim}d', *spacing)
    with open(path, 'wb') as file:
        file.write(header)
        file.write(values.tobytes())


def read_field(path):
    "Inverse of write_field: returns (values, spacing)."
    data = pathlib.Path(path).read_bytes()
    if data[:4] != FIELD_MAGIC:
        raise ConfigException(f'{path} is not a spinamp field file')
    version, ndim = struct.unpack_from('<II', data, 4)
    if version != FIELD_VERSION:
        raise ConfigException(f'{path}: unsupported field file version {version}')
    offset = 12
    shape = struct.unpack_from(f'<{ndim}Q', data, offset)
    offset += 8 * ndim
    spacing = struct.unpack_from(f'<{ndim}d', data, offset)
    offset += 8 * ndim
    values = np.frombuffer(data, dtype='<f8', offset=offset).reshape(shape)
    return values.copy(), tuple(spacing)


# ---------------------------------------------------------------------------
# Command line
# ---------------------------------------------------------------------------


def _float_list(text):
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f'expected comma separated numbers, got {text!r}')


def _int_list(text):
    try:
        return [int(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f'expected comma separated integers, got {text!r}')


def build_parser():
    parser = ArgumentParser(prog='spinamp', description='Spinor condensate instability spectra')
    parser.add_argument('-v', '--verbose', action='count', default=0,
                        help='log pipeline stages (-v) or solver details (-vv)')
    subs = parser.add_subparsers(dest='cmd', required=True)

    scenario = ArgumentParser(add_help=False)
    source = scenario.add_mutually_exclusive_group(required=True)
    source.add_argument('--preset', help='scenario preset name, e.g. f2_hannover')
    source.add_argument('--config', type=pathlib.Path, help='scenario config file')
    scenario.add_argument('--out', type=pathlib.Path, help='output directory')
    scenario.add_argument('--reduced', action='store_true', help='run on the reduced grid')
    scenario.add_argument('--q-min', type=float, help='lowest q in Hz')
    scenario.add_argument('--q-max', type=float, help='highest q in Hz')
    scenario.add_argument('--b-min', type=float, help='lowest field in G (replaces the q range)')
    scenario.add_argument('--b-max', type=float, help='highest field in G')
    scenario.add_argument('--steps', type=int, help='number of sweep samples')
    scenario.add_argument('--seed', type=int, help='eigensolver seed')
    scenario.add_argument('--workers', type=int, help='worker threads (default $SPINAMP_WORKERS)')

    subs.add_parser('tf', parents=[scenario], help='Thomas-Fermi ground state and effective fields')

    modes = subs.add_parser('modes', parents=[scenario], help='eigenmodes of the effective Hamiltonian')
    modes.add_argument('--export', type=_int_list, default=[], help='mode indices to write as fields')

    subs.add_parser('sweep', parents=[scenario], help='instability rate over q')

    scaling = subs.add_parser('scaling', parents=[scenario], help='resonance position against atom number')
    scaling.add_argument('--n', type=_float_list, help='comma separated atom numbers')

    profile = subs.add_parser('mode-profile', parents=[scenario], help='most unstable mode at one q')
    profile.add_argument('--q', type=float, required=True, help='q in Hz')

    oracle_parser = subs.add_parser('oracle', help='analytic reference spectra')
    oracles = oracle_parser.add_subparsers(dest='oracle', required=True)

    q_range = ArgumentParser(add_help=False)
    q_range.add_argument('--q', type=float, help='single q in Hz')
    q_range.add_argument('--q-min', type=float, default=-60.0)
    q_range.add_argument('--q-max', type=float, default=10.0)
    q_range.add_argument('--steps', type=int, default=141)
    q_range.add_argument('--out', type=pathlib.Path, help='CSV file (default stdout)')

    homogeneous = oracles.add_parser('homogeneous', parents=[q_range], help='homogeneous condensate')
    homogeneous.add_argument('--qcr', type=float, required=True, help='-U1 n0 in Hz')

    box = oracles.add_parser('box', parents=[q_range], help='1D hard-wall box')
    box.add_argument('--e1', type=float, required=True, help='lowest kinetic level in Hz')
    box.add_argument('--u1n0', type=float, required=True, help='U1 n0 in Hz')
    box.add_argument('--levels', type=int, default=64, help='number of box levels')

    return parser


def apply_overrides(config, args):
    "Fold command line overrides into the config and validate the result."
    changes = {}
    if args.q_min is not None:
        changes['q_min_hz'] = args.q_min
    if args.q_max is not None:
        changes['q_max_hz'] = args.q_max
    if args.q_min is not None or args.q_max is not None:
        changes['b_min_g'] = changes['b_max_g'] = None
    if args.b_min is not None or args.b_max is not None:
        changes['b_min_g'] = args.b_min
        changes['b_max_g'] = args.b_max
    if args.steps is not None:
        changes['steps'] = args.steps
    if args.seed is not None:
        changes['seed'] = args.seed
    if args.reduced:
        changes['reduced'] = True
    if args.out is not None:
        changes['output_dir'] = str(args.out)
    if getattr(args, 'n', None):
        changes['atom_numbers'] = tuple(args.n)
    config = dataclasses.replace(config, **changes)
    validate_config(config)
    return config


def scenario_config(args):
    path = resolve_preset(args.preset) if args.preset else args.config
    config = apply_overrides(load_config(path), args)
    out = pathlib.Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_echo(config, out)
    return config, out


def weakest_axis(config):
    "Axis of the weakest confinement, the imaging axis of column densities."
    if config.trap_kind == TrapKind.HARMONIC:
        return int(np.argmin(config.trap_frequencies_hz))
    return int(np.argmax(config.trap_half_widths_m))


def q_rows(args):
    if args.q is not None:
        return [args.q]
    if args.steps < 2 or not args.q_min < args.q_max:
        raise ValidationException('oracle q range needs --q-min < --q-max and --steps >= 2')
    return list(np.linspace(args.q_min, args.q_max, args.steps))


def emit(args, schema, columns, rows):
    if args.out:
        write_csv(args.out, schema, columns, rows)
    else:
        sys.stdout.write(format_csv(schema, columns, rows))


def run_tf(config, out):
    species, trap = config.species, config.trap
    grid = GridSpec.around(species, trap, config.atoms, config.points, config.margin)
    state = spinamp.solve_tf(species, trap, config.atoms, grid)
    fields = spinamp.effective_fields(species, trap, state)

    write_field(out / 'density.bin', state.n0, grid.spacing)
    write_field(out / 'v_eff.bin', fields.V_eff, grid.spacing)
    write_field(out / 'omega_eff.bin', fields.Omega_eff, grid.spacing)
    report = {
        'scenario': config.name,
        'atoms': state.N,
        'mu_hz': state.mu,
        'closed_form_mu_hz': spinamp.tf_chemical_potential(species, trap, config.atoms),
        'peak_density': state.peak_density,
        'tf_radii_m': spinamp.tf_radii(species, trap, state.mu),
        'grid_points': grid.points,
        'grid_spacing_m': grid.spacing,
        'reference_length_m': spinamp.reference_length(species, trap),
        'density_energy_hz': fields.density_energy,
        'spin_energy_hz': fields.spin_energy,
        'density_healing_length_m': spinamp.healing_length(species.atomic_mass, fields.density_energy),
        'spin_healing_length_m': spinamp.healing_length(species.atomic_mass, fields.spin_energy)
            if fields.spin_energy else None,
    }
    write_json(out / 'tf.json', report)
    print(f'Chemical potential: {state.mu:.6g} Hz')
    print(f'Peak density:       {state.peak_density:.6g} m^-{grid.ndim}')
    print(f'U1 n_peak:          {fields.spin_energy:.6g} Hz')


def run_modes(config, out, args):
    scenario = Scenario.from_config(config)
    basis = scenario.basis
    write_csv(out / 'modes.csv', 'modes.v1', ('n', 'energy_hz'), enumerate(basis.energies))
    for index in args.export:
        if not 0 <= index < basis.M:
            raise ValidationException(f'--export: mode {index} outside the basis of {basis.M} modes')
        write_field(out / f'mode_{index}.bin', basis.mode_field(index), basis.grid.spacing)
    write_json(out / 'modes.json', {
        'scenario': config.name,
        'count': basis.M,
        'cap': basis.cap,
        'energy_cutoff_hz': basis.energy_cutoff,
        'orthonormality_error': basis.orthonormality_error(),
    })
    print(f'Modes: {basis.M} from {basis.energies[0]:.6g} to {basis.energies[-1]:.6g} Hz')


def run_sweep(config, out, args):
    scenario = Scenario.from_config(config)
    result = spinamp.run_scenario(config, args.workers, scenario)

    write_csv(out / 'sweep.csv', 'sweep.v1', ('q_hz', 'lambda_hz'), zip(result.q, result.Lambda))
    q_cr = scenario.homogeneous_q_cr()
    write_csv(
        out / 'reference.csv', 'reference.v1', ('q_hz', 'lambda_hz'),
        zip(result.q, spinamp.homogeneous_curve(result.q, q_cr))
    )

    significant = spinamp.significant_resonances(result)
    summary = {
        'scenario': config.name,
        'mu_hz': scenario.state.mu,
        'peak_density': scenario.state.peak_density,
        'spin_energy_hz': scenario.fields.spin_energy,
        'modes': scenario.basis.M,
        'lambda_max_hz': float(result.Lambda.max()),
        'resonances': [list(p) for p in result.resonances],
        'significant_resonances': [list(p) for p in significant],
        'minima': [list(p) for p in result.minima],
        'q_tilde_cr_hz': result.q_tilde_cr,
        'homogeneous_q_cr_hz': q_cr,
    }
    if result.plateau is not None:
        summary['plateau'] = result.plateau._asdict()
    write_json(out / 'summary.json', summary)

    print(f'Sampled {result.q.size} q values, max rate {result.Lambda.max():.6g} Hz')
    print(f'Resonances: {len(result.resonances)} ({len(significant)} significant)')
    if result.q_tilde_cr is not None:
        print(f'Effective critical q: {result.q_tilde_cr:.6g} Hz')


def run_scaling(config, out, args):
    partial = None
    try:
        fit = spinamp.scaling_fit(config, workers=args.workers)
    except PartialResultException as error:
        partial = error
        fit = error.partial

    if fit is not None:
        write_csv(
            out / 'scaling.csv', 'scaling.v1', ('atoms', 'q_resonance_hz', 'residual'),
            zip(fit.atom_numbers, fit.q_resonance, fit.residuals)
        )
        write_json(out / 'scaling.json', {
            'scenario': config.name,
            'gamma': fit.gamma,
            'gamma_stderr': fit.gamma_stderr,
            'amplitude_hz': fit.amplitude,
            'reference_gamma': REFERENCE_GAMMA,
            'reference_gamma_stderr': REFERENCE_GAMMA_STDERR,
            'density_r_squared': fit.density_r_squared,
            'failures': partial.failures if partial else [],
        })
        print(f'gamma = {fit.gamma:.4f} +- {fit.gamma_stderr:.4f} '
              f'(measured reference {REFERENCE_GAMMA} +- {REFERENCE_GAMMA_STDERR})')

    if partial is not None:
        raise partial


def run_mode_profile(config, out, args):
    scenario = Scenario.from_config(config)
    spectrum = scenario.spectrum(args.q)
    if spectrum.most_unstable_mode is None:
        raise NumericException('No unstable mode at this q', {'q_hz': args.q})

    grid = scenario.basis.grid
    write_field(out / 'mode_profile.bin', spectrum.most_unstable_mode, grid.spacing)
    if grid.ndim > 1:
        axis = weakest_axis(config)
        column = spinamp.column_density(spectrum.most_unstable_mode, grid, axis)
        spacing = tuple(d for i, d in enumerate(grid.spacing) if i != axis)
        write_field(out / 'column_density.bin', column, spacing)
    write_csv(
        out / 'spectrum.csv', 'spectrum.v1', ('q_hz', 're_xi', 'im_xi'),
        ((spectrum.q, xi.real, xi.imag) for xi in spectrum.eigenvalues)
    )
    write_json(out / 'profile.json', {
        'scenario': config.name,
        'q': spectrum.q,
        'lambda_hz': spectrum.Lambda,
        'unstable_count': spectrum.unstable_count,
    })
    print(f'Rate at q={spectrum.q:.6g} Hz: {spectrum.Lambda:.6g} Hz ({spectrum.unstable_count} unstable)')


def run_oracle(args):
    if args.oracle == 'homogeneous':
        rows = []
        for q in q_rows(args):
            rate, regime = homogeneous_rate(q, args.qcr)
            rows.append((q, rate, regime.regime.value))
        emit(args, 'oracle-homogeneous.v1', ('q_hz', 'lambda_hz', 'regime'), rows)

    elif args.oracle == 'box':
        if not args.e1 > 0 or args.levels < 2:
            raise ValidationException('box oracle needs --e1 > 0 and --levels >= 2')
        levels = args.e1 * np.arange(1, args.levels + 1) ** 2
        model = BoxModel(levels=levels, n0=1.0, U1=spinamp.hz_to_joule(args.u1n0))
        rows = [(q, *box_rate(model, q)) for q in q_rows(args)]
        emit(args, 'oracle-box.v1', ('q_hz', 'lambda_hz', 'level'), rows)


def fail(error, exit_code):
    report = {'error': type(error).__name__, 'exit_code': exit_code, 'message': str(error)}
    sys.stderr.write(json.dumps(report, sort_keys=True) + '\n')
    return exit_code


def configure_logging(verbosity):
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity > 1:
        level = logging.DEBUG
    logging.basicConfig(level=level, format='%(levelname)s %(name)s: %(message)s')
    logging.getLogger('spinamp').setLevel(level)


def run_cli(argv):
    """
    Run one spinamp command.

    Args:
        argv(list): arguments without the program name.

    Returns:
        The process exit code.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageException as error:
        return fail(error, EXIT_USAGE)

    configure_logging(args.verbose)
    CTM = lambda: round(time.time() * 1000)
    start = CTM()

    try:
        if args.cmd == 'oracle':
            run_oracle(args)
            return 0

        config, out = scenario_config(args)
        print(f'Scenario {config.name} -> {out}')

        if args.cmd == 'tf':
            run_tf(config, out)

        elif args.cmd == 'modes':
            run_modes(config, out, args)

        elif args.cmd == 'sweep':
            run_sweep(config, out, args)

        elif args.cmd == 'scaling':
            run_scaling(config, out, args)

        elif args.cmd == 'mode-profile':
            run_mode_profile(config, out, args)

    except ConfigException as error:
        return fail(error, EXIT_CONFIG)

    # Unwritable output directory, unreadable field or config file
    except OSError as error:
        return fail(error, EXIT_CONFIG)

    except (NumericException, DomainException, ResolutionException) as error:
        return fail(error, EXIT_NUMERIC)

    except (np.linalg.LinAlgError, ValueError, ArithmeticError, MemoryError) as error:
        return fail(error, EXIT_NUMERIC)

    print('Done.')
    print(f'Finished In {(CTM() - start) / 1000.0} secs')
    return 0


def main(cli_args=None):
    return run_cli(sys.argv[1:] if cli_args is None else cli_args)


if __name__ == '__main__':
    sys.exit(main())
