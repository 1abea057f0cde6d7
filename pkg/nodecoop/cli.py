"""Command-line front end: scenario files in, deterministic CSV out.

A scenario is a flat list of ``key = value`` lines. Dotted keys address blocks (``mechanism.variant = tft_binary``),
``#`` starts a comment, and values are TOML literals or bare words::

    command = solve
    mechanism.variant = tft_fine
    profile.s_xn = 100
    profile.M = 2
    profile.g = 10

Every CSV starts with a ``#`` comment line listing the fully resolved parameters, then a column-name row, then data.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import re
import sys
from argparse import ArgumentParser
from dataclasses import replace
from enum import Enum, auto
from logging import getLogger
from math import isinf
from typing import Optional, Dict, Any, List, Sequence, NamedTuple, Callable, Union, Tuple
from uuid import uuid4

import toml

from nodecoop import APP_NAME, FORMAT_VERSION, MODULE_NAME, config
from nodecoop.database import DbRun, DbRunRow, db_connection, open_archive
from nodecoop.exceptions import CoopError, ScenarioError, ExecutionError
from nodecoop.model import Mechanism, ServiceProfile
from nodecoop.netsim import SimConfig, run
from nodecoop.solver import SolverConfig, solve
from nodecoop.sweep import SweepKind, SweepRange, SweepSpec, run_sweep
from nodecoop.utils import FunctionRegistry
from nodecoop.utils.config import ConfigError, ConfigObject, ParseableConfigObject, conf_field

LOGGER = getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

_KEY_PATTERN = re.compile(r"^[a-z_][a-z0-9_]*(\.[a-z_][a-z0-9_]*)?$")
_BARE_WORD = re.compile(r"^[A-Za-z0-9_.+\-/]+$")


class Command(Enum):
    SOLVE = auto()
    CURVE = auto()
    SWEEP = auto()
    SIM = auto()


BLOCKS_BY_COMMAND = {
    Command.SOLVE: {"mechanism", "profile"},
    Command.CURVE: {"mechanism", "profile", "sweep"},
    Command.SWEEP: {"mechanism", "profile", "sweep"},
    Command.SIM: {"mechanism", "profile", "sim"},
}
OPTIONAL_BLOCKS = {"solver"}
TOP_LEVEL_KEYS = {"command", "output"}


class ProfileBlock(ParseableConfigObject):
    """``profile.*`` keys. ``m`` is the service ratio M and is an alternative to ``s_nx``."""
    g: float
    s_xn: Optional[float] = None
    s_nx: Optional[float] = None
    m: Optional[float] = conf_field(default=None, gt=0)
    b: Optional[float] = None
    e: float = 0.0

    def validate_self(self):
        super().validate_self()
        if self.s_nx is not None and self.m is not None:
            raise ConfigError("m", "%s conflicts with s_nx; give only one of them")

    def to_profile(self) -> ServiceProfile:
        if self.s_xn is None:
            raise ConfigError("s_xn", "missing %s")
        if self.s_nx is None and self.m is None:
            raise ConfigError("s_nx", "missing %s (or m)")
        s_nx = self.s_nx if self.s_nx is not None else self.m * self.s_xn
        extra = {} if self.b is None else {"b": self.b}
        return ServiceProfile(s_xn=self.s_xn, s_nx=s_nx, g=self.g, e=self.e, **extra)


class SweepBlock(ParseableConfigObject):
    lo: float
    hi: float
    steps: int
    kind: Optional[SweepKind] = None
    t_x: float = 1.0
    t_s: Optional[float] = None
    n_samples: Optional[int] = None


class SimBlock(ParseableConfigObject):
    n_nodes: int
    # one demand for every node, or a list with one entry per node
    demands: Union[float, Tuple[float, ...]]
    hop_factor: float = 1.0
    rounds: int = 10
    seed: int = 0
    initial_policy: float = 1.0
    n_samples: Optional[int] = None

    def demand_list(self) -> Tuple[float, ...]:
        if isinstance(self.demands, (list, tuple)):
            return tuple(self.demands)
        return (self.demands,) * self.n_nodes


class Scenario(ConfigObject):
    """A validated scenario: exactly the parts its command needs, with all defaults resolved."""
    command: Command
    mechanism: Mechanism
    solver: SolverConfig
    profile: Optional[ServiceProfile] = None
    sweep: Optional[SweepSpec] = None
    sim: Optional[SimConfig] = None
    output: Optional[str] = conf_field(default=None, flatten=False)

    def validate_self(self):
        super().validate_self()
        required = {
            Command.SOLVE: "profile",
            Command.CURVE: "sweep",
            Command.SWEEP: "sweep",
            Command.SIM: "sim",
        }[self.command]
        for name in ("profile", "sweep", "sim"):
            present = getattr(self, name) is not None
            if name == required and not present:
                raise ConfigError(name, "missing %s")
            if name != required and present:
                raise ConfigError(name, f"%s is not used by {self.command.name.lower()}")

    def with_seed(self, seed: int) -> Scenario:
        if self.sim is None:
            LOGGER.debug("Ignoring seed override for %s scenario", self.command.name.lower())
            return self
        return replace(self, sim=replace(self.sim, seed=seed))


class _RawScenario(NamedTuple):
    values: Dict[str, Any]
    blocks: Dict[str, Dict[str, Any]]
    lines: Dict[str, int]

    def line_of(self, path: Optional[str]) -> Optional[int]:
        """The line of the key at ``path``, falling back to the first line of its block."""
        if not path:
            return None
        path = re.sub(r"\[.*$", "", path)
        parts = path.split(".")
        for length in range(len(parts), 0, -1):
            key = ".".join(parts[:length])
            if key in self.lines:
                return self.lines[key]
            block_lines = [line for name, line in self.lines.items() if name.startswith(key + ".")]
            if block_lines:
                return min(block_lines)
        return None


def _strip_comment(line: str) -> str:
    quote = None
    for index, char in enumerate(line):
        if quote:
            if char == quote:
                quote = None
        elif char in "\"'":
            quote = char
        elif char == "#":
            return line[:index]
    return line


def _parse_value(text: str, lineno: int) -> Any:
    try:
        return toml.loads(f"value = {text}")["value"]
    except toml.TomlDecodeError:
        pass
    if not _BARE_WORD.match(text):
        raise ScenarioError(lineno, f"invalid value {text!r}")
    try:
        return float(text)
    except ValueError:
        return text


def _tokenize(text: str) -> _RawScenario:
    values = {}
    blocks: Dict[str, Dict[str, Any]] = {}
    lines = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw_line).strip()
        if not line:
            continue
        key, sep, value_text = line.partition("=")
        key, value_text = key.strip().lower(), value_text.strip()
        if not sep or not key or not value_text:
            raise ScenarioError(lineno, "expected 'key = value'")
        if not _KEY_PATTERN.match(key):
            raise ScenarioError(lineno, f"invalid key {key!r}")
        if key in lines:
            raise ScenarioError(lineno, f"duplicate key {key} (first given on line {lines[key]})")
        lines[key] = lineno
        value = _parse_value(value_text, lineno)
        block, _, name = key.rpartition(".")
        if not block:
            if key not in TOP_LEVEL_KEYS:
                raise ScenarioError(lineno, f"unknown key {key}")
            values[key] = value
        else:
            if block not in set().union(*BLOCKS_BY_COMMAND.values(), OPTIONAL_BLOCKS):
                raise ScenarioError(lineno, f"unknown block {block}")
            blocks.setdefault(block, {})[name] = value
    return _RawScenario(values, blocks, lines)


def _resolve(raw: _RawScenario, defaults: SolverConfig, workers: int) -> Scenario:
    """Turn tokenized keys into a validated ``Scenario``; raises ``ConfigError`` with dotted field paths."""
    if "command" not in raw.values:
        raise ConfigError("command", "missing %s")
    command_name = raw.values["command"]
    try:
        command = Command[str(command_name).upper()]
    except KeyError:
        names = ", ".join(command.name.lower() for command in Command)
        raise ConfigError("command", f"%s must be one of {names}") from None
    output = raw.values.get("output")
    if output is not None and not isinstance(output, str):
        raise ConfigError("output", "%s must be a path")

    allowed = BLOCKS_BY_COMMAND[command] | OPTIONAL_BLOCKS
    for block in raw.blocks:
        if block not in allowed:
            raise ConfigError(block, f"block %s is not used by {command.name.lower()}")
    for block in BLOCKS_BY_COMMAND[command]:
        if block not in raw.blocks:
            raise ConfigError(block, "missing block %s")

    def parse_block(name: str, parse: Callable[[dict], Any]):
        try:
            return parse(raw.blocks.get(name, {}))
        except ConfigError as ex:
            raise ex.parent_error(name) from None

    mechanism = parse_block("mechanism", Mechanism.from_dict)
    solver_cfg = parse_block("solver", lambda block: SolverConfig.from_dict({**_solver_dict(defaults), **block}))
    profile_block: ProfileBlock = parse_block("profile", ProfileBlock.from_dict)

    if command == Command.SIM:
        for name in ("s_xn", "s_nx", "m"):
            if getattr(profile_block, name) is not None:
                raise ConfigError(f"profile.{name}", "%s is not used by sim; node demands come from sim.demands")
        sim_block: SimBlock = parse_block("sim", SimBlock.from_dict)
        extra = {} if profile_block.b is None else {"b": profile_block.b}
        sim = parse_block("sim", lambda _: SimConfig(
            n_nodes=sim_block.n_nodes, mech=mechanism, demands=sim_block.demand_list(), g=profile_block.g,
            hop_factor=sim_block.hop_factor, e=profile_block.e, rounds=sim_block.rounds, seed=sim_block.seed,
            solver_cfg=solver_cfg, initial_policy=sim_block.initial_policy, n_samples=sim_block.n_samples, **extra))
        return Scenario(command=command, mechanism=mechanism, solver=solver_cfg, sim=sim, output=output)

    profile = parse_block("profile", lambda _: profile_block.to_profile())
    if command == Command.SOLVE:
        return Scenario(command=command, mechanism=mechanism, solver=solver_cfg, profile=profile, output=output)

    sweep_block: SweepBlock = parse_block("sweep", SweepBlock.from_dict)
    if command == Command.CURVE:
        if sweep_block.kind not in (None, SweepKind.UTILITY_CURVE):
            raise ConfigError("sweep.kind", "%s must be utility_curve (or absent) for curve")
        kind = SweepKind.UTILITY_CURVE
    else:
        if sweep_block.kind is None:
            raise ConfigError("sweep.kind", "missing %s")
        kind = sweep_block.kind
    spec = parse_block("sweep", lambda _: SweepSpec(
        kind=kind, mech=mechanism, base_profile=profile,
        range=SweepRange(lo=sweep_block.lo, hi=sweep_block.hi, steps=sweep_block.steps), solver_cfg=solver_cfg,
        t_x=sweep_block.t_x, t_s=sweep_block.t_s, n_samples=sweep_block.n_samples, workers=workers))
    return Scenario(command=command, mechanism=mechanism, solver=solver_cfg, sweep=spec, output=output)


def _solver_dict(cfg: SolverConfig) -> dict:
    return {"grid_step": cfg.grid_step, "tie_tolerance": cfg.tie_tolerance, "refine": cfg.refine,
            "refine_tolerance": cfg.refine_tolerance, "allow_opt_out": cfg.allow_opt_out}


def parse_scenario(text: str, solver_defaults: SolverConfig = SolverConfig(), workers: int = 1) -> Scenario:
    """Parse and validate scenario text. Raises ``ScenarioError`` carrying the offending line number."""
    raw = _tokenize(text)
    try:
        return _resolve(raw, solver_defaults, workers)
    except ConfigError as ex:
        raise ScenarioError(raw.line_of(ex.field), str(ex)) from None


class Table(NamedTuple):
    columns: Sequence[str]
    rows: List[Sequence[Any]]


COMMANDS: FunctionRegistry[Command, Callable[[Scenario], Table]] = FunctionRegistry()


@COMMANDS.register(Command.SOLVE)
def _run_solve(scn: Scenario) -> Table:
    result = solve(scn.mechanism, scn.profile, scn.solver)
    interval = result.argmax_interval() or (None, None)
    return Table(("status", "t_star", "u_star", "argmax_lo", "argmax_hi"),
                 [(result.status, result.t_star, result.u_star, interval[0], interval[1])])


@COMMANDS.register(Command.CURVE)
def _run_curve(scn: Scenario) -> Table:
    points = run_sweep(scn.sweep)
    return Table(("x", "u", "feasible"), [(point.x, point.u, point.feasible) for point in points])


@COMMANDS.register(Command.SWEEP)
def _run_sweep(scn: Scenario) -> Table:
    points = run_sweep(scn.sweep)
    variable = scn.sweep.kind.variable
    if scn.sweep.kind == SweepKind.EXCLUSION_VS_E:
        return Table((variable, "probability"), [(point.x, point.u) for point in points])
    if scn.sweep.kind == SweepKind.UTILITY_CURVE:
        return Table(("x", "u", "feasible"), [(point.x, point.u, point.feasible) for point in points])
    return Table((variable, "t_star", "status"), [(point.x, point.u, point.status) for point in points])


@COMMANDS.register(Command.SIM)
def _run_sim(scn: Scenario) -> Table:
    result = run(scn.sim)
    LOGGER.info("Simulation finished after %d rounds (converged: %s, last change in round %d)",
                len(result.metrics), result.converged, result.convergence_round)
    return Table(("round", "mean_policy", "opted_out", "delivered", "offered"),
                 [(metrics.round, metrics.mean_policy, metrics.opted_out_count, metrics.delivered, metrics.offered)
                  for metrics in result.metrics])


def format_value(value: Any, digits: int = 12) -> str:
    """Serialize one CSV/header value. Negative infinity becomes ``-inf``; absent values are empty."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Enum):
        return value.name.lower()
    if isinstance(value, float):
        if isinf(value):
            return "-inf" if value < 0 else "inf"
        return format(value, f".{digits}g")
    if isinstance(value, (list, tuple)):
        return "[" + ";".join(format_value(item, digits) for item in value) + "]"
    return str(value)


def resolved_parameters(scn: Scenario) -> Dict[str, Any]:
    """Every parameter the run used, by dotted key. Blocks the command doesn't use are left out."""
    flat = scn.to_flat_dict()
    return {key: flat[key] for key in sorted(flat) if not (flat[key] is None and "." not in key)}


def render_csv(scn: Scenario, table: Table, digits: int = 12) -> str:
    stream = io.StringIO()
    header = " ".join(f"{key}={format_value(value, digits)}" for key, value in resolved_parameters(scn).items())
    stream.write(f"# {APP_NAME} {header}\n")
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([format_value(value, digits) for value in row])
    return stream.getvalue()


def _archive(file: str, scn: Scenario, output: Optional[str], text: str):
    open_archive(file)
    lines = text.splitlines()
    with db_connection.connection_context():
        with db_connection.atomic():
            parameters = {key: format_value(value) for key, value in resolved_parameters(scn).items()}
            db_run = DbRun.create(uuid=uuid4(), format_version=FORMAT_VERSION, command=scn.command.name.lower(),
                                  parameters=json.dumps(parameters), output=output or "-", row_count=len(lines) - 2)
            DbRunRow.insert_many([{"run": db_run, "index": index, "text": line}
                                  for index, line in enumerate(lines[2:])]).execute()
    LOGGER.info("Archived run %s in %s", db_run.uuid, file)


def execute(scn: Scenario, out: Optional[str] = None, digits: int = 12, archive: Optional[str] = None) -> int:
    """Run a scenario and write its CSV to ``out`` (or the scenario's output, or stdout). Returns the exit code."""
    output = out or scn.output
    LOGGER.info("Running %s scenario with %s", scn.command.name.lower(), scn.mechanism.variant.token)
    try:
        table = COMMANDS.dispatch(scn.command)(scn)
        text = render_csv(scn, table, digits)
    except (ConfigError, CoopError) as ex:
        LOGGER.error("%s failed: %s", scn.command.name.lower(), ex)
        return EXIT_RUNTIME
    except Exception:
        LOGGER.error("Internal error while running %s", scn.command.name.lower(), exc_info=True)
        return EXIT_RUNTIME

    try:
        if output:
            with open(output, "w", encoding="utf-8", newline="") as stream:
                stream.write(text)
            LOGGER.info("Wrote %d rows to %s", len(table.rows), output)
        else:
            sys.stdout.write(text)
    except OSError as ex:
        LOGGER.error("%s", ExecutionError(f"can't write {output}: {ex.strerror}"))
        return EXIT_RUNTIME

    if archive:
        try:
            _archive(archive, scn, output, text)
        except Exception:
            LOGGER.error("Failed to archive run in %s", archive, exc_info=True)
            return EXIT_RUNTIME
    return EXIT_OK


class _ArgumentParser(ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> ArgumentParser:
    parser = _ArgumentParser(description=f"Runs {APP_NAME} scenarios: optimal policies, utility curves, sweeps and "
                                         f"network simulations.", prog=f"python -m {MODULE_NAME}")
    parser.add_argument("scenario", help="the scenario file to run")
    parser.add_argument("--out", default=None, help="write the CSV here instead of the scenario's output or stdout")
    parser.add_argument("--seed", type=int, default=None, help="override the simulation seed")
    parser.add_argument("--config", default=None,
                        help=f"an alternative configuration file (default: {config.DEFAULT_CONFIG_FILE})")
    parser.add_argument("--db", default=None, help="archive the run in this SQLite file")
    parser.add_argument("--debug", action="store_true", help="enable DEBUG level logging")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as ex:
        return ex.code if isinstance(ex.code, int) else EXIT_USAGE

    logging.basicConfig(format="%(asctime)s [%(name)s] %(levelname)s: %(message)s", stream=sys.stderr,
                        level=logging.INFO)
    try:
        global_config = config.load(args.config, reload=True)
    except (OSError, toml.TomlDecodeError, ConfigError) as ex:
        LOGGER.error("Invalid configuration: %s", ex)
        return EXIT_USAGE

    if args.debug or global_config.debug.enabled:
        logging.getLogger().setLevel(logging.DEBUG)
        logging.getLogger("peewee").setLevel(logging.INFO)

    if args.seed is not None and args.seed < 0:
        LOGGER.error("--seed must be a non-negative integer")
        return EXIT_USAGE
    try:
        with open(args.scenario, encoding="utf-8") as stream:
            text = stream.read()
    except (OSError, UnicodeDecodeError) as ex:
        LOGGER.error("Can't read scenario %s: %s", args.scenario, ex)
        return EXIT_USAGE

    try:
        scenario = parse_scenario(text, global_config.solver.to_solver_config(), global_config.sweep.workers)
        if args.seed is not None:
            scenario = scenario.with_seed(args.seed)
    except ScenarioError as ex:
        LOGGER.error("%s: %s", args.scenario, ex)
        return EXIT_USAGE
    except ConfigError as ex:
        LOGGER.error("%s: scenario: %s", args.scenario, ex)
        return EXIT_USAGE

    archive = args.db or global_config.database.file or None
    return execute(scenario, args.out, global_config.output.significant_digits, archive)
