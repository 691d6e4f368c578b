"""Command-line entry point: validate, run and converge subcommands.

Configuration files are plain key=value sections.  Parsing is strict, a
typo in a physics parameter would silently invalidate a verification run,
so unknown sections or keys are rejected.  All numeric output is written
with 17 significant digits, which round-trips 64-bit floats exactly and
makes reruns byte-identical.

Exit codes: 0 success, 1 numerical or structure failure, 2 usage or
configuration errors.
"""

from __future__ import annotations

import argparse
import configparser
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diagnostics import DiagnosticsRecord, StructureViolationError
from .harness import (
    EXTRA_COLUMNS,
    TABLE_COLUMNS,
    ErrorTable,
    RunConfig,
    RunResult,
    convergence_study,
    format_error_table,
    run,
)
from .la import FactorizationError, NewtonSettings
from .mesh import PeriodicTriMesh
from .physics import default_model, validate_model
from .scheme import State, StepFailure

MODEL_NAME = "chnst-paper-sec3"

_KNOWN_KEYS = {
    "mesh": {"base", "level"},
    "time": {"tau", "c_tau", "T"},
    "model": {"name", "gamma", "mobility", "eta_min", "eta_quad"},
    "scheme": {"star_rule", "newton_tol", "newton_max_iter", "theta_floor"},
    "output": {"directory", "snapshot_stride", "formats", "eoc_gate"},
}

_FORMATS = {"csv", "vtk", "raw"}


class ConfigError(ValueError):
    """Unusable configuration file (syntax, unknown keys, bad values)."""


@dataclass
class Config:
    base: int = 8
    level: int = 0
    tau: float | None = None
    c_tau: float = 1e-3
    final_time: float = 2e-3
    model_name: str = MODEL_NAME
    gamma: float = 1e-3
    mobility: float = 1e-2
    eta_min: float = 1e-3
    eta_quad: float = 1.0 / 40.0
    star_rule: str = "old"
    newton_tol: float = 1e-12
    newton_max_iter: int = 30
    theta_floor: float = 1e-8
    directory: Path = Path("out")
    snapshot_stride: int = 0
    formats: tuple[str, ...] = ("csv",)
    eoc_gate: float = 1.5

    def build_model(self):
        if self.model_name != MODEL_NAME:
            raise ConfigError(
                f"unknown model {self.model_name!r}; available: {MODEL_NAME}")
        return default_model(gamma=self.gamma, mobility=self.mobility,
                             eta_min=self.eta_min, eta_quad=self.eta_quad)

    def run_config(self) -> RunConfig:
        return RunConfig(
            base=self.base, level=self.level, final_time=self.final_time,
            c_tau=self.c_tau, tau0=self.tau, star_rule=self.star_rule,
            newton=NewtonSettings(tol=self.newton_tol,
                                  max_iter=self.newton_max_iter),
            theta_floor=self.theta_floor, model=self.build_model())


def _convert(section: str, key: str, raw: str, kind, where: str):
    try:
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(
            f"{where}: value {raw!r} for [{section}] {key} is not a valid "
            f"{kind.__name__}") from exc


def parse_config(path: str | Path) -> Config:
    """Parse and validate a key=value configuration file."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case-sensitive ('T' stays 'T')
    try:
        with open(path, "r", encoding="utf-8") as handle:
            parser.read_file(handle, source=str(path))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        # configparser reports the offending line in its message
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc

    cfg = Config()
    for section in parser.sections():
        if section not in _KNOWN_KEYS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _KNOWN_KEYS[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            where = str(path)
            if section == "mesh":
                setattr(cfg, key, _convert(section, key, raw, int, where))
            elif section == "time":
                if key == "T":
                    cfg.final_time = _convert(section, key, raw, float, where)
                elif key == "tau":
                    cfg.tau = _convert(section, key, raw, float, where)
                else:
                    cfg.c_tau = _convert(section, key, raw, float, where)
            elif section == "model":
                if key == "name":
                    cfg.model_name = raw.strip()
                else:
                    setattr(cfg, key, _convert(section, key, raw, float, where))
            elif section == "scheme":
                if key == "star_rule":
                    value = raw.strip()
                    if value not in ("old", "new"):
                        raise ConfigError(
                            f"{where}: star_rule must be 'old' or 'new', got {value!r}")
                    cfg.star_rule = value
                elif key == "newton_max_iter":
                    cfg.newton_max_iter = _convert(section, key, raw, int, where)
                else:
                    setattr(cfg, key, _convert(section, key, raw, float, where))
            elif section == "output":
                if key == "directory":
                    cfg.directory = Path(raw.strip())
                elif key == "formats":
                    formats = tuple(f.strip() for f in raw.split(",") if f.strip())
                    unknown = set(formats) - _FORMATS
                    if unknown:
                        raise ConfigError(
                            f"{where}: unknown output formats {sorted(unknown)}; "
                            f"available: {sorted(_FORMATS)}")
                    cfg.formats = formats
                elif key == "snapshot_stride":
                    cfg.snapshot_stride = _convert(section, key, raw, int, where)
                else:
                    cfg.eoc_gate = _convert(section, key, raw, float, where)

    if cfg.base < 1 or cfg.level < 0:
        raise ConfigError(f"{path}: mesh base/level out of range")
    if cfg.snapshot_stride < 0:
        raise ConfigError(f"{path}: snapshot_stride must be nonnegative")
    return cfg


def _fmt(value: float) -> str:
    return f"{value:.17g}"


DIAGNOSTICS_COLUMNS = ("step", "time", "mass", "kinetic", "internal",
                       "total_energy", "entropy", "tau_dissipation", "d_num",
                       "newton_iters", "min_theta")


def write_diagnostics_csv(path: Path, records: list[DiagnosticsRecord]):
    lines = [",".join(DIAGNOSTICS_COLUMNS)]
    for r in records:
        lines.append(",".join([
            str(r.step), _fmt(r.time), _fmt(r.mass), _fmt(r.kinetic),
            _fmt(r.internal), _fmt(r.total_energy), _fmt(r.entropy),
            _fmt(r.tau_dissipation), _fmt(r.d_num), str(r.newton_iters),
            _fmt(r.min_theta),
        ]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_vtk_snapshot(path: Path, mesh: PeriodicTriMesh, state: State,
                       title: str = "fields"):
    """Legacy-VTK ASCII unstructured grid with the five solution fields.

    Points duplicate the periodic boundary (an (n+1)^2 grid), so triangles
    render without wrapping; velocity is subsampled at the vertices.
    """
    n = mesh.n
    npts = (n + 1) ** 2

    def pid(i, j):
        return i * (n + 1) + j

    def vid(i, j):
        return (i % n) * n + (j % n)

    lines = ["# vtk DataFile Version 3.0", title, "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {npts} double"]
    h = mesh.h
    for i in range(n + 1):
        for j in range(n + 1):
            lines.append(f"{_fmt(i * h)} {_fmt(j * h)} 0")
    ncell = 2 * n * n
    lines.append(f"CELLS {ncell} {4 * ncell}")
    for i in range(n):
        for j in range(n):
            lines.append(f"3 {pid(i, j)} {pid(i + 1, j)} {pid(i + 1, j + 1)}")
            lines.append(f"3 {pid(i, j)} {pid(i + 1, j + 1)} {pid(i, j + 1)}")
    lines.append(f"CELL_TYPES {ncell}")
    lines.extend(["5"] * ncell)

    index = np.array([vid(i, j) for i in range(n + 1) for j in range(n + 1)])
    lines.append(f"POINT_DATA {npts}")
    for name, fn in (("phi", state.phi), ("mu", state.mu),
                     ("theta", state.theta), ("pressure", state.pi)):
        lines.append(f"SCALARS {name} double")
        lines.append("LOOKUP_TABLE default")
        values = fn.coefficients[index]
        lines.extend(_fmt(v) for v in values)
    # P2 coefficients at vertex DOFs are the nodal velocity values
    u1 = state.u.component(0)[index]
    u2 = state.u.component(1)[index]
    lines.append("VECTORS velocity double")
    lines.extend(f"{_fmt(a)} {_fmt(b)} 0" for a, b in zip(u1, u2))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_raw_snapshot(path: Path, state: State):
    np.savez(path, time=state.time, phi=state.phi.coefficients,
             mu=state.mu.coefficients, theta=state.theta.coefficients,
             u=state.u.coefficients, pi=state.pi.coefficients)


def _write_snapshots(cfg: Config, outdir: Path, result: RunResult):
    if cfg.snapshot_stride <= 0:
        return
    for k, state in enumerate(result.states):
        if k % cfg.snapshot_stride != 0:
            continue
        if "vtk" in cfg.formats:
            write_vtk_snapshot(outdir / f"snapshot_{k}.vtk", result.mesh,
                               state, title=f"step {k}")
        if "raw" in cfg.formats:
            write_raw_snapshot(outdir / f"snapshot_{k}_coeffs.npz", state)


def write_eoc_tables(outdir: Path, table: ErrorTable):
    (outdir / "eoc_table.txt").write_text(format_error_table(table),
                                          encoding="utf-8")
    headers = ["level"]
    for name, _ in TABLE_COLUMNS:
        headers.extend([name, f"eoc_{name}"])
    headers.extend(name for name, _ in EXTRA_COLUMNS)
    lines = [",".join(headers)]
    orders = {attr: table.eoc_column(attr) for _, attr in TABLE_COLUMNS}
    for i, row in enumerate(table.rows):
        cells = [str(row.level)]
        for name, attr in TABLE_COLUMNS:
            value = row.combined if attr == "combined" else getattr(row, attr)
            cells.append(_fmt(value))
            cells.append("" if i == 0 else _fmt(orders[attr][i - 1]))
        for _, attr in EXTRA_COLUMNS:
            cells.append(_fmt(getattr(row, attr)))
        lines.append(",".join(cells))
    (outdir / "eoc_table.csv").write_text("\n".join(lines) + "\n",
                                          encoding="utf-8")


def cmd_validate(cfg: Config) -> int:
    try:
        model = cfg.build_model()
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    report = validate_model(model)
    print(report)
    print("model validation:", "PASS" if report.passed else "FAIL")
    return 0 if report.passed else 1


def cmd_run(cfg: Config) -> int:
    outdir = cfg.directory
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        result = run(cfg.run_config())
    except (StepFailure, StructureViolationError) as exc:
        step = getattr(exc, "step_index", None)
        print(f"error: solver failed at step {step}: {exc}", file=sys.stderr)
        return 1
    except FactorizationError as exc:
        print(f"error: linear solver failed: {exc}", file=sys.stderr)
        return 1
    write_diagnostics_csv(outdir / "diagnostics.csv", result.records)
    _write_snapshots(cfg, outdir, result)
    tau, n_steps = result.config.resolve_tau()
    print(f"completed {n_steps} steps (tau = {tau:g}) on a "
          f"{result.mesh.n}x{result.mesh.n} mesh; diagnostics in "
          f"{outdir / 'diagnostics.csv'}")
    return 0


def cmd_converge(cfg: Config) -> int:
    num_levels = cfg.level + 1
    if num_levels < 2:
        print("error: converge needs [mesh] level >= 1 (levels 0..level are run)",
              file=sys.stderr)
        return 2
    outdir = cfg.directory
    outdir.mkdir(parents=True, exist_ok=True)
    base_cfg = cfg.run_config()
    try:
        table, _ = convergence_study(base_cfg, num_levels)
    except (StepFailure, StructureViolationError, FactorizationError) as exc:
        step = getattr(exc, "step_index", None)
        print(f"error: solver failed (step {step}): {exc}", file=sys.stderr)
        return 1
    write_eoc_tables(outdir, table)
    print(format_error_table(table), end="")
    final = table.final_combined_eoc()
    if final is None:
        print("no convergence order available (single error row)")
        return 0
    print(f"final combined-error order: {final:.2f} (gate {cfg.eoc_gate:g})")
    return 0 if final >= cfg.eoc_gate else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="chnsfem",
        description="Structure-preserving solver for non-isothermal "
                    "two-phase flow on the periodic unit square")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("validate", "check material-model assumptions and identities"),
            ("run", "run one simulation and write per-step diagnostics"),
            ("converge", "run a refinement ladder and tabulate error orders")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the config file")
        p.add_argument("--output", default=None,
                       help="output directory (overrides [output] directory)")

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0

    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.output is not None:
        cfg.directory = Path(args.output)

    handlers = {"validate": cmd_validate, "run": cmd_run,
                "converge": cmd_converge}
    return handlers[args.command](cfg)


if __name__ == "__main__":
    sys.exit(main())
