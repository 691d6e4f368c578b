"""Simulation driver, inter-level error norms and refinement studies.

A refinement ladder halves the mesh size and the time step together; the
discretization error of level k is estimated against level k+1, with the
coarse solution prolonged exactly into the fine space (the meshes nest).
Error norms follow the benchmark convention: squared norms are summed, so
first-order convergence of a quantity shows up as an order near two for
its squared error.

Piecewise-constant-in-time quantities (the chemical potential and the
pressure live on intervals, not nodes) are compared per coarse interval
against both matching fine half-intervals with equal weights, which is the
exact time integral of the squared difference of two interval-constant
functions.  Node-based time norms use the left-endpoint rule, whose
first-order-in-tau quadrature error cannot pollute an O(tau) measurement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .diagnostics import DiagnosticsRecord, initial_record, record
from .fespace import FeFunction, prolong, scalar_qp, tabulate, vector_qp
from .la import NewtonSettings
from .mesh import PeriodicTriMesh, build_uniform, quad_rule
from .physics import MaterialModel, default_model
from .scheme import (
    NewtonStats,
    SpaceSet,
    State,
    Stepper,
    StepperConfig,
    build_spaces,
    initial_state,
)


def benchmark_initial_data():
    """Smooth periodic initial data of the bundled convergence benchmark."""

    def phi0(x, y):
        return 0.4 + 0.2 * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)

    def theta0(x, y):
        return 1.0 + 0.2 * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)

    def u0(x, y):
        return (-1e-2 * np.sin(np.pi * x) ** 2 * np.sin(2 * np.pi * y),
                1e-2 * np.sin(2 * np.pi * x) * np.sin(np.pi * y) ** 2)

    return phi0, theta0, u0


@dataclass(frozen=True)
class RunConfig:
    """One simulation of the refinement ladder.

    The mesh has ``base * 2**level`` subdivisions per axis.  The time step
    at level k is ``c_tau * h_k`` (or ``tau0 / 2**k`` when ``tau0`` is
    given explicitly) and is then shrunk to the nearest exact divisor of
    ``final_time``.
    """

    base: int = 8
    level: int = 0
    final_time: float = 2.0e-3
    c_tau: float = 1e-3
    tau0: float | None = None
    star_rule: str = "old"
    newton: NewtonSettings = field(default_factory=NewtonSettings)
    theta_floor: float = 1e-8
    quad_degree: int = 6
    model: MaterialModel = field(default_factory=default_model)
    initial_data: tuple = field(default_factory=benchmark_initial_data)

    def __post_init__(self):
        if self.base < 4:
            raise ValueError("base mesh must have at least 4 subdivisions per axis")
        if self.level < 0:
            raise ValueError("level must be nonnegative")
        if self.final_time <= 0:
            raise ValueError("final time must be positive")

    @property
    def mesh_subdivisions(self) -> int:
        return self.base * 2**self.level

    def resolve_tau(self) -> tuple[float, int]:
        """Time step (shrunk to divide final_time exactly) and step count."""
        if self.tau0 is not None:
            requested = self.tau0 / 2**self.level
        else:
            requested = self.c_tau / self.mesh_subdivisions
        n_steps = max(1, math.ceil(self.final_time / requested - 1e-9))
        return self.final_time / n_steps, n_steps

    def stepper_config(self) -> StepperConfig:
        tau, _ = self.resolve_tau()
        return StepperConfig(tau=tau, star_rule=self.star_rule,
                             newton=self.newton, theta_floor=self.theta_floor,
                             quad_degree=self.quad_degree)


@dataclass(eq=False)
class RunResult:
    config: RunConfig
    mesh: PeriodicTriMesh
    spaces: SpaceSet
    states: list[State]
    records: list[DiagnosticsRecord]
    newton_stats: list[NewtonStats]

    @property
    def tau(self) -> float:
        return self.config.resolve_tau()[0]


def run(cfg: RunConfig) -> RunResult:
    """Run one simulation, keeping every time level and its diagnostics.

    Solver errors propagate with the failing step index attached.
    """
    mesh = build_uniform(cfg.mesh_subdivisions)
    spaces = build_spaces(mesh)
    scfg = cfg.stepper_config()
    stepper = Stepper(mesh, spaces, cfg.model, scfg)
    phi0, theta0, u0 = cfg.initial_data
    state = initial_state(mesh, spaces, cfg.model, phi0, theta0, u0,
                          quad_degree=cfg.quad_degree)
    states = [state]
    records = [initial_record(state, cfg.model, scfg)]
    stats: list[NewtonStats] = []
    _, n_steps = cfg.resolve_tau()
    for k in range(1, n_steps + 1):
        new, st = stepper.step(states[-1], step_index=k)
        records.append(record(new, states[-1], cfg.model, scfg,
                              step_index=k, newton_iters=st.iterations))
        states.append(new)
        stats.append(st)
    return RunResult(config=cfg, mesh=mesh, spaces=spaces, states=states,
                     records=records, newton_stats=stats)


@dataclass(frozen=True)
class ErrorRow:
    """Squared error norms between one level and its refinement.

    ``linf_h1_phi``, ``l2_h1_mu``, ``l2_h1_theta`` and ``l2_h1_u`` are the
    four separately tabulated quantities of the benchmark; the combined
    error additionally contains ``linf_l2_theta`` and ``linf_l2_u``, which
    have no column of their own there.
    """

    level: int
    linf_h1_phi: float
    linf_l2_theta: float
    linf_l2_u: float
    l2_h1_mu: float
    l2_h1_theta: float
    l2_h1_u: float

    @property
    def combined(self) -> float:
        return (self.linf_h1_phi + self.linf_l2_theta + self.linf_l2_u
                + self.l2_h1_mu + self.l2_h1_theta + self.l2_h1_u)


class _DiffNorms:
    """Cached tabulations for norms of coefficient differences on one mesh."""

    def __init__(self, spaces: SpaceSet, degree: int):
        rule = quad_rule(degree)
        self.spaces = spaces
        self.tab1 = tabulate(spaces.scalar, rule)
        self.tab2 = tabulate(spaces.velocity, rule)
        self.w = self.tab1.weights

    def scalar_sq(self, coeffs: np.ndarray) -> tuple[float, float]:
        vals, grads = scalar_qp(self.tab1, self.spaces.scalar, coeffs)
        l2 = float(np.sum(self.w * vals**2))
        h1 = float(np.sum(self.w * np.sum(grads**2, axis=-1)))
        return l2, h1

    def vector_sq(self, coeffs: np.ndarray) -> tuple[float, float]:
        vals, grads = vector_qp(self.tab2, self.spaces.velocity, coeffs)
        l2 = float(np.sum(self.w * np.sum(vals**2, axis=-1)))
        h1 = float(np.sum(self.w * np.sum(grads**2, axis=(-1, -2))))
        return l2, h1


def _diff(coarse_fn: FeFunction, fine_fn: FeFunction, fine_space) -> np.ndarray:
    return prolong(coarse_fn, fine_space).coefficients - fine_fn.coefficients


def inter_level_error(coarse: RunResult, fine: RunResult) -> ErrorRow:
    """Error norms of the coarse run measured against its refinement."""
    if fine.mesh.n != 2 * coarse.mesh.n:
        raise ValueError("fine run must refine the coarse run once in space")
    if len(fine.states) != 2 * (len(coarse.states) - 1) + 1:
        raise ValueError("fine run must refine the coarse run once in time")
    tau_c = coarse.tau
    norms = _DiffNorms(fine.spaces, coarse.config.quad_degree)
    n_intervals = len(coarse.states) - 1

    linf_h1_phi = 0.0
    linf_l2_theta = 0.0
    linf_l2_u = 0.0
    l2_h1_theta = 0.0
    l2_h1_u = 0.0
    for n, cs in enumerate(coarse.states):
        fs = fine.states[2 * n]
        if abs(cs.time - fs.time) > 1e-12:
            raise ValueError("time grids do not align")
        l2, h1 = norms.scalar_sq(_diff(cs.phi, fs.phi, fine.spaces.scalar))
        linf_h1_phi = max(linf_h1_phi, l2 + h1)
        l2t, h1t = norms.scalar_sq(_diff(cs.theta, fs.theta, fine.spaces.scalar))
        linf_l2_theta = max(linf_l2_theta, l2t)
        l2u, h1u = norms.vector_sq(_diff(cs.u, fs.u, fine.spaces.velocity))
        linf_l2_u = max(linf_l2_u, l2u)
        if n < n_intervals:  # left-endpoint rule in time
            l2_h1_theta += tau_c * (l2t + h1t)
            l2_h1_u += tau_c * (l2u + h1u)

    # interval-constant pairing of the chemical potential
    l2_h1_mu = 0.0
    for n in range(n_intervals):
        cmu = prolong(coarse.states[n + 1].mu, fine.spaces.scalar).coefficients
        for half in (1, 2):
            d = cmu - fine.states[2 * n + half].mu.coefficients
            l2, h1 = norms.scalar_sq(d)
            l2_h1_mu += tau_c * 0.5 * (l2 + h1)

    return ErrorRow(level=coarse.config.level,
                    linf_h1_phi=linf_h1_phi, linf_l2_theta=linf_l2_theta,
                    linf_l2_u=linf_l2_u, l2_h1_mu=l2_h1_mu,
                    l2_h1_theta=l2_h1_theta, l2_h1_u=l2_h1_u)


def eoc(errors) -> list[float]:
    """Experimental orders of convergence, log2 of consecutive ratios.

    Nonpositive errors give NaN markers (the order is undefined there).
    """
    errors = list(errors)
    if len(errors) < 2:
        raise ValueError("need at least two levels for convergence orders")
    out = []
    for prev, cur in zip(errors, errors[1:]):
        if prev <= 0.0 or cur <= 0.0:
            out.append(float("nan"))
        else:
            out.append(math.log2(prev / cur))
    return out


@dataclass(frozen=True)
class ErrorTable:
    rows: list[ErrorRow]

    def column(self, name: str) -> list[float]:
        return [getattr(r, name) if name != "combined" else r.combined
                for r in self.rows]

    def eoc_column(self, name: str) -> list[float]:
        if len(self.rows) < 2:
            return []
        return eoc(self.column(name))

    def final_combined_eoc(self) -> float | None:
        if len(self.rows) < 2:
            return None
        return self.eoc_column("combined")[-1]


#: (table header, ErrorRow attribute) pairs mirroring the benchmark layout
TABLE_COLUMNS = [
    ("e", "combined"),
    ("e_phi", "linf_h1_phi"),
    ("e_mu", "l2_h1_mu"),
    ("e_grad_theta", "l2_h1_theta"),
    ("e_grad_u", "l2_h1_u"),
]

#: combined-error constituents without a dedicated table column
EXTRA_COLUMNS = [
    ("linf_l2_theta", "linf_l2_theta"),
    ("linf_l2_u", "linf_l2_u"),
]


def convergence_study(base_cfg: RunConfig, num_levels: int) -> tuple[ErrorTable, list[RunResult]]:
    """Run levels 0..num_levels-1 and tabulate inter-level errors."""
    if num_levels < 2:
        raise ValueError("a convergence study needs at least two levels")
    results = [run(replace(base_cfg, level=k)) for k in range(num_levels)]
    rows = [inter_level_error(results[k], results[k + 1])
            for k in range(num_levels - 1)]
    return ErrorTable(rows=rows), results


def format_error_table(table: ErrorTable) -> str:
    """Aligned plain-text table: one row per level, error and order columns."""
    headers = ["k"]
    for name, _ in TABLE_COLUMNS:
        headers.extend([name, "eoc"])
    lines = []
    widths = [4] + [14, 6] * len(TABLE_COLUMNS)
    lines.append("".join(h.rjust(w) for h, w in zip(headers, widths)))
    orders = {attr: table.eoc_column(attr) for _, attr in TABLE_COLUMNS}
    for i, row in enumerate(table.rows):
        cells = [f"{row.level}".rjust(4)]
        for name, attr in TABLE_COLUMNS:
            value = row.combined if attr == "combined" else getattr(row, attr)
            cells.append(f"{value:.3e}".rjust(14))
            if i == 0:
                cells.append("---".rjust(6))
            else:
                o = orders[attr][i - 1]
                cells.append(("---" if math.isnan(o) else f"{o:.2f}").rjust(6))
        lines.append("".join(cells))
    return "\n".join(lines) + "\n"
