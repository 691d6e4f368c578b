"""Per-step conservation and entropy-production diagnostics.

Every integral here uses the same quadrature rule as the assembly; mixing
rules would break the discrete identities at machine precision, since
their cancellations happen pointwise at the quadrature points.

The numerical dissipation of a step is evaluated as the residual
``<s_new - s_old, 1> - tau * D`` rather than from its mean-value-theorem
form, whose intermediate points exist but are not constructible; both are
equal by construction of the scheme, and the residual form is testable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fespace import scalar_qp, tabulate, vector_qp
from .mesh import quad_rule
from .physics import MaterialModel
from .scheme import STAR_OLD, State, StepperConfig


class StructureViolationError(RuntimeError):
    """A discrete conservation or dissipation law failed beyond tolerance."""

    def __init__(self, message: str, value: float,
                 step_index: int | None = None):
        super().__init__(message)
        self.value = value
        self.step_index = step_index


#: tolerance below which a negative numerical dissipation is an error
D_NUM_FLOOR = -1e-10


@dataclass(frozen=True)
class DiagnosticsRecord:
    step: int
    time: float
    mass: float
    kinetic: float
    internal: float
    entropy: float
    tau_dissipation: float
    d_num: float
    newton_iters: int
    min_theta: float

    @property
    def total_energy(self) -> float:
        return self.kinetic + self.internal


def _tabs(state: State, degree: int):
    spaces = state.spaces()
    rule = quad_rule(degree)
    return tabulate(spaces.scalar, rule), tabulate(spaces.velocity, rule)


def state_functionals(state: State, model: MaterialModel,
                      quad_degree: int = 6) -> tuple[float, float, float, float]:
    """(mass, kinetic energy, internal energy, entropy) of one level."""
    tab1, tab2 = _tabs(state, quad_degree)
    w = tab1.weights
    spaces = state.spaces()
    pv, pg = scalar_qp(tab1, spaces.scalar, state.phi.coefficients)
    tv, _ = scalar_qp(tab1, spaces.scalar, state.theta.coefficients)
    uv, _ = vector_qp(tab2, spaces.velocity, state.u.coefficients)
    mass = float(np.sum(w * pv))
    kinetic = float(np.sum(w * 0.5 * np.sum(uv**2, axis=-1)))
    internal = float(np.sum(w * model.e(pv, tv)))
    g2 = np.sum(pg**2, axis=-1)
    entropy = float(np.sum(w * model.s(pv, tv, g2)))
    return mass, kinetic, internal, entropy


def physical_dissipation(new: State, old: State, model: MaterialModel,
                         cfg: StepperConfig) -> float:
    """Entropy production rate of the step: viscous part weighted by the
    new inverse temperature plus the mobility quadratic form.

    Nonnegative whenever the mobility matrix is SPD and temperatures stay
    positive.
    """
    tab1, tab2 = _tabs(new, cfg.quad_degree)
    w = tab1.weights
    spaces = new.spaces()
    star = old if cfg.star_rule == STAR_OLD else new
    ps, _ = scalar_qp(tab1, spaces.scalar, star.phi.coefficients)
    ts, _ = scalar_qp(tab1, spaces.scalar, star.theta.coefficients)
    tn, gt = scalar_qp(tab1, spaces.scalar, new.theta.coefficients)
    _, gm = scalar_qp(tab1, spaces.scalar, new.mu.coefficients)
    _, gu_new = vector_qp(tab2, spaces.velocity, new.u.coefficients)
    _, gu_old = vector_qp(tab2, spaces.velocity, old.u.coefficients)

    gum = 0.5 * (gu_new + gu_old)
    sym = 0.5 * (gum + np.swapaxes(gum, -1, -2))
    dsq = np.sum(sym**2, axis=(-1, -2))
    viscous = np.sum(w * model.eta(ps, ts) * dsq * tn)

    quad = np.einsum("eq,eqs,st,eqt->", w, gm, model.L11, gm)
    quad -= 2.0 * np.einsum("eq,eqs,st,eqt->", w, gm, model.L12, gt)
    quad += np.einsum("eq,eqs,st,eqt->", w, gt, model.L22, gt)
    return float(viscous + quad)


def numerical_dissipation(new: State, old: State, model: MaterialModel,
                          cfg: StepperConfig,
                          step_index: int | None = None) -> float:
    """Extra entropy produced by the time discretization itself."""
    _, _, _, s_new = state_functionals(new, model, cfg.quad_degree)
    _, _, _, s_old = state_functionals(old, model, cfg.quad_degree)
    value = (s_new - s_old) - cfg.tau * physical_dissipation(new, old, model, cfg)
    if value < D_NUM_FLOOR:
        raise StructureViolationError(
            f"numerical dissipation {value:.3e} fell below {D_NUM_FLOOR:.0e}",
            value=value, step_index=step_index)
    return value


def phase_increment_gradient_term(new: State, old: State,
                                  model: MaterialModel,
                                  cfg: StepperConfig) -> float:
    """gamma/2 * ||grad(phi_new - phi_old)||^2, the explicitly computable
    first summand of the numerical dissipation (a lower bound for it when
    the split is valid)."""
    tab1, _ = _tabs(new, cfg.quad_degree)
    spaces = new.spaces()
    dphi = new.phi.coefficients - old.phi.coefficients
    _, g = scalar_qp(tab1, spaces.scalar, dphi)
    return float(0.5 * model.gamma * np.sum(tab1.weights * np.sum(g**2, axis=-1)))


def record(new: State, old: State, model: MaterialModel, cfg: StepperConfig,
           step_index: int = 0, newton_iters: int = 0) -> DiagnosticsRecord:
    """Diagnostics row for the step old -> new."""
    mass, kinetic, internal, entropy = state_functionals(new, model, cfg.quad_degree)
    tau_diss = cfg.tau * physical_dissipation(new, old, model, cfg)
    d_num = numerical_dissipation(new, old, model, cfg, step_index)
    return DiagnosticsRecord(
        step=step_index, time=new.time, mass=mass, kinetic=kinetic,
        internal=internal, entropy=entropy, tau_dissipation=tau_diss,
        d_num=d_num, newton_iters=newton_iters,
        min_theta=new.min_nodal_theta)


def initial_record(state: State, model: MaterialModel,
                   cfg: StepperConfig) -> DiagnosticsRecord:
    """Row for the initial level (no step happened yet)."""
    mass, kinetic, internal, entropy = state_functionals(state, model, cfg.quad_degree)
    return DiagnosticsRecord(
        step=0, time=state.time, mass=mass, kinetic=kinetic,
        internal=internal, entropy=entropy, tau_dissipation=0.0, d_num=0.0,
        newton_iters=0, min_theta=state.min_nodal_theta)
