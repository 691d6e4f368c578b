import numpy as np
import pytest

from chnsfem.diagnostics import (
    DiagnosticsRecord,
    StructureViolationError,
    initial_record,
    numerical_dissipation,
    phase_increment_gradient_term,
    physical_dissipation,
    record,
    state_functionals,
)
from chnsfem.fespace import scalar_qp, tabulate, vector_qp
from chnsfem.mesh import build_uniform, quad_rule
from chnsfem.physics import default_model
from chnsfem.scheme import Stepper, StepperConfig, build_spaces, initial_state


def phi0(x, y):
    return 0.4 + 0.2 * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)


def theta0(x, y):
    return 1.0 + 0.2 * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)


def u0(x, y):
    return (-1e-2 * np.sin(np.pi * x) ** 2 * np.sin(2 * np.pi * y),
            1e-2 * np.sin(2 * np.pi * x) * np.sin(np.pi * y) ** 2)


@pytest.fixture(scope="module")
def model():
    return default_model()


@pytest.fixture(scope="module")
def short_run(model):
    """50 benchmark steps on the n=8 mesh."""
    mesh = build_uniform(8)
    spaces = build_spaces(mesh)
    cfg = StepperConfig(tau=1e-3)
    stepper = Stepper(mesh, spaces, model, cfg)
    states = [initial_state(mesh, spaces, model, phi0, theta0, u0)]
    stats = []
    for k in range(50):
        new, st = stepper.step(states[-1], k)
        states.append(new)
        stats.append(st)
    return cfg, states, stats


def test_uniform_state_dissipations_vanish(model):
    mesh = build_uniform(4)
    spaces = build_spaces(mesh)
    state = initial_state(mesh, spaces, model,
                          lambda x, y: np.full_like(x, 0.3),
                          lambda x, y: np.full_like(x, 1.2),
                          lambda x, y: (np.zeros_like(x), np.zeros_like(x)))
    cfg = StepperConfig(tau=1e-3)
    stepper = Stepper(mesh, spaces, model, cfg)
    new, _ = stepper.step(state)
    assert abs(physical_dissipation(new, state, model, cfg)) <= 1e-12
    assert abs(numerical_dissipation(new, state, model, cfg)) <= 1e-12


def test_quadratic_form_terms_individually_nonnegative(short_run, model):
    # with a zero off-diagonal mobility block both quadratic pieces and the
    # weighted viscous piece are separately nonnegative
    cfg, states, _ = short_run
    new, old = states[1], states[0]
    spaces = new.spaces()
    tab1 = tabulate(spaces.scalar, quad_rule(cfg.quad_degree))
    tab2 = tabulate(spaces.velocity, quad_rule(cfg.quad_degree))
    w = tab1.weights
    _, gm = scalar_qp(tab1, spaces.scalar, new.mu.coefficients)
    tn, gt = scalar_qp(tab1, spaces.scalar, new.theta.coefficients)
    term_mu = np.einsum("eq,eqs,st,eqt->", w, gm, model.L11, gm)
    term_theta = np.einsum("eq,eqs,st,eqt->", w, gt, model.L22, gt)
    assert term_mu >= 0.0
    assert term_theta >= 0.0
    _, gun = vector_qp(tab2, spaces.velocity, new.u.coefficients)
    _, guo = vector_qp(tab2, spaces.velocity, old.u.coefficients)
    sym = 0.5 * (gun + guo)
    sym = 0.5 * (sym + np.swapaxes(sym, -1, -2))
    ps, _ = scalar_qp(tab1, spaces.scalar, old.phi.coefficients)
    ts, _ = scalar_qp(tab1, spaces.scalar, old.theta.coefficients)
    viscous = np.sum(w * model.eta(ps, ts) * np.sum(sym**2, (-1, -2)) * tn)
    total = physical_dissipation(new, old, model, cfg)
    assert viscous >= 0.0
    assert abs(total - (viscous + term_mu + term_theta)) <= 1e-15


def test_first_step_dissipation_decomposition(short_run, model):
    # tau*D must equal <de, theta_new> - <mu_new, dphi> computed by direct
    # quadrature of the compositions
    cfg, states, _ = short_run
    old, new = states[0], states[1]
    spaces = new.spaces()
    tab1 = tabulate(spaces.scalar, quad_rule(cfg.quad_degree))
    w = tab1.weights
    pn, _ = scalar_qp(tab1, spaces.scalar, new.phi.coefficients)
    po, _ = scalar_qp(tab1, spaces.scalar, old.phi.coefficients)
    tn, _ = scalar_qp(tab1, spaces.scalar, new.theta.coefficients)
    to, _ = scalar_qp(tab1, spaces.scalar, old.theta.coefficients)
    mn, _ = scalar_qp(tab1, spaces.scalar, new.mu.coefficients)
    de_theta = np.sum(w * (model.e(pn, tn) - model.e(po, to)) * tn)
    mu_dphi = np.sum(w * mn * (pn - po))
    tau_d = cfg.tau * physical_dissipation(new, old, model, cfg)
    assert tau_d > 0.0
    assert abs(de_theta - mu_dphi - tau_d) <= 1e-10


def test_run_invariants_over_fifty_steps(short_run, model):
    cfg, states, stats = short_run
    records = [initial_record(states[0], model, cfg)]
    for k in range(1, len(states)):
        records.append(record(states[k], states[k - 1], model, cfg,
                              step_index=k, newton_iters=stats[k - 1].iterations))

    mass = np.array([r.mass for r in records])
    assert np.abs(mass - mass[0]).max() <= 1e-10

    total = np.array([r.total_energy for r in records])
    assert np.abs(total - total[0]).max() <= 1e-9

    entropy = np.array([r.entropy for r in records])
    assert np.all(np.diff(entropy) >= -1e-10)

    assert all(r.d_num >= -1e-10 for r in records[1:])
    assert all(r.tau_dissipation >= -1e-12 for r in records[1:])
    assert all(r.min_theta > 0 for r in records)


def test_gradient_increment_lower_bound(short_run, model):
    cfg, states, _ = short_run
    for k in range(1, 11):
        lower = phase_increment_gradient_term(states[k], states[k - 1], model, cfg)
        d_num = numerical_dissipation(states[k], states[k - 1], model, cfg)
        assert lower <= d_num + 1e-10


def test_entropy_telescoping(short_run, model):
    cfg, states, _ = short_run
    _, _, _, s_first = state_functionals(states[0], model, cfg.quad_degree)
    _, _, _, s_last = state_functionals(states[-1], model, cfg.quad_degree)
    accumulated = 0.0
    for k in range(1, len(states)):
        accumulated += cfg.tau * physical_dissipation(states[k], states[k - 1], model, cfg)
        accumulated += numerical_dissipation(states[k], states[k - 1], model, cfg)
    assert abs((s_last - s_first) - accumulated) <= 1e-9


def test_reversed_step_violates_structure(short_run, model):
    # swapping the levels of a dissipative step makes the entropy balance
    # negative, which must be reported as a structure violation
    cfg, states, _ = short_run
    with pytest.raises(StructureViolationError) as info:
        numerical_dissipation(states[0], states[1], model, cfg, step_index=1)
    assert info.value.value < 0
    assert info.value.step_index == 1


def test_record_fields(short_run, model):
    cfg, states, stats = short_run
    rec = record(states[1], states[0], model, cfg, step_index=1,
                 newton_iters=stats[0].iterations)
    assert isinstance(rec, DiagnosticsRecord)
    assert rec.step == 1
    assert rec.time == pytest.approx(cfg.tau)
    assert rec.newton_iters == stats[0].iterations
    assert rec.total_energy == pytest.approx(rec.kinetic + rec.internal)
