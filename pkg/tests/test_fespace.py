import numpy as np
import pytest

from chnsfem.fespace import (
    P1,
    P1_MEANFREE,
    P2,
    P2_VECTOR,
    FeFunction,
    build_space,
    c_skw,
    evaluate,
    interpolate,
    mean_value,
    norms,
    prolong,
    scalar_qp,
    tabulate,
    vector_qp,
)
from chnsfem.mesh import build_uniform, quad_rule


def phi0(x, y):
    return 0.4 + 0.2 * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)


def u0(x, y):
    return (-1e-2 * np.sin(np.pi * x) ** 2 * np.sin(2 * np.pi * y),
            1e-2 * np.sin(2 * np.pi * x) * np.sin(np.pi * y) ** 2)


def test_dof_counts():
    mesh4 = build_uniform(4)
    assert build_space(mesh4, P1).dof_count == 16
    assert build_space(mesh4, P2).dof_count == 64
    mesh2 = build_uniform(2)
    assert build_space(mesh2, P2_VECTOR).dof_count == 32


@pytest.mark.parametrize("family", [P1, P2, P2_VECTOR])
def test_every_dof_referenced(family):
    space = build_space(build_uniform(3), family)
    table = space.element_dof_table
    assert table.max() < space.scalar_dof_count
    assert len(np.unique(table)) == space.scalar_dof_count


@pytest.mark.parametrize("family", [P1, P2])
def test_partition_of_unity_and_gradient_sum(family):
    space = build_space(build_uniform(3), family)
    tab = tabulate(space, quad_rule(6))
    assert np.abs(tab.N.sum(axis=1) - 1.0).max() <= 1e-14
    assert np.abs(tab.grads.sum(axis=2)).max() <= 1e-12


def test_weights_integrate_domain():
    space = build_space(build_uniform(5), P1)
    tab = tabulate(space, quad_rule(4))
    assert abs(tab.weights.sum() - 1.0) <= 1e-13


def test_interpolate_constant():
    space = build_space(build_uniform(4), P1)
    f = interpolate(space, lambda x, y: np.ones_like(x))
    assert np.abs(f.coefficients - 1.0).max() == 0.0


def test_interpolate_initial_phase_field_vertex_value():
    space = build_space(build_uniform(4), P1)
    f = interpolate(space, phi0)
    vid = 1 * 4 + 1  # vertex (0.25, 0.25)
    assert abs(f.coefficients[vid] - 0.6) <= 1e-15


@pytest.mark.parametrize("family", [P1, P2])
def test_interpolation_reproduces_own_space(family):
    rng = np.random.default_rng(7)
    space = build_space(build_uniform(3), family)
    f = FeFunction(space, rng.standard_normal(space.dof_count))
    g = interpolate(space, lambda x, y: evaluate(f, np.column_stack([x, y])))
    assert np.abs(g.coefficients - f.coefficients).max() <= 1e-13


def test_vector_interpolation_reproduces_own_space():
    rng = np.random.default_rng(8)
    space = build_space(build_uniform(2), P2_VECTOR)
    f = FeFunction(space, rng.standard_normal(space.dof_count))

    def closure(x, y):
        vals = evaluate(f, np.column_stack([x, y]))
        return vals[:, 0], vals[:, 1]

    g = interpolate(space, closure)
    assert np.abs(g.coefficients - f.coefficients).max() <= 1e-13


def test_interpolated_gradient_converges_at_second_order():
    # P2 interpolant of sin(2*pi*x): gradient error in L2 shrinks like h^2
    errs = []
    for n in (4, 8, 16):
        space = build_space(build_uniform(n), P2)
        f = interpolate(space, lambda x, y: np.sin(2 * np.pi * x))
        tab = tabulate(space, quad_rule(8))
        _, grads = scalar_qp(tab, space, f.coefficients)
        # physical coordinates of the quadrature points
        corners = space.mesh.tri_coords
        pts = np.einsum("qb,ebs->eqs", tab.rule.points, corners)
        exact = 2 * np.pi * np.cos(2 * np.pi * pts[..., 0])
        err2 = np.sum(tab.weights * ((grads[..., 0] - exact) ** 2
                                     + grads[..., 1] ** 2))
        errs.append(np.sqrt(err2))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.8)


def test_initial_velocity_divergence_decays_quadratically():
    # the benchmark initial velocity is divergence-free; the P2 interpolant's
    # divergence vanishes at the interpolation rate
    errs = []
    for n in (4, 8, 16):
        space = build_space(build_uniform(n), P2_VECTOR)
        f = interpolate(space, u0)
        tab = tabulate(space, quad_rule(6))
        _, grads = vector_qp(tab, space, f.coefficients)
        div = grads[..., 0, 0] + grads[..., 1, 1]
        errs.append(np.sqrt(np.sum(tab.weights * div**2)))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.8)


def test_prolong_constant():
    coarse = build_space(build_uniform(2), P1)
    fine = build_space(build_uniform(4), P1)
    f = interpolate(coarse, lambda x, y: np.full_like(x, 3.5))
    g = prolong(f, fine)
    assert np.abs(g.coefficients - 3.5).max() <= 1e-14


@pytest.mark.parametrize("family", [P1, P2, P2_VECTOR])
def test_prolong_matches_coarse_at_random_points(family):
    rng = np.random.default_rng(11)
    coarse = build_space(build_uniform(2), family)
    fine = build_space(build_uniform(4), family)
    f = FeFunction(coarse, rng.standard_normal(coarse.dof_count))
    g = prolong(f, fine)
    pts = rng.random((50, 2))
    assert np.abs(evaluate(g, pts) - evaluate(f, pts)).max() <= 1e-13


def test_prolong_is_isometry():
    rng = np.random.default_rng(12)
    coarse = build_space(build_uniform(3), P2)
    fine = build_space(build_uniform(6), P2)
    f = FeFunction(coarse, rng.standard_normal(coarse.dof_count))
    g = prolong(f, fine)
    for a, b in zip(norms(f), norms(g)):
        assert abs(a - b) <= 1e-13 * max(1.0, a)


def test_prolong_rejects_mismatched_meshes():
    coarse = build_space(build_uniform(2), P1)
    wrong = build_space(build_uniform(6), P1)
    f = interpolate(coarse, lambda x, y: x * 0)
    with pytest.raises(ValueError):
        prolong(f, wrong)
    other_family = build_space(build_uniform(4), P2)
    with pytest.raises(ValueError):
        prolong(f, other_family)


def test_l2_norm_of_one():
    space = build_space(build_uniform(4), P1)
    f = interpolate(space, lambda x, y: np.ones_like(x))
    l2, semi = norms(f)
    assert abs(l2 - 1.0) <= 1e-14
    assert semi <= 1e-14


def test_h1_seminorm_against_analytic_value():
    # |sin(2 pi x)|_{H1}^2 = 2 pi^2; the P2 interpolant converges at O(h^2)
    errs = []
    for n in (8, 16):
        space = build_space(build_uniform(n), P2)
        f = interpolate(space, lambda x, y: np.sin(2 * np.pi * x))
        _, semi = norms(f)
        errs.append(abs(semi**2 - 2 * np.pi**2))
    assert errs[0] <= 0.1
    assert np.log2(errs[0] / errs[1]) > 1.8


def test_meanfree_family_mean():
    space = build_space(build_uniform(4), P1_MEANFREE)
    f = interpolate(space, lambda x, y: np.sin(2 * np.pi * x))
    assert abs(mean_value(f)) <= 1e-12


def test_c_skw_vanishes_on_repeated_argument():
    rng = np.random.default_rng(3)
    space = build_space(build_uniform(4), P2_VECTOR)
    for _ in range(20):
        u = FeFunction(space, rng.standard_normal(space.dof_count))
        v = FeFunction(space, rng.standard_normal(space.dof_count))
        assert abs(c_skw(u, v, v)) <= 1e-13


def test_c_skw_antisymmetry():
    rng = np.random.default_rng(4)
    space = build_space(build_uniform(3), P2_VECTOR)
    for _ in range(5):
        u, v, w = (FeFunction(space, rng.standard_normal(space.dof_count))
                   for _ in range(3))
        a = c_skw(u, v, w)
        b = c_skw(u, w, v)
        assert abs(a + b) <= 1e-13 * max(1.0, abs(a))


def test_c_skw_zero_velocity():
    rng = np.random.default_rng(5)
    space = build_space(build_uniform(2), P2_VECTOR)
    z = FeFunction(space, np.zeros(space.dof_count))
    v = FeFunction(space, rng.standard_normal(space.dof_count))
    w = FeFunction(space, rng.standard_normal(space.dof_count))
    assert c_skw(z, v, w) == 0.0


def test_c_skw_space_mismatch():
    s1 = build_space(build_uniform(2), P2_VECTOR)
    s2 = build_space(build_uniform(2), P2_VECTOR)
    u = FeFunction(s1, np.zeros(s1.dof_count))
    v = FeFunction(s2, np.zeros(s2.dof_count))
    with pytest.raises(ValueError):
        c_skw(u, u, v)


def test_fefunction_length_check():
    space = build_space(build_uniform(2), P1)
    with pytest.raises(ValueError):
        FeFunction(space, np.zeros(space.dof_count + 1))
