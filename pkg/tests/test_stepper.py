import numpy as np
import pytest

from cutfem2d.errors import GeometryError
from cutfem2d.geometry import RigidState, classify
from cutfem2d.forms import build_cut_rules
from cutfem2d.mesh import build_structured_mesh
from cutfem2d.spaces import FEFunction, build_multiplier_space, \
    build_velocity_space
from cutfem2d.stepper import SchemeConfig, StepRecord, advance_geometry, \
    aitken_update, assemble_step_system, compute_force, energy_identity_residual, \
    gamma_gp, initial_record, ode_update, run_simulation, step, strip_width, \
    trajectory_row


def cfg(**kw):
    return SchemeConfig(**kw)


def test_strip_width_values():
    c = cfg(dt=0.02, scheme="bdf1")
    assert strip_width(c, (0.0, 0.0)) == 0.0
    assert strip_width(c, (0.0, -0.5)) == pytest.approx(0.02)
    c4 = cfg(dt=0.01, scheme="bdf2")
    assert c4.c_delta_h == 4.0
    assert strip_width(c4, (0.3, -0.4)) == pytest.approx(0.02)


def test_gamma_gp_values():
    c = cfg()
    assert gamma_gp(c, 1) == pytest.approx(0.1)    # gamma_s default
    assert gamma_gp(c, 3) == pytest.approx(0.3)
    c2 = cfg(gamma_s=0.5)
    assert gamma_gp(c2, 2) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        gamma_gp(c, 0)


def test_ode_update_bdf1():
    c = cfg(dt=0.02)
    xi1 = ode_update(c, np.zeros(2), [np.zeros(2)])
    assert xi1 == pytest.approx([0.0, -0.02])
    # telescoping with F = 0
    xi = np.zeros(2)
    for _ in range(7):
        xi = ode_update(c, np.zeros(2), [xi])
    assert xi == pytest.approx([0.0, -7 * 0.02 * 1.0])


def test_ode_update_bdf2_steady_growth():
    c = cfg(dt=0.02, scheme="bdf2")
    a = np.array([0.3, -1.0]) - np.asarray(c.gravity)   # rhs g + F = [0.3, -1]
    hist = [np.zeros(2), np.zeros(2)]
    for _ in range(50):
        new = ode_update(c, a, hist)
        hist = [hist[-1], new]
    inc = hist[-1] - hist[-2]
    assert inc == pytest.approx(c.dt * np.array([0.3, -1.0]), rel=1e-10)


def test_advance_geometry_bdf1():
    c = cfg(dt=0.02)
    s0 = RigidState((0.5, 0.8), 0.1, (0, 0))
    s1 = advance_geometry(c, [s0], (0.0, -0.02))
    assert s1.center == pytest.approx([0.5, 0.7996])
    s_same = advance_geometry(c, [s0], (0.0, 0.0))
    assert s_same.center == pytest.approx([0.5, 0.8])


def test_advance_geometry_bdf2_constant_velocity():
    c = cfg(dt=0.02, scheme="bdf2")
    v = np.array([0.05, -0.1])
    s0 = RigidState((0.5, 0.6), 0.1, v)
    s1 = RigidState(s0.center + c.dt * v, 0.1, v)
    hist = [s0, s1]
    for _ in range(5):
        s_new = advance_geometry(c, hist, v, scheme="bdf2")
        assert s_new.center - hist[-1].center == pytest.approx(c.dt * v,
                                                               abs=1e-14)
        hist = [hist[-1], s_new]


def test_advance_geometry_abort_outside():
    c = cfg(dt=0.02)
    s0 = RigidState((0.5, 0.11), 0.1, (0, 0))
    with pytest.raises(GeometryError, match="leaves"):
        advance_geometry(c, [s0], (0.0, -2.0))


def test_aitken_scalar_fixed_point():
    # x <- 0.5 x + 1 from x = 0 must reach 1e-8 relative in <= 3 iterations
    def f(x):
        return 0.5 * x + 1.0

    x = np.array([0.0, 0.0])
    omega, r_prev = 1.0, None
    for it in range(1, 10):
        r = np.array([f(x[0]) - x[0], 0.0])
        if r_prev is not None:
            omega = aitken_update(r_prev, r, omega)
        x_new = x + omega * r
        if np.linalg.norm(x_new - x) < 1e-8 * max(np.linalg.norm(x_new), 1e-12):
            break
        r_prev = r
        x = x_new
    assert it <= 3
    assert x_new[0] == pytest.approx(2.0)


def test_aitken_guards():
    # stagnating residual keeps the previous factor
    r = np.array([1e-3, 0.0])
    assert aitken_update(r, r, 0.7) == pytest.approx(0.7)
    # the factor is clamped
    assert 0.05 <= aitken_update(np.array([1.0, 0]), np.array([0.999, 0]),
                                 2.0) <= 2.0


def test_compute_force_hand_values(mesh_h005):
    dec = classify(mesh_h005, RigidState((0.5, 0.8), 0.1, (0, 0)), 0.0)
    L = build_multiplier_space(mesh_h005, dec, 1)
    rules = build_cut_rules(mesh_h005, dec, 4)
    lam = FEFunction(L, np.tile([0.0, 2.0], (L.n_scalar, 1)))
    F = compute_force(lam, dec, rules)
    assert F[0] == pytest.approx(0.0, abs=1e-12)
    assert F[1] == pytest.approx(0.4 * np.pi, rel=2e-2)
    zero = FEFunction.zero(L)
    assert compute_force(zero, dec, rules) == pytest.approx([0.0, 0.0])


def test_compute_force_antisymmetric_cancellation():
    # odd-in-x multiplier on a mirror-symmetric mesh: reflection flips the
    # diagonal direction, so even cell counts give the symmetric pattern
    mesh = build_structured_mesh(0.1)
    dec = classify(mesh, RigidState((0.5, 0.63), 0.1, (0, 0)), 0.0)
    L = build_multiplier_space(mesh, dec, 1)
    rules = build_cut_rules(mesh, dec, 4)
    lam = FEFunction.interpolate(L, lambda x: (x[0] - 0.5, 0.0))
    F = compute_force(lam, dec, rules)
    assert abs(F[0]) < 1e-10


def test_zero_data_gives_zero_records(mesh_h01):
    c = cfg(dt=0.02, t_end=0.1, gravity=(0.0, 0.0))
    recs = run_simulation(mesh_h01, c)
    for r in recs[1:]:
        assert r.state.xi == pytest.approx([0.0, 0.0], abs=1e-14)
        assert r.force == pytest.approx([0.0, 0.0], abs=1e-12)
        assert r.aitken_iterations == 1
        assert r.state.center == pytest.approx([0.5, 0.8])


def test_first_step_from_rest(mesh_h01):
    c = cfg(dt=0.02)
    recs = [initial_record(mesh_h01, c)]
    rec = step(c, recs)
    assert rec.state.xi[1] < 0.0
    assert abs(rec.state.xi[1]) <= c.dt * (1.0 + np.linalg.norm(rec.force))


def test_iteration_count_on_reference_setup(mesh_h005):
    c = cfg(dt=1.0 / 100.0)
    recs = [initial_record(mesh_h005, c)]
    for _ in range(10):
        recs.append(step(c, recs))
    iters = [r.aitken_iterations for r in recs[1:]]
    assert max(iters) <= 5


def test_step_system_dense_oracle():
    # entrywise agreement with a dense block reconstruction from the
    # public form operations
    from cutfem2d.forms import assemble_mass, assemble_stiffness, \
        assemble_ghost_penalty, assemble_coupling_b, assemble_multiplier_stab
    from cutfem2d.stepper import StepSystem

    mesh = build_structured_mesh(0.25)
    c = cfg(dt=0.01)
    recs = [initial_record(mesh, c)]
    xi_g = np.array([0.0, -0.01])
    A, rhs = assemble_step_system(c, recs, xi_g)

    states = [recs[-1].state]
    trial = advance_geometry(c, states, xi_g)
    delta = strip_width(c, states[-1].xi)
    sysm = StepSystem(c, mesh, trial, delta, "bdf1", [recs[-1].u])
    V, L, dec, rules = sysm.V, sysm.Lm, sysm.decomp, sysm.rules
    M = assemble_mass(V, dec, rules).toarray()
    Ak = assemble_stiffness(V, dec, rules).toarray()
    G = assemble_ghost_penalty(V, dec, mesh).toarray()
    B = assemble_coupling_b(V, L, dec, rules).toarray()
    J = assemble_multiplier_stab(L, dec).toarray()
    ggp = gamma_gp(c, sysm.K)
    top = M / c.dt + Ak + ggp * G
    dense = np.block([[top, B], [B.T, -c.gamma_lambda * J]])
    assert np.abs(A.toarray() - dense).max() < 1e-13
    # zero previous solution, rhs datum only in the multiplier block
    nv = 2 * V.n_scalar
    assert np.abs(rhs[:nv]).max() == 0.0


def test_constant_state_satisfies_system():
    # u_prev = c on its active set, datum c, negligible motion: u = c and
    # lambda = 0 solve the unconstrained system
    mesh = build_structured_mesh(0.1)
    c = cfg(dt=1e-6)
    const = np.array([0.3, -0.2])
    state0 = RigidState((0.47, 0.63), 0.1, const)
    dec0 = classify(mesh, state0, strip_width(c, const))
    V0 = build_velocity_space(mesh, dec0, 2)
    u0 = FEFunction(V0, np.tile(const, (V0.n_scalar, 1)))
    rec0 = StepRecord(0, 0.0, state0, u0, None, np.zeros(2), 0, 0.0, 0.0,
                      0.0, 1, dec0.n_active, len(dec0.cut_elements),
                      len(dec0.strip_elements_pm))
    A, rhs = assemble_step_system(c, [rec0], const)
    # sub-nanometre motion leaves the active set unchanged
    n_lam = A.shape[0] - 2 * V0.n_scalar
    assert n_lam > 0
    z = np.concatenate([np.tile(const, V0.n_scalar), np.zeros(n_lam)])
    resid = A @ z - rhs
    scale = np.abs(rhs).max()
    assert np.abs(resid).max() / scale < 1e-10


def test_energy_identity_and_sensitivity(mesh_h01):
    c = cfg(dt=0.02)
    recs = [initial_record(mesh_h01, c)]
    for _ in range(3):
        recs.append(step(c, recs, keep_system=True))
    rec = recs[-1]
    assert rec.energy_residual <= 1e-9 * rec.energy_scale
    # a 1e-3 perturbation of u must be detected well above the tolerance
    u_pert = FEFunction(rec.u.dofmap, rec.u.coeffs + 1e-3)
    res, scale = energy_identity_residual(
        rec.system, u_pert, rec.lam, rec.state.xi, recs[-2].state.xi, c)
    assert res > 1e-7 * scale


def test_gravity_monotonicity(mesh_h01):
    # stronger gravity means faster fall at every early step
    histories = []
    for gy in (-1.0, -1.5, -2.0):
        c = cfg(dt=0.02, t_end=0.1, gravity=(0.0, gy))
        recs = run_simulation(mesh_h01, c)
        histories.append([r.state.xi[1] for r in recs[1:]])
    for step_i in range(len(histories[0])):
        assert histories[0][step_i] > histories[1][step_i] > histories[2][step_i]


def test_energy_boundedness(mesh_h01):
    c = cfg(dt=0.02, t_end=0.5)
    recs = run_simulation(mesh_h01, c)
    for rec in recs[1:]:
        sysm = rec.system
        energy = float(np.linalg.norm(rec.state.xi) ** 2)
        if rec.u is not None and sysm is not None:
            energy += sum(rec.u.coeffs[:, k] @ (sysm.M @ rec.u.coeffs[:, k])
                          for k in range(2))
        bound_c = 10.0
        g2 = float(np.asarray(c.gravity) @ np.asarray(c.gravity))
        assert energy <= np.exp(bound_c * rec.t) * g2 * rec.t


def test_bdf2_close_to_bdf1(mesh_h01):
    c1 = cfg(dt=0.02, t_end=0.3, scheme="bdf1")
    c2 = cfg(dt=0.02, t_end=0.3, scheme="bdf2")
    r1 = run_simulation(mesh_h01, c1)
    r2 = run_simulation(mesh_h01, c2)
    assert r1[-1].state.xi[1] == pytest.approx(r2[-1].state.xi[1], abs=5e-3)
    assert np.isnan(r2[-1].energy_residual)


def test_lagrange_vs_nitsche_coarse(mesh_h01):
    cl = cfg(dt=0.02, t_end=0.3, bc_mode="lagrange")
    cn = cfg(dt=0.02, t_end=0.3, bc_mode="nitsche")
    rl = run_simulation(mesh_h01, cl)
    rn = run_simulation(mesh_h01, cn)
    assert rl[-1].state.xi[1] == pytest.approx(rn[-1].state.xi[1], abs=8e-3)
    assert rl[-1].state.center[1] == pytest.approx(rn[-1].state.center[1],
                                                   abs=4e-3)


def test_trajectory_determinism(mesh_h01):
    c = cfg(dt=0.02, t_end=0.1)
    rows1 = [trajectory_row(r) for r in run_simulation(mesh_h01, c)]
    rows2 = [trajectory_row(r) for r in run_simulation(mesh_h01, c)]
    assert rows1 == rows2
