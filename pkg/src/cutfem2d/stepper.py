"""Eulerian time stepping for the coupled heat/rigid-disk system.

Each step runs a partitioned fixed-point iteration between the fluid solve
and the interface-velocity ODE with Aitken relaxation.  Because the PDE
block is linear and the boundary datum enters the right-hand side only, the
exact coupled interface velocity for a *frozen* geometry is computed from
three extra triangular solves on the same factorisation (the response to a
unit datum); the outer iteration then only has to converge the geometry.
The accepted step therefore satisfies the monolithic discrete system to
solver precision, which the per-step energy-identity audit relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import forms
from .errors import CouplingError, GeometryError, TransferError
from .forms import StabilizationParams, build_cut_rules
from .geometry import ActiveDecomposition, RigidState, classify, strip_crossing_bound
from .mesh import BackgroundMesh
from .solver import FactoredSystem, factor
from .spaces import FEFunction, build_multiplier_space, \
    build_velocity_space, transfer

GRAVITY_DEFAULT = (0.0, -1.0)


@dataclass
class SchemeConfig:
    k: int = 2
    dt: float = 1.0 / 50.0
    t_end: float = 1.0
    scheme: str = "bdf1"            # "bdf1" | "bdf2"
    bc_mode: str = "lagrange"       # "lagrange" | "nitsche"
    gravity: tuple = GRAVITY_DEFAULT
    c_delta_h: float | None = None  # defaults: 2 (bdf1), 4 (bdf2)
    gamma_s: float = 0.1
    gamma_lambda: float = 0.01
    nitsche_penalty_coefficient: float = 40.0
    aitken_tol: float = 1e-8
    aitken_max_iters: int = 25
    center0: tuple = (0.5, 0.8)
    radius: float = 0.1
    xi0: tuple = (0.0, 0.0)
    predictor: str = "extrapolate"  # "extrapolate" | "previous"

    def __post_init__(self):
        if self.scheme not in ("bdf1", "bdf2"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.bc_mode not in ("lagrange", "nitsche"):
            raise ValueError(f"unknown bc_mode {self.bc_mode!r}")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.c_delta_h is None:
            self.c_delta_h = 2.0 if self.scheme == "bdf1" else 4.0
        if self.c_delta_h <= 1.0:
            raise ValueError("c_delta_h must exceed 1")

    def stab_params(self) -> StabilizationParams:
        return StabilizationParams(self.gamma_s, self.gamma_lambda,
                                   self.nitsche_penalty_coefficient)


@dataclass
class StepRecord:
    n: int
    t: float
    state: RigidState
    u: FEFunction | None
    lam: FEFunction | None
    force: np.ndarray
    aitken_iterations: int
    energy_residual: float          # |lhs - rhs| of the tested identity
    energy_scale: float             # magnitude of its largest term
    delta_h: float
    K: int
    n_active: int
    n_cut: int
    n_strip: int
    system: "StepSystem | None" = field(default=None, repr=False)

    @property
    def energy_residual_rel(self) -> float:
        if self.energy_scale == 0.0:
            return 0.0
        return self.energy_residual / self.energy_scale


def strip_width(config: SchemeConfig, xi) -> float:
    """delta_h = c * |xi| * dt with a quadrature-tolerance floor.

    The translating circle has max |xi . n| = |xi| over the interface, so
    the explicit speed bound is just the magnitude of the previous velocity.
    """
    speed = float(np.linalg.norm(xi))
    if speed == 0.0:
        return 0.0
    return max(config.c_delta_h * speed * config.dt, 1e-12)


def gamma_gp(config: SchemeConfig, K: int) -> float:
    if K < 1:
        raise ValueError("K must be >= 1")
    return config.gamma_s * K


def ode_update(config: SchemeConfig, force, xi_history, scheme=None) -> np.ndarray:
    """One BDF update of the interface-velocity ODE."""
    g = np.asarray(config.gravity, float)
    F = np.asarray(force, float)
    scheme = scheme or config.scheme
    if scheme == "bdf1" or len(xi_history) < 2:
        return xi_history[-1] + config.dt * (g + F)
    return (4.0 * xi_history[-1] - xi_history[-2]
            + 2.0 * config.dt * (g + F)) / 3.0


def advance_geometry(config: SchemeConfig, state_history, xi_new,
                     scheme=None) -> RigidState:
    """Advance the disk centre with the scheme-consistent recurrence."""
    xi_new = np.asarray(xi_new, float)
    scheme = scheme or config.scheme
    if scheme == "bdf1" or len(state_history) < 2:
        c = state_history[-1].center + config.dt * xi_new
    else:
        c = (4.0 * state_history[-1].center - state_history[-2].center
             + 2.0 * config.dt * xi_new) / 3.0
    r = state_history[-1].radius
    margin = min(c[0], 1.0 - c[0], c[1], 1.0 - c[1]) - r
    if margin <= 0.0:
        raise GeometryError(
            f"disk leaves the domain: centre {c}, clearance {margin:.3e}")
    return RigidState(c, r, xi_new)


def aitken_update(r_prev, r_curr, omega_prev: float) -> float:
    """Dynamic relaxation factor, clamped to [0.05, 2.0]."""
    dr = np.asarray(r_curr, float) - np.asarray(r_prev, float)
    denom = float(dr @ dr)
    if denom < 1e-30:
        return omega_prev
    omega = -omega_prev * float(np.asarray(r_prev, float) @ dr) / denom
    return float(np.clip(omega, 0.05, 2.0))


def compute_force(lam: FEFunction, decomp: ActiveDecomposition,
                  cut_rules) -> np.ndarray:
    """F = componentwise integral of the multiplier over the interface."""
    w = forms.assemble_multiplier_load_scalar(lam.dofmap, decomp, cut_rules)
    return w @ lam.coeffs


class StepSystem:
    """Assembled, factored fluid system for one trial geometry.

    Components decouple: one scalar factorisation serves both, and the
    solution is affine in the scalar boundary datum of each component.
    """

    def __init__(self, config: SchemeConfig, mesh: BackgroundMesh,
                 state: RigidState, delta_h: float, scheme: str,
                 prev_funcs: list[FEFunction]):
        self.config = config
        self.mesh = mesh
        self.state = state
        self.scheme = scheme
        self.decomp = classify(mesh, state, delta_h)
        self.K = strip_crossing_bound(self.decomp, mesh)
        self.gamma_gp = gamma_gp(config, self.K)
        self.params = config.stab_params()

        self.V = build_velocity_space(mesh, self.decomp, config.k)
        self.rules = build_cut_rules(mesh, self.decomp, 2 * config.k)
        self.u_prev = transfer(prev_funcs[-1], self.V)
        self.u_prev2 = None
        if scheme == "bdf2":
            self.u_prev2 = transfer(prev_funcs[-2], self.V)

        if config.bc_mode == "lagrange":
            self.Lm = build_multiplier_space(mesh, self.decomp, config.k - 1)
        else:
            self.Lm = None
        self.cut_data = forms.build_cut_data(self.V, self.Lm, self.decomp,
                                             self.rules)

        self.M = forms.assemble_mass_scalar(self.V, self.decomp, self.rules,
                                            self.cut_data)
        self.A = forms.assemble_stiffness_scalar(self.V, self.decomp,
                                                 self.rules, self.cut_data)
        self.G = forms.assemble_ghost_penalty_scalar(self.V, self.decomp, mesh)

        dt = config.dt
        ct = 1.0 if scheme == "bdf1" else 1.5
        K_s = (ct / dt) * self.M + self.A + self.gamma_gp * self.G
        if scheme == "bdf1":
            rhs_u = self.M @ (self.u_prev / dt)
        else:
            rhs_u = self.M @ ((4.0 * self.u_prev - self.u_prev2) / (2.0 * dt))

        self.free = np.flatnonzero(self.V.free)
        nf = len(self.free)

        if config.bc_mode == "lagrange":
            self.B = forms.assemble_coupling_b_scalar(
                self.V, self.Lm, self.decomp, self.rules, self.cut_data)
            self.J = forms.assemble_multiplier_stab_scalar(self.Lm, self.decomp)
            self.wload = forms.assemble_multiplier_load_scalar(
                self.Lm, self.decomp, self.rules, self.cut_data)
            nl = self.Lm.n_scalar
            Kff = K_s[np.ix_(self.free, self.free)]
            Bf = self.B[self.free]
            sys_mat = sp.bmat([[Kff, Bf],
                               [Bf.T, -config.gamma_lambda * self.J]],
                              format="csc")
            self.fact: FactoredSystem = factor(sys_mat)
            self.n_lam = nl
            # datum response: rhs [0; wload], identical for both components
            self.z_datum = self.fact.solve(
                np.concatenate([np.zeros(nf), self.wload]))
            self.z0 = [self.fact.solve(
                np.concatenate([rhs_u[self.free, c], np.zeros(nl)]))
                for c in range(2)]
        else:
            Nmat, nload = forms.assemble_nitsche_scalar(
                self.V, self.decomp, self.rules, self.params, self.cut_data)
            sys_mat = (K_s + Nmat)[np.ix_(self.free, self.free)].tocsc()
            self.fact = factor(sys_mat)
            self.n_lam = 0
            self.nload = nload
            self.z_datum = self.fact.solve(nload[self.free])
            self.z0 = [self.fact.solve(rhs_u[self.free, c]) for c in range(2)]

        # affine force: F_c(xi_c) = F0[c] + F1 * xi_c
        if config.bc_mode == "lagrange":
            self.F0 = np.array([self.wload @ self._lam_part(self.z0[c])
                                for c in range(2)])
            self.F1 = float(self.wload @ self._lam_part(self.z_datum))
        else:
            u00 = self._u_field(self.z0[0], self.z0[1], np.zeros(2))
            F00 = forms.nitsche_flux_force(self.V, self.decomp, self.rules,
                                           self.params, u00, np.zeros(2),
                                           self.cut_data)
            up = self._u_field(self.z0[0] + self.z_datum,
                               self.z0[1] + self.z_datum, np.zeros(2))
            Fp = forms.nitsche_flux_force(self.V, self.decomp, self.rules,
                                          self.params, up, np.ones(2),
                                          self.cut_data)
            self.F0 = F00
            self.F1 = float((Fp - F00)[0])

    def _lam_part(self, z):
        return z[len(self.free):]

    def _u_field(self, zx, zy, _xi) -> FEFunction:
        coeffs = np.zeros((self.V.n_scalar, 2))
        coeffs[self.free, 0] = zx[:len(self.free)]
        coeffs[self.free, 1] = zy[:len(self.free)]
        return FEFunction(self.V, coeffs)

    def force(self, xi_datum) -> np.ndarray:
        return self.F0 + self.F1 * np.asarray(xi_datum, float)

    def solution(self, xi_datum) -> tuple[FEFunction, FEFunction | None]:
        xi = np.asarray(xi_datum, float)
        zx = self.z0[0] + xi[0] * self.z_datum
        zy = self.z0[1] + xi[1] * self.z_datum
        u = self._u_field(zx, zy, xi)
        lam = None
        if self.Lm is not None:
            lcoef = np.column_stack([self._lam_part(zx), self._lam_part(zy)])
            lam = FEFunction(self.Lm, lcoef)
        return u, lam

def _coupled_fixed_point(system: StepSystem, config: SchemeConfig,
                         xi_history, scheme: str) -> np.ndarray:
    """xi solving xi = ode_update(F0 + F1 xi) componentwise."""
    b = config.dt if scheme == "bdf1" else 2.0 * config.dt / 3.0
    base = ode_update(config, system.F0, xi_history, scheme=scheme)
    slope = b * system.F1
    if abs(1.0 - slope) < 1e-10:
        raise CouplingError("coupling diverged: unit-slope interface map")
    return base / (1.0 - slope)


def assemble_step_system(config: SchemeConfig, history: list[StepRecord],
                         xi_guess) -> tuple[sp.csr_matrix, np.ndarray]:
    """Unconstrained vector block system of the trial step.

    Layout: interleaved velocity components over all active scalar DOFs,
    then interleaved multiplier components (Lagrange mode).  The outer-box
    Dirichlet rows are NOT eliminated here; the solve path restricts to the
    free DOFs.  Returned for verification and diagnostics.
    """
    from .forms import expand_vector

    scheme = config.scheme
    if scheme == "bdf2" and len(history) < 2:
        scheme = "bdf1"
    states = [r.state for r in history[-2:]]
    prev_funcs = [r.u for r in history[-2:]]
    delta_h = strip_width(config, states[-1].xi)
    trial_state = advance_geometry(config, states, xi_guess, scheme=scheme)
    sysm = StepSystem(config, history[-1].u.dofmap.mesh, trial_state, delta_h,
                      scheme, prev_funcs)
    dt = config.dt
    ct = 1.0 if scheme == "bdf1" else 1.5
    K_s = (ct / dt) * sysm.M + sysm.A + sysm.gamma_gp * sysm.G
    if scheme == "bdf1":
        rhs_u = sysm.M @ (sysm.u_prev / dt)
    else:
        rhs_u = sysm.M @ ((4.0 * sysm.u_prev - sysm.u_prev2) / (2.0 * dt))
    xi = np.asarray(xi_guess, float)
    if config.bc_mode == "lagrange":
        A = sp.bmat([[expand_vector(K_s), expand_vector(sysm.B)],
                     [expand_vector(sysm.B).T,
                      -config.gamma_lambda * expand_vector(sysm.J)]],
                    format="csr")
        rhs = np.concatenate([rhs_u.ravel(), np.outer(sysm.wload, xi).ravel()])
    else:
        Nmat, nload = forms.assemble_nitsche_scalar(
            sysm.V, sysm.decomp, sysm.rules, sysm.params, sysm.cut_data)
        A = expand_vector(K_s + Nmat)
        rhs = rhs_u.ravel() + np.outer(nload, xi).ravel()
    return A, rhs


def energy_identity_residual(system: StepSystem, u: FEFunction,
                             lam: FEFunction | None, xi, xi_prev,
                             config: SchemeConfig) -> tuple[float, float]:
    """|lhs - rhs| and term scale of the tested first-order energy identity."""
    if system.scheme != "bdf1" or lam is None:
        raise ValueError("energy identity is defined for BDF1 Lagrange steps")
    dt = config.dt
    uc, up = u.coeffs, system.u_prev
    du = uc - up
    g = np.asarray(config.gravity, float)
    xi = np.asarray(xi, float)
    xi_prev = np.asarray(xi_prev, float)

    def msq(M, a):
        return float(sum(a[:, c] @ (M @ a[:, c]) for c in range(2)))

    terms = [
        msq(system.M, uc),
        msq(system.M, du),
        -msq(system.M, up),
        float(xi @ xi),
        float((xi - xi_prev) @ (xi - xi_prev)),
        -float(xi_prev @ xi_prev),
        2.0 * dt * msq(system.A, uc),
        2.0 * dt * system.gamma_gp * msq(system.G, uc),
        2.0 * dt * config.gamma_lambda * msq(system.J, lam.coeffs),
        -2.0 * dt * float(g @ xi),
    ]
    residual = abs(sum(terms))
    scale = max(abs(t) for t in terms)
    return residual, scale


def initial_record(mesh: BackgroundMesh, config: SchemeConfig) -> StepRecord:
    """Rest state at t = 0 with an active set sized for the first motion."""
    state = RigidState(np.asarray(config.center0, float), config.radius,
                       np.asarray(config.xi0, float))
    g = float(np.linalg.norm(config.gravity))
    d0 = max(strip_width(config, state.xi),
             config.c_delta_h * config.dt ** 2 * g + 1e-12)
    decomp = classify(mesh, state, d0)
    V = build_velocity_space(mesh, decomp, config.k)
    u0 = FEFunction.zero(V)
    return StepRecord(0, 0.0, state, u0, None, np.zeros(2), 0, 0.0, 0.0,
                      d0, 1, decomp.n_active, len(decomp.cut_elements),
                      len(decomp.strip_elements_pm), None)


def step(config: SchemeConfig, history: list[StepRecord],
         keep_system: bool = False) -> StepRecord:
    """Advance one time step by the partitioned Aitken-relaxed iteration."""
    mesh = history[-1].u.dofmap.mesh
    n = history[-1].n + 1
    scheme = config.scheme
    if scheme == "bdf2" and len(history) < 2:
        scheme = "bdf1"   # start-up step

    states = [r.state for r in history[-2:]]
    xi_hist = [r.state.xi for r in history[-2:]]
    prev_funcs = [r.u for r in history[-2:]]
    if scheme == "bdf2" and (prev_funcs[0] is None or prev_funcs[1] is None):
        raise ValueError("BDF2 step requires two retained solution records")

    delta_h = strip_width(config, xi_hist[-1])
    if config.predictor == "extrapolate" and len(xi_hist) >= 2:
        xi_guess = 2.0 * xi_hist[-1] - xi_hist[-2]
    else:
        xi_guess = xi_hist[-1].copy()

    omega = 1.0
    r_prev = None
    system = None
    iterations = 0
    converged = False
    for _ in range(config.aitken_max_iters):
        trial = None
        for attempt in range(8):
            try:
                trial_state = advance_geometry(config, states, xi_guess,
                                               scheme=scheme)
                trial = StepSystem(config, mesh, trial_state, delta_h,
                                   scheme, prev_funcs)
                break
            except (TransferError, GeometryError):
                if attempt == 7:
                    raise
                # damp the trial guess toward the last accepted velocity
                xi_guess = 0.5 * (xi_guess + xi_hist[-1])
        system = trial
        iterations += 1

        xi_new = _coupled_fixed_point(system, config, xi_hist, scheme)
        r = xi_new - xi_guess
        if r_prev is not None:
            omega = aitken_update(r_prev, r, omega)
        xi_relaxed = xi_guess + omega * r
        update = float(np.linalg.norm(xi_relaxed - xi_guess))
        tol = config.aitken_tol * max(float(np.linalg.norm(xi_relaxed)), 1e-12)
        r_prev = r
        xi_guess = xi_relaxed
        if update <= tol:
            converged = True
            break
    if not converged:
        raise CouplingError(
            f"coupling diverged: no convergence in {config.aitken_max_iters} "
            f"iterations at step {n}")

    xi_n = _coupled_fixed_point(system, config, xi_hist, scheme)
    u, lam = system.solution(xi_n)
    if config.bc_mode == "lagrange":
        force = system.wload @ lam.coeffs
    else:
        force = forms.nitsche_flux_force(system.V, system.decomp, system.rules,
                                         system.params, u, xi_n,
                                         system.cut_data)

    # inclusion guard: current cut elements were active at the previous step
    prev_active = prev_funcs[-1].dofmap.elements
    cut_now = system.decomp.cut_elements
    if not np.all(np.isin(cut_now, prev_active)):
        raise TransferError("domain-inclusion guard failed: cut elements "
                            "outside the previous active set")

    if scheme == "bdf1" and config.bc_mode == "lagrange":
        e_res, e_scale = energy_identity_residual(
            system, u, lam, xi_n, xi_hist[-1], config)
    else:
        e_res, e_scale = math.nan, math.nan

    state_n = advance_geometry(config, states, xi_n, scheme=scheme)
    rec = StepRecord(
        n=n, t=n * config.dt, state=state_n, u=u, lam=lam,
        force=np.asarray(force, float), aitken_iterations=iterations,
        energy_residual=e_res, energy_scale=e_scale,
        delta_h=delta_h, K=system.K, n_active=system.decomp.n_active,
        n_cut=len(system.decomp.cut_elements),
        n_strip=len(system.decomp.strip_elements_pm),
        system=system if keep_system else None)
    return rec


def run_simulation(mesh: BackgroundMesh, config: SchemeConfig,
                   progress=None) -> list[StepRecord]:
    """Run until t_end; coefficient data is retained on the last two records."""
    records = [initial_record(mesh, config)]
    n_steps = int(round(config.t_end / config.dt))
    for m in range(1, n_steps + 1):
        rec = step(config, records)
        records.append(rec)
        if len(records) > 3:
            old = records[-4]
            old.u = None
            old.lam = None
            old.system = None
        if progress is not None:
            progress(rec)
    return records


TRAJECTORY_COLUMNS = ("step", "t", "Cx", "Cy", "xix", "xiy", "Fx", "Fy",
                      "iters", "energy_residual", "n_active", "K")


def trajectory_row(rec: StepRecord) -> tuple:
    return (rec.n, rec.t, rec.state.center[0], rec.state.center[1],
            rec.state.xi[0], rec.state.xi[1], rec.force[0], rec.force[1],
            rec.aitken_iterations, rec.energy_residual_rel, rec.n_active,
            rec.K)
