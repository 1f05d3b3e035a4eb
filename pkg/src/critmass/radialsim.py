"""Radial dynamics through the partial-mass formulation.

The cell density u(r, t) is evolved via its scaled partial mass
mhat(r) = (1/2pi) * mass inside radius r, which turns the nonlocal system
into the local 1D equation

    mhat_t = mhat_rr - mhat_r/r + mhat mhat_r / r            (physical)
    mhat_tau = mhat_zz - mhat_z/z + z mhat_z + mhat mhat_z/z (self-similar)

with mhat(0) = 0 and mhat(R) = M0/2pi.  The self-similar frame uses
z = x/R(t), tau = log R(t), R = sqrt(1+2t), w = R^2 u; partial mass is
frame-invariant, mhat_w(z) = mhat_u(R z).

As printed, the source equation for the raw partial mass m is only
consistent with its own boundary value 8pi after dividing by 2pi; the
normalized variable mhat = m/2pi satisfies the equation above verbatim,
which is the convention used throughout.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import (
    GridMismatch,
    InsufficientSamples,
    LinearSolveFailure,
    MassTargetUnreachable,
    MonotonicityLoss,
    NegativeDensity,
)
from .grid import RadialGrid, make_grid
from .profiles import EIGHT_PI, Q_ground, mass_to_mu, solve_stationary_profile
from .stepping import newton_step

PHYSICAL = "physical"
SELF_SIMILAR = "self_similar"

_MONOTONE_TOL = 1e-9


@dataclass
class PartialMassState:
    frame: str
    time: float
    grid: RadialGrid
    mhat: np.ndarray
    total_mass_hat: float

    def validate(self, tol: float = 1e-8) -> None:
        m = self.mhat
        if m[0] != 0.0:
            raise ValueError("mhat(0) must be 0")
        if np.any(np.diff(m) < -_MONOTONE_TOL * max(1.0, self.total_mass_hat)):
            raise MonotonicityLoss("partial mass is decreasing somewhere")
        if abs(m[-1] - self.total_mass_hat) > tol * max(1.0, self.total_mass_hat):
            raise ValueError("boundary value does not match the total mass")
        if np.any(m > self.total_mass_hat * (1.0 + 1e-9) + tol):
            raise ValueError("partial mass exceeds the total mass")

    def copy(self) -> "PartialMassState":
        return PartialMassState(self.frame, self.time, self.grid,
                                self.mhat.copy(), self.total_mass_hat)

    @property
    def mass(self) -> float:
        return 2.0 * np.pi * self.total_mass_hat

    def second_moment(self) -> float:
        r = self.grid.nodes
        return 4.0 * np.pi * self.grid.integrate((self.total_mass_hat - self.mhat) * r)

    def peak_density(self) -> float:
        """u(0) from the one-sided fit mhat = a r^2 + b r^4 at the origin."""
        r, m = self.grid.nodes, self.mhat
        den = r[1] ** 2 * r[2] ** 4 - r[2] ** 2 * r[1] ** 4
        a = (m[1] * r[2] ** 4 - m[2] * r[1] ** 4) / den
        return 2.0 * a


@dataclass
class Diagnostics:
    frame: str
    times: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)
    free_energy: list = field(default_factory=list)
    free_energy_physical: list = field(default_factory=list)
    peak: list = field(default_factory=list)
    mu_proxy: list = field(default_factory=list)

    def record(self, state: PartialMassState) -> None:
        self.times.append(state.time)
        self.mass.append(state.mass)
        self.second_moment.append(state.second_moment())
        f = free_energy(state)
        self.free_energy.append(f)
        self.free_energy_physical.append(physical_free_energy(state, f))
        pk = state.peak_density()
        self.peak.append(pk)
        self.mu_proxy.append(8.0 / pk if state.frame == SELF_SIMILAR else np.nan)

    def as_columns(self) -> dict:
        return {
            "time": np.asarray(self.times),
            "mass": np.asarray(self.mass),
            "second_moment": np.asarray(self.second_moment),
            "free_energy": np.asarray(self.free_energy),
            "free_energy_physical": np.asarray(self.free_energy_physical),
            "peak": np.asarray(self.peak),
            "mu_proxy": np.asarray(self.mu_proxy),
        }


@dataclass
class SimConfig:
    frame: str = PHYSICAL
    preset: str = "subcritical_scaled"
    params: dict = field(default_factory=dict)
    grid_rmax: float | None = None
    grid_dr_min: float | None = None
    grid_h_rel: float = 5e-3
    grid_dr_cap: float = 0.25
    dt_init: float = 1e-6
    dt_max: float = 2e-3
    dt_safety: float = 1.2
    dt_floor: float = 1e-14
    t_final: float = 1.0
    peak_threshold: float = 1e6
    mu_proxy_min: float = 0.0
    output_dt: float = 0.05
    newton_tol: float = 1e-11
    snapshots: bool = True

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


# -- initial data ------------------------------------------------------------


def _gaussian_mhat(r, total_mass, s=1.0):
    return (total_mass / (2.0 * np.pi)) * (1.0 - np.exp(-r * r / (2.0 * s * s)))


def init_state(preset: str, params: dict, grid: RadialGrid,
               frame: str = PHYSICAL) -> PartialMassState:
    """Build a PartialMassState for one of the presets.

    critical_theorem(mu0): u0 = (K/mu0) Q(x/sqrt(mu0)) e^{-x^2/2} with the
    amplitude K root-solved so the total mass is exactly 8pi.
    """
    r = grid.nodes
    if preset == "critical_theorem":
        mu0 = float(params.get("mu0", 1e-2))
        y = r / np.sqrt(mu0)
        samples = Q_ground(y) * np.exp(-0.5 * r * r) * r
        cum = grid.cumulative(samples)
        base = cum[-1] / mu0 * (1.0 / mu0) * mu0 * mu0  # = cum[-1]/mu0*... kept explicit below
        # mass(K) = 2pi * K/mu0 * cum(R); root-solve K so that mass = 8pi
        def mass_defect(k):
            return 2.0 * np.pi * k / mu0 * cum[-1] - EIGHT_PI
        lo, hi = 1e-6, 1e6
        if mass_defect(lo) * mass_defect(hi) > 0:
            raise MassTargetUnreachable("critical preset amplitude failed to bracket")
        K = brentq(mass_defect, lo, hi, xtol=1e-15, rtol=8.9e-16)
        mhat = (K / mu0) * cum
        total = mhat[-1]
        mhat = np.minimum(mhat, total)
    elif preset in ("subcritical_scaled", "supercritical"):
        mass = float(params.get("mass", 4.0 * np.pi))
        if "mass_factor" in params:
            mass = float(params["mass_factor"]) * EIGHT_PI
        s = float(params.get("sigma", 1.0))
        mhat = _gaussian_mhat(r, mass, s)
        total = mass / (2.0 * np.pi)
        mhat[-1] = total
    elif preset == "stationary_selfsimilar":
        mass = float(params.get("mass", 7.0))
        mu = mass_to_mu(mass)
        prof = solve_stationary_profile(mu, tol=1e-7)
        _, dphi, _, _, _, _ = prof.evaluate(r / np.sqrt(mu))
        mhat = -(r / np.sqrt(mu)) * dphi
        mhat[0] = 0.0
        total = mass / (2.0 * np.pi)
        mhat = np.minimum(mhat, total)
        mhat[-1] = total
    elif preset == "custom":
        u0 = np.asarray(params["u0"], dtype=float)
        if len(u0) != len(r):
            raise ValueError("custom u0 must be sampled on the grid nodes")
        mhat = grid.cumulative(u0 * r)
        total = mhat[-1]
    else:
        raise ValueError(f"unknown preset {preset!r}")
    state = PartialMassState(frame, 0.0, grid, mhat, float(total))
    state.validate()
    return state


# -- stepping ----------------------------------------------------------------


def _step(state: PartialMassState, dt: float, selfsim: bool,
          tol: float) -> PartialMassState:
    m_new, _its, ok = newton_step(state.mhat, state.grid.nodes, dt,
                                  state.total_mass_hat, selfsim, tol=tol)
    if not ok:
        raise LinearSolveFailure(f"Newton stalled at dt={dt:.3e}")
    if not np.all(np.isfinite(m_new)):
        raise LinearSolveFailure("non-finite partial mass after step")
    if np.any(np.diff(m_new) < -_MONOTONE_TOL * max(1.0, state.total_mass_hat)):
        raise MonotonicityLoss(f"monotonicity lost at dt={dt:.3e}")
    return PartialMassState(state.frame, state.time + dt, state.grid,
                            m_new, state.total_mass_hat)


def step_physical(state: PartialMassState, dt: float,
                  tol: float = 1e-11) -> PartialMassState:
    if state.frame != PHYSICAL:
        raise ValueError("state is not in the physical frame")
    return _step(state, dt, False, tol)


def step_selfsimilar(state: PartialMassState, dt: float,
                     tol: float = 1e-11) -> PartialMassState:
    if state.frame != SELF_SIMILAR:
        raise ValueError("state is not in the self-similar frame")
    return _step(state, dt, True, tol)


def reconstruct_density(state: PartialMassState, tol: float = 1e-7) -> np.ndarray:
    """u = mhat_r / r, spline differentiation, one-sided value at r = 0.

    In the outer region the derivative is taken in log-deficit form,
    u = -d (log d)'/r with d = Mhat - mhat: log d is close to quadratic
    across the Gaussian cutoff, so the spline stays accurate where direct
    differentiation of mhat ~ Mhat - (exponentially small) loses digits.
    """
    from scipy.interpolate import CubicSpline

    r, m = state.grid.nodes, state.mhat
    total = state.total_mass_hat
    u = np.empty_like(m)
    dm = CubicSpline(r, m).derivative()(r)
    u[1:] = dm[1:] / r[1:]
    u[0] = state.peak_density()

    d = total - m
    floor = 64.0 * np.finfo(float).eps * total
    tail = (d < 0.25 * total) & (d > floor)
    if np.count_nonzero(tail) > 8:
        idx = np.nonzero(tail)[0]
        logd = np.log(d[idx])
        dlogd = CubicSpline(r[idx], logd).derivative()(r[idx])
        u[idx] = -d[idx] * dlogd / r[idx]
        beyond = np.nonzero(d <= floor)[0]
        u[beyond] = 0.0
    if np.any(u < -tol * max(1.0, np.max(u))):
        raise NegativeDensity("reconstructed density is negative beyond tolerance")
    return np.maximum(u, 0.0)


# -- functionals -------------------------------------------------------------


def potential_from_mhat(state: PartialMassState) -> np.ndarray:
    """phi(r) = -[log r * mhat(r) + int_r^R log(tau) mhat'(tau) dtau].

    This is the radial reduction of the logarithmic convolution; for the
    ground state it reproduces phi_Q with phi(0) = 0.
    """
    r, m = state.grid.nodes, state.mhat
    u = reconstruct_density(state)
    g = np.zeros_like(r)
    g[1:] = np.log(r[1:]) * u[1:] * r[1:]
    cum = state.grid.cumulative(g)
    outer = cum[-1] - cum
    phi = -outer
    phi[1:] -= np.log(r[1:]) * m[1:]
    return phi


def free_energy(state: PartialMassState) -> float:
    """F = int u log u - (1/2) int u phi_u in the state's own frame."""
    r = state.grid.nodes
    u = reconstruct_density(state)
    phi = potential_from_mhat(state)
    ulogu = np.where(u > 0, u * np.log(np.where(u > 0, u, 1.0)), 0.0)
    ent = 2.0 * np.pi * state.grid.integrate(ulogu * r)
    pot = 2.0 * np.pi * state.grid.integrate(u * phi * r)
    return ent - 0.5 * pot


def physical_free_energy(state: PartialMassState, frame_value: float | None = None) -> float:
    """Free energy of the physical-frame density at this state's time.

    For a self-similar state w at tau, F(u) = F(w) + tau (M^2/4pi - 2M);
    the correction vanishes exactly at the critical mass.
    """
    f = free_energy(state) if frame_value is None else frame_value
    if state.frame == PHYSICAL:
        return f
    mass = state.mass
    return f + state.time * (mass * mass / (4.0 * np.pi) - 2.0 * mass)


# -- driver ------------------------------------------------------------------


@dataclass
class RunResult:
    config: SimConfig
    state: PartialMassState
    diagnostics: Diagnostics
    snapshots: list
    stop_reason: str
    steps: int
    wall_time: float
    mass_drift: float


def default_grid_for(config: SimConfig) -> RadialGrid:
    if config.frame == SELF_SIMILAR:
        rmax = config.grid_rmax or 14.0
        dr_min = config.grid_dr_min
        if dr_min is None:
            # resolve the shrinking core down to the stopping value of mu
            target = max(config.mu_proxy_min, 1e-12)
            dr_min = float(np.clip(np.sqrt(target) / 25.0, 2e-7, 1e-4))
    else:
        rmax = config.grid_rmax or 40.0
        dr_min = config.grid_dr_min
        if dr_min is None:
            dr_min = float(np.clip(np.sqrt(2.0 / config.peak_threshold) / 30.0,
                                   1e-6, 1e-4))
    return make_grid(rmax, dr_min=dr_min, h_rel=config.grid_h_rel,
                     dr_cap=config.grid_dr_cap)


def run(config: SimConfig, grid: RadialGrid | None = None,
        state: PartialMassState | None = None):
    """Advance with adaptive dt; halve on failure, grow by the safety factor."""
    t0 = _time.perf_counter()
    if grid is None:
        grid = state.grid if state is not None else default_grid_for(config)
    if state is None:
        state = init_state(config.preset, config.params, grid, config.frame)
    selfsim = config.frame == SELF_SIMILAR
    diag = Diagnostics(frame=config.frame)
    snapshots = []
    diag.record(state)
    if config.snapshots:
        snapshots.append(state.copy())
    total0 = state.mhat[-1]
    dt_grow = config.dt_init   # persistent target, not fed back from clipping
    next_out = config.output_dt
    steps = 0
    stop = "t_final"
    while state.time < config.t_final - 1e-13:
        dt = min(dt_grow, max(next_out - state.time, 1e-10),
                 config.t_final - state.time)
        try:
            new_state = _step(state, dt, selfsim, config.newton_tol)
        except (MonotonicityLoss, LinearSolveFailure):
            dt_grow *= 0.5
            if dt_grow < config.dt_floor:
                raise
            continue
        state = new_state
        steps += 1
        dt_grow = min(config.dt_max, dt_grow * config.dt_safety)
        if state.time >= next_out - 1e-12:
            diag.record(state)
            if config.snapshots:
                snapshots.append(state.copy())
            next_out += config.output_dt
            pk = diag.peak[-1]
            if pk >= config.peak_threshold:
                stop = "peak_threshold"
                break
            if config.mu_proxy_min > 0 and state.frame == SELF_SIMILAR \
                    and 8.0 / pk <= config.mu_proxy_min:
                stop = "mu_proxy_min"
                break
    mass_drift = abs(state.mhat[-1] - total0) / total0
    return RunResult(config, state, diag, snapshots, stop, steps,
                     _time.perf_counter() - t0, mass_drift)


# -- verification helpers ----------------------------------------------------


def verify_virial(diag: Diagnostics, total_mass: float) -> dict:
    """Least-squares slope of I(t) against the virial rate 4M - M^2/2pi."""
    if diag.frame != PHYSICAL:
        raise ValueError("virial slope is a physical-frame diagnostic")
    t = np.asarray(diag.times)
    i2 = np.asarray(diag.second_moment)
    if len(t) < 10:
        raise InsufficientSamples("need at least 10 output times")
    slope = np.polyfit(t, i2, 1)[0]
    expected = 4.0 * total_mass - total_mass ** 2 / (2.0 * np.pi)
    scale = max(abs(expected), 4.0 * total_mass)
    return {
        "slope": float(slope),
        "expected": float(expected),
        "rel_error": float(abs(slope - expected) / scale),
    }


def check_comparison(runs_a: list, runs_b: list, tol: float = 1e-8) -> dict:
    """Persistence of the initial partial-mass ordering mhat_B <= mhat_A."""
    if len(runs_a) != len(runs_b):
        raise GridMismatch("runs have different output counts")
    worst = np.inf
    for sa, sb in zip(runs_a, runs_b):
        if sa.frame != sb.frame or not np.array_equal(sa.grid.nodes, sb.grid.nodes):
            raise GridMismatch("comparison requires shared grid and frame")
        worst = min(worst, float(np.min(sa.mhat - sb.mhat)))
    return {"min_gap": worst, "ordered": bool(worst >= -tol)}


def map_physical_to_selfsimilar(state: PartialMassState,
                                target_grid: RadialGrid) -> PartialMassState:
    """Change of variables z = x/R(t), tau = log R(t); partial mass is invariant."""
    if state.frame != PHYSICAL:
        raise ValueError("expected a physical-frame state")
    R = np.sqrt(1.0 + 2.0 * state.time)
    tau = np.log(R)
    zr = target_grid.nodes * R
    m = np.interp(zr, state.grid.nodes, state.mhat)
    m[0] = 0.0
    return PartialMassState(SELF_SIMILAR, tau, target_grid, m, state.total_mass_hat)
