"""Immune-status-structured epidemic model with an environmental reservoir.

The population model couples a susceptible pool S(t), an infected density
I(t, omega) structured by immune status omega in [0, omega0], a recovered
pool V(t), and an environmental bacterial concentration B(t):

    S' = r - mu1*S - S*(beta_h*int P*I domega) - beta_e*S*B + rho*V
    I_t + (g(omega)*I)_omega = -mu2(omega)*I
    g(0)*I(t,0) = S*(beta_h*int P*I domega) + beta_e*S*B
    V' = g(omega0)*I(t,omega0) - (rho + mu3)*V
    B' = int xi*P*I domega - sigma*B

Infected hosts move rightward in status at speed g(omega) > 0 and recover
when they reach omega0. New infections enter at omega = 0 through the
nonlocal boundary condition, driven by direct (beta_h) and environmental
(beta_e) transmission.

This module provides the transport solver, a closed-form characteristics
oracle, the reproduction number and its spectral refinement, the endemic
equilibrium with residual checks, stability residuals of the endemic
linearization, and an equivalent renewal-equation formulation used for
cross-checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .coefficients import Coefficient
from .numerics import (
    BracketError,
    NumericsError,
    QuadratureSpec,
    RootBracket,
    find_root,
    quadrature,
)

__all__ = [
    "BetweenHostParams",
    "StructuredState",
    "EndemicEquilibrium",
    "EpidemicRun",
    "RenewalRun",
    "StatusClock",
    "TransportBlowupError",
    "build_clock",
    "survival_pi",
    "r0",
    "r0_terms",
    "dfe_char_G",
    "dfe_lambda_hat",
    "endemic_equilibrium",
    "endemic_residuals",
    "characteristics_eval",
    "simulate_epidemic",
    "renewal_kernel_A",
    "kernel_total_integral",
    "simulate_renewal",
    "endemic_char_residual",
    "endemic_spectrum_scan",
]

NEGATIVITY_ABORT = -1e-8
POLE_GUARD = 1e-8
CLOCK_NODES = 16384


class TransportBlowupError(NumericsError):
    """A simulation produced a density below the negativity tolerance."""


# ---------------------------------------------------------------------------
# parameters and states


@dataclass
class BetweenHostParams:
    """Rates and functional coefficients of the structured epidemic model.

    Scalar rates are positive except the transmission rates beta_h, beta_e
    and the immunity-loss rate rho, which may be zero. The functional
    coefficients are `Coefficient` instances over [0, omega0]: mu2 (extra
    removal of infecteds), xi (environmental shedding), P (infectiousness
    weight), and g (status growth speed, strictly positive). a_bar caps the
    age of environmental bacteria in the renewal formulation.
    """

    r: float
    mu1: float
    mu3: float
    beta_h: float
    beta_e: float
    rho: float
    sigma: float
    omega0: float
    mu2: Coefficient
    xi: Coefficient
    P: Coefficient
    g: Coefficient
    a_bar: float = 30.0

    def __post_init__(self):
        for name in ("r", "mu1", "mu3", "sigma", "omega0", "a_bar"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be positive and finite, got {value}")
        for name in ("beta_h", "beta_e", "rho"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be nonnegative and finite, got {value}")
        probe = np.linspace(0.0, self.omega0, 65)
        for name in ("mu2", "xi", "P", "g"):
            fn = getattr(self, name)
            if not isinstance(fn, Coefficient):
                raise TypeError(f"{name} must be a Coefficient, got {type(fn).__name__}")
            vals = fn(probe)
            if not np.all(np.isfinite(vals)):
                raise ValueError(f"{name}(omega) is not finite on [0, omega0]")
            if name == "g":
                if np.any(vals <= 0):
                    raise ValueError("g(omega) must be strictly positive on [0, omega0]")
            elif np.any(vals < 0):
                raise ValueError(f"{name}(omega) must be nonnegative on [0, omega0]")


@dataclass
class StructuredState:
    """One snapshot: susceptibles, infected density on a uniform status grid,
    recovered pool, and environmental concentration."""

    S: float
    I: np.ndarray
    V: float
    B: float

    def __post_init__(self):
        self.I = np.asarray(self.I, dtype=float)
        if self.I.ndim != 1 or self.I.size < 2:
            raise ValueError("I must be a 1-d density array with at least 2 nodes")
        for name in ("S", "V", "B"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be nonnegative and finite, got {value}")
        if not np.all(np.isfinite(self.I)) or np.any(self.I < 0):
            raise ValueError("I must be nonnegative and finite")

    def infected_mass(self, omega0: float) -> float:
        """Trapezoid mass of the infected density."""
        step = omega0 / (self.I.size - 1)
        return float(np.trapezoid(self.I, dx=step))


@dataclass(frozen=True)
class EndemicEquilibrium:
    """Stationary state with disease present; exists only above threshold."""

    S: float
    omega: np.ndarray
    I: np.ndarray
    V: float
    B: float
    I0: float
    reproduction_number: float


# ---------------------------------------------------------------------------
# the status clock: cumulative travel time and removal exposure


@dataclass(frozen=True)
class StatusClock:
    """Dense tables of G(omega) = int_0^omega 1/g and M(omega) = int_0^omega mu2/g.

    g > 0 makes G strictly increasing, so status <-> elapsed-time conversion
    is a monotone interpolation both ways. M is the accumulated removal
    exposure along the same path.
    """

    omega: np.ndarray
    elapsed: np.ndarray
    decay: np.ndarray

    @property
    def total_time(self) -> float:
        """Travel time from status 0 to omega0."""
        return float(self.elapsed[-1])

    def time_of(self, omega):
        return np.interp(omega, self.omega, self.elapsed)

    def status_at(self, theta):
        return np.interp(theta, self.elapsed, self.omega)

    def decay_at(self, omega):
        return np.interp(omega, self.omega, self.decay)


def build_clock(params: BetweenHostParams, n: int = CLOCK_NODES) -> StatusClock:
    """Tabulate the travel-time and removal-exposure integrals on [0, omega0].

    Cumulative trapezoid on n+1 uniform nodes; exact for constant ratios.
    """
    nodes = np.linspace(0.0, params.omega0, n + 1)
    g_vals = params.g(nodes)
    if np.any(g_vals <= 0):
        raise ValueError("g(omega) must be strictly positive on [0, omega0]")
    step = params.omega0 / n
    inv_g = 1.0 / g_vals
    ratio = params.mu2(nodes) * inv_g
    elapsed = np.concatenate([[0.0], np.cumsum(0.5 * (inv_g[1:] + inv_g[:-1]) * step)])
    decay = np.concatenate([[0.0], np.cumsum(0.5 * (ratio[1:] + ratio[:-1]) * step)])
    return StatusClock(omega=nodes, elapsed=elapsed, decay=decay)


# ---------------------------------------------------------------------------
# survival and threshold quantities


def survival_pi(omega, params: BetweenHostParams, quad: QuadratureSpec | None = None):
    """Status-survival density pi(omega) = (1/g)*exp(-int_0^omega mu2/g).

    pi(omega) d omega is the chance an entrant is still infected while
    passing status omega, weighted by the time spent there. Accepts scalar
    or array omega in [0, omega0].
    """
    quad = quad or QuadratureSpec()
    omega_arr = np.atleast_1d(np.asarray(omega, dtype=float))
    if np.any(omega_arr < 0) or np.any(omega_arr > params.omega0 * (1 + 1e-12)):
        raise ValueError("omega must lie in [0, omega0]")
    exponent = _cumulative_ratio(params, omega_arr, quad)
    out = np.exp(-exponent) / params.g(omega_arr)
    return float(out[0]) if np.ndim(omega) == 0 else out


def _cumulative_ratio(params: BetweenHostParams, uppers: np.ndarray, quad: QuadratureSpec) -> np.ndarray:
    """int_0^u mu2/g for each u, one vectorized Simpson/trapezoid pass per row."""
    uppers = np.asarray(uppers, dtype=float)
    n = quad.n
    unit = np.linspace(0.0, 1.0, n + 1)
    nodes = np.outer(uppers, unit)
    vals = params.mu2(nodes) / params.g(nodes)
    if quad.rule == "simpson":
        coeff = np.ones(n + 1)
        coeff[1:-1:2] = 4.0
        coeff[2:-1:2] = 2.0
        scale = uppers / (3.0 * n)
    else:
        coeff = np.ones(n + 1)
        coeff[0] = coeff[-1] = 0.5
        scale = uppers / n
    return (vals * coeff).sum(axis=1) * scale


def _transmission_integrals(
    params: BetweenHostParams,
    lam: float,
    quad: QuadratureSpec,
    clock: StatusClock | None = None,
) -> tuple[float, float]:
    """The two weighted status integrals behind every spectral quantity.

    Returns (J_P, J_xi) with
      J_P  = int_0^omega0 P(w)/g(w) * exp(-M(w) - lam*G(w)) dw
      J_xi = int_0^omega0 xi(w)*P(w)/g(w) * exp(-M(w) - lam*G(w)) dw
    where G, M are the clock integrals. lam = 0 gives the generation
    integrals that make up the reproduction number.
    """
    clock = clock or build_clock(params)
    nodes = np.linspace(0.0, params.omega0, quad.n + 1)
    g_vals = params.g(nodes)
    weight = params.P(nodes) / g_vals * np.exp(-clock.decay_at(nodes) - lam * clock.time_of(nodes))
    j_p = _apply_rule(weight, params.omega0, quad)
    j_xi = _apply_rule(weight * params.xi(nodes), params.omega0, quad)
    return j_p, j_xi


def _apply_rule(values: np.ndarray, length: float, quad: QuadratureSpec) -> float:
    n = quad.n
    if quad.rule == "simpson":
        coeff = np.ones(n + 1)
        coeff[1:-1:2] = 4.0
        coeff[2:-1:2] = 2.0
        return float(np.dot(values, coeff) * length / (3.0 * n))
    coeff = np.ones(n + 1)
    coeff[0] = coeff[-1] = 0.5
    return float(np.dot(values, coeff) * length / n)


def dfe_char_G(
    lam: float,
    params: BetweenHostParams,
    quad: QuadratureSpec | None = None,
    clock: StatusClock | None = None,
) -> float:
    """Characteristic function of the infection-free linearization.

    G(lam) = (r/mu1) * [beta_h*J_P(lam) + beta_e/(lam+sigma)*J_xi(lam)].
    Strictly decreasing in lam; G(0) is the reproduction number and the
    root of G(lam) = 1 is the leading growth rate near the infection-free
    state. Requires lam > -sigma.
    """
    if lam <= -params.sigma:
        raise ValueError(f"lam must exceed -sigma = {-params.sigma}")
    quad = quad or QuadratureSpec()
    j_p, j_xi = _transmission_integrals(params, lam, quad, clock)
    s0 = params.r / params.mu1
    value = s0 * params.beta_h * j_p
    if params.beta_e > 0:
        value += s0 * params.beta_e / (lam + params.sigma) * j_xi
    return value


def r0(params: BetweenHostParams, quad: QuadratureSpec | None = None) -> float:
    """Reproduction number: expected secondary infections at the
    infection-free state, direct plus environmental routes.

    Shares the evaluation path with dfe_char_G at lam = 0, so the
    identity r0 == dfe_char_G(0) is exact.
    """
    return dfe_char_G(0.0, params, quad)


def r0_terms(params: BetweenHostParams, quad: QuadratureSpec | None = None) -> tuple[float, float]:
    """(direct, environmental) additive parts of the reproduction number."""
    quad = quad or QuadratureSpec()
    j_p, j_xi = _transmission_integrals(params, 0.0, quad)
    s0 = params.r / params.mu1
    direct = s0 * params.beta_h * j_p
    environmental = s0 * params.beta_e / params.sigma * j_xi if params.beta_e > 0 else 0.0
    return direct, environmental


def dfe_lambda_hat(
    params: BetweenHostParams,
    quad: QuadratureSpec | None = None,
    lam_max: float = 1e6,
) -> float:
    """Real root of the infection-free characteristic equation G(lam) = 1.

    G is strictly decreasing with limit 0, so the root is unique when it
    exists; its sign matches the sign of r0 - 1. Raises BracketError when
    G stays below 1 on the admissible interval (lam > -sigma).
    """
    quad = quad or QuadratureSpec()
    clock = build_clock(params)

    def f(lam):
        return dfe_char_G(lam, params, quad, clock) - 1.0

    at_zero = f(0.0)
    if at_zero == 0.0:
        return 0.0
    if at_zero > 0:
        lo, hi = 0.0, 1.0
        while f(hi) > 0:
            hi *= 2.0
            if hi > lam_max:
                raise BracketError("characteristic function stays above 1")
    else:
        hi = 0.0
        # approach the admissible edge -sigma geometrically
        gap = 0.5 * params.sigma
        lo = -params.sigma + gap
        while f(lo) < 0:
            gap *= 0.5
            lo = -params.sigma + gap
            if gap < 1e-12 * params.sigma:
                raise BracketError("characteristic function stays below 1 on (-sigma, 0]")
    return find_root(f, RootBracket(lo, hi))


# ---------------------------------------------------------------------------
# endemic equilibrium


def endemic_equilibrium(
    params: BetweenHostParams,
    n_omega: int = 400,
    quad: QuadratureSpec | None = None,
) -> EndemicEquilibrium | None:
    """Closed-form stationary state with disease present.

    Returns None when the reproduction number is at or below 1. The
    infected profile is I*(omega) = I*(0)*g(0)*pi(omega) on a uniform
    grid of n_omega+1 nodes.
    """
    quad = quad or QuadratureSpec()
    j_p, j_xi = _transmission_integrals(params, 0.0, quad)
    s0 = params.r / params.mu1
    basic = s0 * (params.beta_h * j_p + params.beta_e / params.sigma * j_xi)
    if basic <= 1.0:
        return None
    g0 = params.g(0.0)
    pi_end = survival_pi(params.omega0, params, quad)
    recycle = params.rho * params.g(params.omega0) * pi_end / (params.rho + params.mu3)
    i0 = params.r * (1.0 - 1.0 / basic) / (g0 * (1.0 - recycle))
    omega = np.linspace(0.0, params.omega0, n_omega + 1)
    profile = i0 * g0 * survival_pi(omega, params, quad)
    b_star = i0 * g0 * j_xi / params.sigma
    v_star = params.g(params.omega0) * i0 * g0 * pi_end / (params.rho + params.mu3)
    s_star = 1.0 / (params.beta_h * j_p + params.beta_e / params.sigma * j_xi)
    return EndemicEquilibrium(
        S=s_star,
        omega=omega,
        I=profile,
        V=v_star,
        B=b_star,
        I0=i0,
        reproduction_number=basic,
    )


def endemic_residuals(eq: EndemicEquilibrium, params: BetweenHostParams) -> dict[str, float]:
    """Residuals of the five stationarity equations at an equilibrium.

    Integrals use the trapezoid rule on the equilibrium's own grid and the
    transport equation is checked by central differences, so residuals are
    grid-order small rather than machine-zero.
    """
    omega, profile = eq.omega, eq.I
    step = omega[1] - omega[0]
    p_vals = params.P(omega)
    force_direct = float(np.trapezoid(p_vals * profile, dx=step))
    shed = float(np.trapezoid(params.xi(omega) * p_vals * profile, dx=step))
    infection = params.beta_h * eq.S * force_direct + params.beta_e * eq.S * eq.B
    g_vals = params.g(omega)
    flux = g_vals * profile
    transport = np.gradient(flux, step, edge_order=2) + params.mu2(omega) * profile
    return {
        "susceptible": params.r - params.mu1 * eq.S - infection + params.rho * eq.V,
        "transport": float(np.max(np.abs(transport))),
        "boundary": g_vals[0] * profile[0] - infection,
        "recovered": g_vals[-1] * profile[-1] - (params.rho + params.mu3) * eq.V,
        "environment": shed - params.sigma * eq.B,
    }


# ---------------------------------------------------------------------------
# characteristics oracle


def characteristics_eval(
    t: float,
    omega,
    params: BetweenHostParams,
    initial_density: Callable[[np.ndarray], np.ndarray],
    boundary_history: Callable[[np.ndarray], np.ndarray],
    clock: StatusClock | None = None,
):
    """Closed-form transport solution along characteristics.

    For points whose backward characteristic reaches the initial line
    (travel time G(omega) > t) the value is carried from the initial
    density; otherwise it is carried from the boundary-flux history
    H(s) = g(0)*I(s, 0):

      I(t,w) = phi(w_b) * g(w_b)/g(w) * exp(-(M(w)-M(w_b)))   if G(w) >= t
      I(t,w) = H(t - G(w)) * (1/g(w)) * exp(-M(w))            otherwise

    On the dividing characteristic G(w) = t both branches agree whenever
    the data are compatible (H(0) = g(0)*phi(0)); the initial branch is
    used there so t = 0 reproduces phi exactly.

    with w_b the status at time 0 of the characteristic through (t, w).
    Accepts scalar or array omega.
    """
    clock = clock or build_clock(params)
    omega_arr = np.atleast_1d(np.asarray(omega, dtype=float))
    travel = clock.time_of(omega_arr)
    g_here = params.g(omega_arr)
    decay_here = clock.decay_at(omega_arr)
    out = np.empty_like(omega_arr)
    from_initial = travel >= t
    if np.any(from_initial):
        w_back = clock.status_at(travel[from_initial] - t)
        carried = np.asarray(initial_density(w_back), dtype=float)
        ratio = params.g(w_back) / g_here[from_initial]
        fade = np.exp(-(decay_here[from_initial] - clock.decay_at(w_back)))
        out[from_initial] = carried * ratio * fade
    from_boundary = ~from_initial
    if np.any(from_boundary):
        h_vals = np.asarray(boundary_history(t - travel[from_boundary]), dtype=float)
        out[from_boundary] = h_vals / g_here[from_boundary] * np.exp(-decay_here[from_boundary])
    return float(out[0]) if np.ndim(omega) == 0 else out


# ---------------------------------------------------------------------------
# transport simulation


@dataclass
class EpidemicRun:
    """Recorded output of simulate_epidemic.

    t, S, I_total, V, B, F sample the scalar time series at the output
    stride; boundary_t/boundary_flux record g(0)*I(t,0) at every step for
    use as a characteristics history; snapshots hold full I rows when a
    snapshot stride was requested.
    """

    omega: np.ndarray
    t: np.ndarray
    S: np.ndarray
    I_total: np.ndarray
    V: np.ndarray
    B: np.ndarray
    F: np.ndarray
    boundary_t: np.ndarray
    boundary_flux: np.ndarray
    snapshot_t: np.ndarray
    snapshots: np.ndarray
    final: StructuredState = field(repr=False)

    def boundary_history(self) -> Callable[[np.ndarray], np.ndarray]:
        """Linear interpolant of the recorded boundary flux g(0)*I(t,0)."""
        return lambda s: np.interp(s, self.boundary_t, self.boundary_flux)


def simulate_epidemic(
    params: BetweenHostParams,
    initial: StructuredState,
    t_max: float,
    n_omega: int,
    dt: float,
    output_stride: int = 1,
    snapshot_stride: int = 0,
) -> EpidemicRun:
    """March the structured system with conservative first-order upwind
    transport and positivity-preserving removal.

    The status flux g*I is differenced one-sidedly (flow is rightward since
    g > 0) under the CFL condition dt*max(g) <= domega; removal acts as an
    exact per-step decay factor so densities stay nonnegative. The scalar
    pools (S, V, B) advance by a classical 4th-order step with the coupling
    integrals frozen over the step, and the nonlocal boundary value is
    filled explicitly afterwards. Densities below the negativity tolerance
    abort with TransportBlowupError.
    """
    if initial.I.size != n_omega + 1:
        raise ValueError(f"initial.I must have n_omega+1 = {n_omega + 1} nodes")
    if dt <= 0 or t_max <= 0:
        raise ValueError("dt and t_max must be positive")
    omega = np.linspace(0.0, params.omega0, n_omega + 1)
    step_w = params.omega0 / n_omega
    g_vals = params.g(omega)
    cfl = dt * float(np.max(g_vals))
    if cfl > step_w * (1.0 + 1e-12):
        raise ValueError(
            f"CFL violation: dt*max(g) = {cfl:.6g} exceeds domega = {step_w:.6g}"
        )
    mu2_vals = params.mu2(omega)
    p_vals = params.P(omega)
    shed_weight = params.xi(omega) * p_vals
    decay_factor = np.exp(-mu2_vals * dt)
    trap = np.full(n_omega + 1, step_w)
    trap[0] = trap[-1] = 0.5 * step_w
    g0 = float(g_vals[0])
    g_end = float(g_vals[-1])

    n_steps = int(round(t_max / dt))
    density = initial.I.copy()
    s_now, v_now, b_now = float(initial.S), float(initial.V), float(initial.B)

    boundary_t = np.empty(n_steps + 1)
    boundary_flux = np.empty(n_steps + 1)
    rec_t, rec_s, rec_mass, rec_v, rec_b, rec_f = [], [], [], [], [], []
    snap_t, snap_rows = [], []

    def force_of(density_row, b_val):
        direct = float(np.dot(trap, p_vals * density_row))
        return params.beta_h * direct + params.beta_e * b_val, direct

    def record(t_now, f_now):
        rec_t.append(t_now)
        rec_s.append(s_now)
        rec_mass.append(float(np.dot(trap, density)))
        rec_v.append(v_now)
        rec_b.append(b_now)
        rec_f.append(f_now)

    def snapshot(t_now):
        snap_t.append(t_now)
        snap_rows.append(density.copy())

    f_now, _ = force_of(density, b_now)
    boundary_t[0] = 0.0
    boundary_flux[0] = g0 * density[0]
    record(0.0, f_now)
    if snapshot_stride:
        snapshot(0.0)

    courant = dt / step_w
    flux = np.empty_like(density)
    for n in range(n_steps):
        t_now = n * dt
        f_now, direct_now = force_of(density, b_now)
        shed_now = float(np.dot(trap, shed_weight * density))
        outflux = g_end * density[-1]

        # scalar pools: RK4 with the I-coupling frozen over the step
        def scalar_rhs(y):
            s, v, b = y
            ds = params.r - params.mu1 * s - s * (params.beta_h * direct_now + params.beta_e * b) + params.rho * v
            dv = outflux - (params.rho + params.mu3) * v
            db = shed_now - params.sigma * b
            return np.array([ds, dv, db])

        y = np.array([s_now, v_now, b_now])
        k1 = scalar_rhs(y)
        k2 = scalar_rhs(y + 0.5 * dt * k1)
        k3 = scalar_rhs(y + 0.5 * dt * k2)
        k4 = scalar_rhs(y + dt * k3)
        s_new, v_new, b_new = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)

        # upwind transport then exact removal decay
        np.multiply(g_vals, density, out=flux)
        density[1:] -= courant * (flux[1:] - flux[:-1])
        density[1:] *= decay_factor[1:]

        # nonlocal boundary, explicit: fresh interior and pools; slot 0 still
        # holds the lagged previous boundary value inside the quadrature
        direct_mix = float(np.dot(trap, p_vals * density))
        density[0] = s_new * (params.beta_h * direct_mix + params.beta_e * b_new) / g0

        low = min(float(density.min()), s_new, v_new, b_new)
        if low < NEGATIVITY_ABORT:
            raise TransportBlowupError(
                f"negative density {low:.3e} at t = {t_now + dt:.6g}; grid too coarse"
            )
        np.clip(density, 0.0, None, out=density)
        s_now, v_now, b_now = max(s_new, 0.0), max(v_new, 0.0), max(b_new, 0.0)

        t_next = (n + 1) * dt
        boundary_t[n + 1] = t_next
        boundary_flux[n + 1] = g0 * density[0]
        if (n + 1) % output_stride == 0 or n + 1 == n_steps:
            f_next, _ = force_of(density, b_now)
            record(t_next, f_next)
        if snapshot_stride and (n + 1) % snapshot_stride == 0:
            snapshot(t_next)

    final = StructuredState(S=s_now, I=density.copy(), V=v_now, B=b_now)
    return EpidemicRun(
        omega=omega,
        t=np.asarray(rec_t),
        S=np.asarray(rec_s),
        I_total=np.asarray(rec_mass),
        V=np.asarray(rec_v),
        B=np.asarray(rec_b),
        F=np.asarray(rec_f),
        boundary_t=boundary_t,
        boundary_flux=boundary_flux,
        snapshot_t=np.asarray(snap_t),
        snapshots=np.asarray(snap_rows) if snap_rows else np.empty((0, n_omega + 1)),
        final=final,
    )


# ---------------------------------------------------------------------------
# renewal-equation reformulation


def renewal_kernel_A(
    omega,
    params: BetweenHostParams,
    quad: QuadratureSpec | None = None,
    clock: StatusClock | None = None,
):
    """Infectivity kernel of the renewal form, at time-since-infection omega.

    Direct part: transmission weight of a host infected omega time units
    ago, still below recovery status,

        K_h(theta) = beta_h * P(w(theta)) * exp(-M(w(theta))),

    with w(theta) the status reached after travel time theta. Environmental
    part: contribution through bacteria of age a shed at theta - a,

        K_e(theta) = int beta_e * e^{-sigma*a} * xi(w)*P(w)*exp(-M(w)) da,
        w = w(theta - a),  a in [max(0, theta - T0), min(a_bar, theta)],

    where T0 is the travel time to recovery. The kernel is K_h + K_e,
    supported on [0, a_bar + T0]. Accepts scalar or array omega.
    """
    quad = quad or QuadratureSpec()
    clock = clock or build_clock(params)
    total = clock.total_time
    omega_arr = np.atleast_1d(np.asarray(omega, dtype=float))
    if np.any(omega_arr < 0) or np.any(omega_arr > (params.a_bar + total) * (1 + 1e-12)):
        raise ValueError("omega must lie in [0, a_bar + travel time to recovery]")
    out = np.zeros_like(omega_arr)
    direct = omega_arr <= total
    if params.beta_h > 0 and np.any(direct):
        out[direct] = _kernel_direct(omega_arr[direct], params, clock)
    if params.beta_e > 0:
        for i, theta in enumerate(omega_arr):
            out[i] += _kernel_env(theta, params, quad, clock)
    return float(out[0]) if np.ndim(omega) == 0 else out


def _kernel_direct(theta, params: BetweenHostParams, clock: StatusClock) -> np.ndarray:
    """Direct-route kernel values; callers restrict theta to [0, total_time]."""
    w_here = clock.status_at(np.asarray(theta, dtype=float))
    return params.beta_h * params.P(w_here) * np.exp(-clock.decay_at(w_here))


def _kernel_env(theta: float, params: BetweenHostParams, quad: QuadratureSpec, clock: StatusClock) -> float:
    """Environmental-route kernel value at one delay theta."""
    lo = max(0.0, theta - clock.total_time)
    hi = min(params.a_bar, theta)
    if hi <= lo:
        return 0.0

    def integrand(a):
        ages = np.asarray(a, dtype=float)
        w = clock.status_at(theta - ages)
        return (
            params.beta_e
            * np.exp(-params.sigma * ages)
            * params.xi(w)
            * params.P(w)
            * np.exp(-clock.decay_at(w))
        )

    return quadrature(integrand, lo, hi, quad)


def kernel_total_integral(
    params: BetweenHostParams,
    quad: QuadratureSpec | None = None,
    clock: StatusClock | None = None,
) -> float:
    """Integral of the renewal kernel over its full support.

    Split at the kernel's corner points (travel time to recovery and the
    bacterial age cap) so the piecewise-smooth integrand keeps full
    quadrature order. At the endemic state S* times this integral is 1,
    up to the exponential age-cap truncation.
    """
    quad = quad or QuadratureSpec(rule="simpson", n=256)
    clock = clock or build_clock(params)
    total = clock.total_time
    value = 0.0
    if params.beta_h > 0:
        value += quadrature(
            lambda theta: _kernel_direct(theta, params, clock), 0.0, total, quad
        )
    if params.beta_e > 0:
        # the environmental part is continuous but kinked where its
        # integration limits switch; integrate each smooth piece separately
        cuts = sorted({0.0, min(total, params.a_bar), max(total, params.a_bar), params.a_bar + total})
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            if hi <= lo:
                continue

            def piece(theta):
                flat = np.asarray(theta, dtype=float).ravel()
                return np.array([_kernel_env(x, params, quad, clock) for x in flat])

            value += quadrature(piece, lo, hi, quad)
    return value


@dataclass
class RenewalRun:
    """Force-of-infection and susceptible traces from the renewal solver."""

    t: np.ndarray
    S: np.ndarray
    F: np.ndarray


def simulate_renewal(
    params: BetweenHostParams,
    history: Callable[[np.ndarray], np.ndarray],
    S0: float,
    t_max: float,
    dt: float,
    quad: QuadratureSpec | None = None,
) -> RenewalRun:
    """Advance the renewal pair S' = r - mu1*S - S*F,
    F(t) = int_0^Theta A(w) S(t-w) F(t-w) dw.

    Theta = a_bar + travel time to recovery; it must be an integer number
    of steps (the memory window is a fixed trapezoid stencil). `history`
    supplies F on [-Theta, 0]; S is held at S0 before time zero. The new
    F value appears inside its own convolution through the w = 0 node, a
    scalar linear equation solved in closed form each step; S advances by
    a Heun predictor-corrector.
    """
    quad = quad or QuadratureSpec()
    clock = build_clock(params)
    window = params.a_bar + clock.total_time
    m = int(round(window / dt))
    if m < 2 or abs(m * dt - window) > 1e-9 * max(1.0, window):
        raise ValueError(
            f"memory window {window:.12g} is not an integer multiple of dt = {dt:.12g}"
        )
    n_steps = int(round(t_max / dt))
    ages = dt * np.arange(m + 1)
    kernel = renewal_kernel_A(ages, params, quad, clock)
    weights = np.full(m + 1, dt)
    weights[0] = weights[-1] = 0.5 * dt
    tail = (kernel * weights)[1:][::-1]  # aligned with SF[j-m+1 .. j]
    anchor = 0.5 * dt * kernel[0]

    size = m + 1 + n_steps
    f_arr = np.empty(size)
    s_arr = np.empty(size)
    f_arr[: m + 1] = history(-window + dt * np.arange(m + 1))
    s_arr[: m + 1] = S0
    sf = s_arr[: m + 1] * f_arr[: m + 1]
    sf_arr = np.empty(size)
    sf_arr[: m + 1] = sf

    for j in range(m, size - 1):
        s_j, f_j = s_arr[j], f_arr[j]
        drift = params.r - params.mu1 * s_j - s_j * f_j
        s_pred = s_j + dt * drift
        past = float(np.dot(tail, sf_arr[j - m + 1 : j + 1]))

        def solve_f(s_val):
            denom = 1.0 - anchor * s_val
            if denom <= 1e-12:
                raise TransportBlowupError("renewal step lost diagonal dominance")
            return past / denom

        f_next = solve_f(s_pred)
        drift_pred = params.r - params.mu1 * s_pred - s_pred * f_next
        s_next = s_j + 0.5 * dt * (drift + drift_pred)
        f_next = solve_f(s_next)
        if s_next < NEGATIVITY_ABORT or f_next < NEGATIVITY_ABORT:
            raise TransportBlowupError("renewal state went negative")
        s_arr[j + 1] = max(s_next, 0.0)
        f_arr[j + 1] = max(f_next, 0.0)
        sf_arr[j + 1] = s_arr[j + 1] * f_arr[j + 1]

    t = dt * np.arange(n_steps + 1)
    return RenewalRun(t=t, S=s_arr[m:], F=f_arr[m:])


# ---------------------------------------------------------------------------
# endemic spectral residuals


def _is_unit_constant(coefficient: Coefficient) -> bool:
    return coefficient.family == "constant" and coefficient.constant_value == 1.0


def endemic_char_residual(
    lam: float,
    params: BetweenHostParams,
    eq: EndemicEquilibrium | None = None,
    quad: QuadratureSpec | None = None,
    clock: StatusClock | None = None,
) -> float:
    """Residual of the endemic-linearization characteristic equation at a
    real trial rate lam; a root means a mode growing like e^{lam*t}.

    General case: the equation reads 1 = RHS(lam) and the residual is
    RHS - 1, with the boundary-sourced exponential factors evaluated at
    the recovery status (the only status where the recovered pool is fed).
    In the reduced case (rho = 0, beta_e = 0, g constant 1) the equation
    collapses to

        (lam + mu1 + K)/(lam + mu1) = S* int beta_h P e^{-M} e^{-lam w} dw

    and the residual is LHS - RHS of that form. K is the direct
    transmission integral against the endemic profile. Rates within
    1e-8 of a pole (-mu1, -sigma, -(rho+mu3)) are rejected.
    """
    quad = quad or QuadratureSpec()
    clock = clock or build_clock(params)
    if abs(lam + params.mu1) < POLE_GUARD:
        raise ValueError("lam too close to the pole at -mu1")
    if params.beta_e > 0 and abs(lam + params.sigma) < POLE_GUARD:
        raise ValueError("lam too close to the pole at -sigma")
    if abs(lam + params.rho + params.mu3) < POLE_GUARD:
        raise ValueError("lam too close to the pole at -(rho+mu3)")
    if eq is None:
        eq = endemic_equilibrium(params, quad=quad)
    if eq is None:
        raise ValueError("endemic residuals need a reproduction number above 1")
    step = eq.omega[1] - eq.omega[0]
    K = params.beta_h * float(np.trapezoid(params.P(eq.omega) * eq.I, dx=step))

    reduced = params.rho == 0.0 and params.beta_e == 0.0 and _is_unit_constant(params.g)
    j_p, j_xi = _transmission_integrals(params, lam, quad, clock)
    if reduced:
        lhs = (lam + params.mu1 + K) / (lam + params.mu1)
        return lhs - eq.S * params.beta_h * j_p

    pi_end = survival_pi(params.omega0, params, quad)
    boundary_factor = (
        params.rho
        * params.g(params.omega0)
        * pi_end
        * np.exp(-lam * clock.total_time)
        / (lam + params.rho + params.mu3)
    )
    bracket = (boundary_factor - 1.0) / (lam + params.mu1)
    rhs = eq.S * params.beta_h * j_p + bracket * K
    if params.beta_e > 0:
        rhs += params.beta_e * eq.S * j_xi / (lam + params.sigma)
        rhs += params.beta_e * eq.B * bracket
    return rhs - 1.0


def endemic_spectrum_scan(
    params: BetweenHostParams,
    lam_max: float = 50.0,
    step: float = 1e-2,
    quad: QuadratureSpec | None = None,
) -> list[float]:
    """Real-axis root scan of the endemic characteristic residual on
    [0, lam_max]: sign changes are bracketed and refined. An empty list
    is the numerical witness that no real nonnegative growth rate exists;
    complex roots are outside this check's scope.
    """
    quad = quad or QuadratureSpec()
    clock = build_clock(params)
    eq = endemic_equilibrium(params, quad=quad)
    if eq is None:
        raise ValueError("spectrum scan needs a reproduction number above 1")
    grid = np.arange(0.0, lam_max + 0.5 * step, step)
    values = np.array(
        [endemic_char_residual(lam, params, eq, quad, clock) for lam in grid]
    )
    roots = []
    for i in range(len(grid) - 1):
        a, b = values[i], values[i + 1]
        if a == 0.0:
            roots.append(float(grid[i]))
        elif a * b < 0:
            roots.append(
                find_root(
                    lambda lam: endemic_char_residual(lam, params, eq, quad, clock),
                    RootBracket(float(grid[i]), float(grid[i + 1])),
                )
            )
    if values[-1] == 0.0:
        roots.append(float(grid[-1]))
    return roots
