"""Within-host immune-pathogen dynamics with a slow antibody variable.

State is (T, P, W): susceptible target cells, pathogen load, and immune
(antibody) status. T and P evolve on the fast time scale; W moves slowly,
at a rate proportional to ``epsilon``:

    T' = Lambda - mu*T - alpha*P^2*T
    P' = alpha*P^2*T - gamma*P - delta*P*W
    W' = epsilon*(kappa*P - c*W)

Freezing W gives a planar fast subsystem whose nontrivial equilibria come in
a lower/upper pair that collides in a fold as the effective clearance rate
Gamma = gamma + delta*W grows. The fold and Hopf loci of that subsystem, the
slow manifold, and event-based infection runs (recovery when the pathogen is
cleared after the fold) are all computed here.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numerics import (
    BracketError,
    IntegratorSpec,
    RootBracket,
    Trajectory,
    find_root,
    integrate_ode,
)

__all__ = [
    "WithinHostParams",
    "WithinHostState",
    "FastEquilibria",
    "HopfRoot",
    "CriticalLoci",
    "InfectionRun",
    "rhs_full",
    "vector_field",
    "fast_rhs",
    "fast_vector_field",
    "equilibria_fast",
    "jacobian_fast",
    "critical_loci",
    "slow_manifold_W",
    "manifold_tip",
    "w_nullcline",
    "upper_branch_P",
    "immune_growth_g",
    "integrate_slow_reduced",
    "simulate_infection",
    "write_trajectory_csv",
    "run_metadata",
]

# Pathogen level below which an infection counts as cleared.
P_CLEAR_DEFAULT = 1e-6


@dataclass(frozen=True)
class WithinHostParams:
    """Rate constants of the within-host system.

    Lambda  target-cell production rate (cells/time)
    mu      target-cell natural death rate (1/time)
    alpha   infection rate coefficient for the quadratic incidence (1/(load^2 time))
    gamma   pathogen clearance rate independent of antibodies (1/time)
    delta   antibody-mediated clearance coefficient (1/(status time))
    epsilon time-scale separation of the immune response (dimensionless, slow when small)
    kappa   antibody production coefficient per unit pathogen (status/(load time))
    c       antibody decay rate on the slow scale (1/time)
    """

    Lambda: float
    mu: float
    alpha: float
    gamma: float
    delta: float
    epsilon: float = 0.01
    kappa: float = 1.0
    c: float = 0.5

    def __post_init__(self) -> None:
        for name in ("Lambda", "mu", "alpha", "gamma", "delta", "epsilon", "kappa", "c"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value}")
        if self.epsilon > 1.0:
            raise ValueError(f"epsilon must be <= 1, got {self.epsilon}")
        if self.epsilon > 0.1:
            warnings.warn(
                f"epsilon={self.epsilon} is large for a slow-fast split; "
                "results lose their singular-perturbation meaning",
                stacklevel=2,
            )

    def gamma_eff(self, W: float) -> float:
        """Effective clearance rate Gamma = gamma + delta*W at frozen immune status."""
        return self.gamma + self.delta * W


@dataclass(frozen=True)
class WithinHostState:
    """A point (T, P, W) in the nonnegative state cone."""

    T: float
    P: float
    W: float

    def __post_init__(self) -> None:
        for name in ("T", "P", "W"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be nonnegative and finite, got {value}")

    def as_array(self) -> np.ndarray:
        return np.array([self.T, self.P, self.W], dtype=float)


def rhs_full(state: WithinHostState | Sequence[float], params: WithinHostParams) -> np.ndarray:
    """Time derivative of (T, P, W)."""
    if isinstance(state, WithinHostState):
        T, P, W = state.T, state.P, state.W
    else:
        T, P, W = state
    infection = params.alpha * P * P * T
    dT = params.Lambda - params.mu * T - infection
    dP = infection - params.gamma * P - params.delta * P * W
    dW = params.epsilon * (params.kappa * P - params.c * W)
    return np.array([dT, dP, dW])


def vector_field(params: WithinHostParams):
    """rhs callable in integrator form f(t, y)."""

    def f(t, y):
        return rhs_full(y, params)

    return f


def fast_rhs(tp: Sequence[float], params: WithinHostParams, W: float) -> np.ndarray:
    """Planar fast subsystem at frozen immune status W."""
    T, P = tp
    infection = params.alpha * P * P * T
    return np.array(
        [
            params.Lambda - params.mu * T - infection,
            infection - params.gamma_eff(W) * P,
        ]
    )


def fast_vector_field(params: WithinHostParams, W: float):
    def f(t, y):
        return fast_rhs(y, params, W)

    return f


# ---------------------------------------------------------------------------
# fast-subsystem equilibria and Jacobian
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FastEquilibria:
    """Equilibria of the fast subsystem at frozen W.

    ``trivial`` is the infection-free state (Lambda/mu, 0). The nontrivial
    pair exists when Lambda > 2*Gamma*sqrt(mu/alpha); at equality the pair
    degenerates to a double root and ``lower == upper``.
    """

    W: float
    trivial: tuple[float, float]
    exists: bool
    lower: tuple[float, float] | None
    upper: tuple[float, float] | None


def equilibria_fast(params: WithinHostParams, W: float) -> FastEquilibria:
    """All fast-subsystem equilibria at immune status W >= 0."""
    if W < 0:
        raise ValueError(f"immune status must be nonnegative, got {W}")
    a, mu, lam = params.alpha, params.mu, params.Lambda
    Gamma = params.gamma_eff(W)
    trivial = (lam / mu, 0.0)
    disc = a * a * lam * lam - 4.0 * a * mu * Gamma * Gamma
    if -1e-13 * max(a * a * lam * lam, 1.0) < disc < 0.0:
        # double root lost to rounding exactly at the threshold
        disc = 0.0
    if disc < 0:
        return FastEquilibria(W=W, trivial=trivial, exists=False, lower=None, upper=None)
    root = np.sqrt(disc)
    P_hi = (a * lam + root) / (2.0 * Gamma * a)
    P_lo = (a * lam - root) / (2.0 * Gamma * a)

    def T_of(P):
        return lam / (mu + a * P * P)

    return FastEquilibria(
        W=W,
        trivial=trivial,
        exists=True,
        lower=(T_of(P_lo), P_lo),
        upper=(T_of(P_hi), P_hi),
    )


def jacobian_fast(tp: Sequence[float], params: WithinHostParams, W: float) -> np.ndarray:
    """Jacobian of the fast subsystem at a point (T, P)."""
    T, P = tp
    a = params.alpha
    Gamma = params.gamma_eff(W)
    return np.array(
        [
            [-params.mu - a * P * P, -2.0 * a * P * T],
            [a * P * P, 2.0 * a * P * T - Gamma],
        ]
    )


# ---------------------------------------------------------------------------
# critical loci of the fast subsystem
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HopfRoot:
    """A root Gamma of the trace-vanishing condition, with validity gates.

    ``det_gate_strict`` is Gamma > 2*mu (determinant positive at the
    trace-zero equilibrium, so the root is an actual Hopf point);
    ``det_gate_weak`` is the looser Gamma > mu. Both are reported, only the
    strict gate marks the root usable.
    """

    Gamma: float
    P_star: float
    det_gate_strict: bool
    det_gate_weak: bool

    @property
    def valid(self) -> bool:
        return self.det_gate_strict


@dataclass(frozen=True)
class CriticalLoci:
    """Fold and Hopf loci in terms of the effective clearance rate Gamma."""

    Gamma_fold: float
    hopf: tuple[HopfRoot, ...]
    gamma: float

    def delta_fold(self, W: float) -> float:
        """Fold position delta at fixed immune status W (requires W > 0)."""
        if W <= 0:
            raise ValueError("fold position in delta needs W > 0")
        return (self.Gamma_fold - self.gamma) / W

    def W_fold(self, delta: float) -> float:
        """Fold position W at fixed clearance coefficient delta."""
        return (self.Gamma_fold - self.gamma) / delta

    def delta_hopf(self, W: float, valid_only: bool = True) -> list[float]:
        if W <= 0:
            raise ValueError("Hopf position in delta needs W > 0")
        return [
            (h.Gamma - self.gamma) / W
            for h in self.hopf
            if (h.valid or not valid_only) and h.Gamma > self.gamma
        ]

    def W_hopf(self, delta: float, valid_only: bool = True) -> list[float]:
        return [
            (h.Gamma - self.gamma) / delta
            for h in self.hopf
            if (h.valid or not valid_only) and h.Gamma > self.gamma
        ]


def critical_loci(params: WithinHostParams) -> CriticalLoci:
    """Fold and Hopf conditions of the fast subsystem.

    The fold sits where the nontrivial pair collides:
    Gamma_fold = (Lambda/2)*sqrt(alpha/mu). Hopf candidates are positive
    roots Gamma of mu = Gamma - Gamma^4/(alpha*Lambda^2) (trace of the
    Jacobian vanishing at P* = Gamma^2/(alpha*Lambda)); each is gated by the
    determinant condition Gamma > 2*mu.
    """
    a, mu, lam = params.alpha, params.mu, params.Lambda
    Gamma_fold = 0.5 * lam * np.sqrt(a / mu)

    # positive roots of -G^4/(a lam^2) + G - mu = 0, polished by bisection
    coeffs = [-1.0 / (a * lam * lam), 0.0, 0.0, 1.0, -mu]
    raw = np.roots(coeffs)
    hopf: list[HopfRoot] = []

    def trace_condition(G):
        return G - G ** 4 / (a * lam * lam) - mu

    for z in raw:
        if abs(z.imag) > 1e-9 * max(1.0, abs(z.real)) or z.real <= 0:
            continue
        g0 = float(z.real)
        width = max(1e-6, 1e-6 * g0)
        lo, hi = g0 - width, g0 + width
        for _ in range(60):
            if trace_condition(lo) * trace_condition(hi) <= 0:
                break
            width *= 2.0
            lo, hi = g0 - width, g0 + width
        try:
            G = find_root(trace_condition, RootBracket(lo, max(hi, lo + 1e-12)), tol=1e-14)
        except BracketError:
            G = g0
        hopf.append(
            HopfRoot(
                Gamma=G,
                P_star=G * G / (a * lam),
                det_gate_strict=G > 2.0 * mu,
                det_gate_weak=G > mu,
            )
        )
    hopf.sort(key=lambda h: h.Gamma)
    return CriticalLoci(Gamma_fold=float(Gamma_fold), hopf=tuple(hopf), gamma=params.gamma)


# ---------------------------------------------------------------------------
# slow manifold and immune-status growth
# ---------------------------------------------------------------------------


def slow_manifold_W(P, params: WithinHostParams):
    """Immune status on the critical manifold, W = phi(P).

    Solving the fast equilibrium conditions for W gives
    phi(P) = -gamma/delta + alpha*Lambda*P / (delta*(alpha*P^2 + mu)).
    Accepts scalars or arrays.
    """
    P = np.asarray(P, dtype=float)
    a, mu, lam, d = params.alpha, params.mu, params.Lambda, params.delta
    out = -params.gamma / d + a * lam * P / (d * (a * P * P + mu))
    return float(out) if out.ndim == 0 else out


def manifold_tip(params: WithinHostParams) -> tuple[float, float]:
    """Fold point of the manifold: (P_tip, W_max) with P_tip = sqrt(mu/alpha)."""
    P_tip = float(np.sqrt(params.mu / params.alpha))
    return P_tip, float(slow_manifold_W(P_tip, params))


def w_nullcline(P, params: WithinHostParams):
    """The W' = 0 locus, W = kappa*P/c."""
    P = np.asarray(P, dtype=float)
    out = params.kappa * P / params.c
    return float(out) if out.ndim == 0 else out


def upper_branch_P(W: float, params: WithinHostParams) -> float:
    """Pathogen load on the upper (infected) manifold branch at status W.

    Defined for W up to the fold value; a hair of rounding slack is allowed
    at the tip itself.
    """
    eq = equilibria_fast(params, W)
    if eq.exists:
        return eq.upper[1]
    _, W_max = manifold_tip(params)
    if W <= W_max * (1.0 + 1e-12) + 1e-12:
        # discriminant lost to rounding exactly at the tip
        return float(np.sqrt(params.mu / params.alpha))
    raise ValueError(f"no infected branch at W={W} (fold at W={W_max})")


def immune_growth_g(omega, params: WithinHostParams):
    """Immune-status growth rate along the infected branch.

    g(omega) = kappa*P_plus(omega) - c*omega, the slow W dynamics restricted
    to the upper manifold branch. Defined on [0, W_fold]. g(0) > 0 always;
    positivity further along the branch depends on kappa/c.
    """
    omega_arr = np.atleast_1d(np.asarray(omega, dtype=float))
    out = np.empty_like(omega_arr)
    for i, w in enumerate(omega_arr):
        if w < 0:
            raise ValueError(f"immune status must be nonnegative, got {w}")
        out[i] = params.kappa * upper_branch_P(w, params) - params.c * w
    return float(out[0]) if np.ndim(omega) == 0 else out


def integrate_slow_reduced(
    params: WithinHostParams,
    W0: float,
    tau_span: tuple[float, float],
    spec: IntegratorSpec | None = None,
) -> Trajectory:
    """Reduced slow flow on the infected branch, dW/dtau = kappa*P_plus(W) - c*W.

    tau is slow time (tau = epsilon * t). Stops early at the fold if the
    branch is left. Used as the singular-limit oracle for full simulations.
    """
    _, W_max = manifold_tip(params)

    def f(tau, y):
        W = min(y[0], W_max)
        return np.array([params.kappa * upper_branch_P(W, params) - params.c * W])

    def at_fold(tau, y):
        return W_max - y[0]

    if spec is None:
        # dense samples: callers interpolate this trajectory linearly
        span = tau_span[1] - tau_span[0]
        spec = IntegratorSpec(rel_tol=1e-10, abs_tol=1e-12, max_step=max(1e-3, 0.002 * span))
    return integrate_ode(f, [W0], tau_span, spec, event=at_fold)


# ---------------------------------------------------------------------------
# full infection runs
# ---------------------------------------------------------------------------


@dataclass
class InfectionRun:
    """A full within-host trajectory with clearance bookkeeping.

    ``recovery_time`` is the first time the pathogen load drops below
    ``p_clear`` (None if it never does within t_max). ``fold_crossed``
    records whether the immune status exceeded the fold value W_fold before
    clearance, i.e. whether the run ended through the recovery jump rather
    than a subthreshold fizzle.
    """

    t: np.ndarray
    states: np.ndarray
    recovery_time: float | None
    recovery_state: np.ndarray | None
    fold_crossed: bool
    w_fold: float
    p_clear: float

    @property
    def T(self) -> np.ndarray:
        return self.states[:, 0]

    @property
    def P(self) -> np.ndarray:
        return self.states[:, 1]

    @property
    def W(self) -> np.ndarray:
        return self.states[:, 2]


def simulate_infection(
    params: WithinHostParams,
    initial: WithinHostState,
    t_max: float,
    spec: IntegratorSpec | None = None,
    p_clear: float = P_CLEAR_DEFAULT,
) -> InfectionRun:
    """Integrate the full system, stopping the infected phase at clearance.

    After the pathogen falls below ``p_clear`` the trajectory continues on
    the P = 0 branch, where W decays as W' = -epsilon*c*W and target cells
    relax to Lambda/mu. Zero initial load short-circuits to that branch.
    """
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    spec = spec or IntegratorSpec(rel_tol=1e-8, abs_tol=1e-10)
    w_fold = manifold_tip(params)[1]
    f = vector_field(params)

    if initial.P == 0.0:
        traj = integrate_ode(f, initial.as_array(), (0.0, t_max), spec)
        return InfectionRun(
            t=traj.t,
            states=traj.y,
            recovery_time=None,
            recovery_state=None,
            fold_crossed=initial.W > w_fold,
            w_fold=w_fold,
            p_clear=p_clear,
        )

    def cleared(t, y):
        return y[1] - p_clear

    traj = integrate_ode(f, initial.as_array(), (0.0, t_max), spec, event=cleared)
    if traj.event_time is None:
        return InfectionRun(
            t=traj.t,
            states=traj.y,
            recovery_time=None,
            recovery_state=None,
            fold_crossed=bool(np.max(traj.y[:, 2]) >= w_fold),
            w_fold=w_fold,
            p_clear=p_clear,
        )

    t_rec = traj.event_time
    state_rec = traj.event_state.copy()
    fold_crossed = bool(np.max(traj.y[:, 2]) >= w_fold or initial.W >= w_fold)
    # continue on the cleared branch; P = 0 is exactly invariant under RK stages
    ts, ys = traj.t, traj.y
    if t_rec < t_max:
        y_branch = state_rec.copy()
        y_branch[1] = 0.0
        tail = integrate_ode(f, y_branch, (t_rec, t_max), spec)
        ts = np.concatenate([ts, tail.t[1:]])
        ys = np.vstack([ys, tail.y[1:]])
    return InfectionRun(
        t=ts,
        states=ys,
        recovery_time=float(t_rec),
        recovery_state=state_rec,
        fold_crossed=fold_crossed,
        w_fold=w_fold,
        p_clear=p_clear,
    )


def write_trajectory_csv(run: InfectionRun, path) -> None:
    """Write the run as CSV with header ``t,T,P,W`` (full float precision)."""
    with open(path, "w") as fh:
        fh.write("t,T,P,W\n")
        for ti, (T, P, W) in zip(run.t, run.states):
            fh.write(f"{float(ti)!r},{float(T)!r},{float(P)!r},{float(W)!r}\n")


def run_metadata(run: InfectionRun, params: WithinHostParams) -> dict:
    """JSON-ready metadata for a run: parameters, thresholds, clearance record."""
    return {
        "parameters": {
            "Lambda": params.Lambda,
            "mu": params.mu,
            "alpha": params.alpha,
            "gamma": params.gamma,
            "delta": params.delta,
            "epsilon": params.epsilon,
            "kappa": params.kappa,
            "c": params.c,
        },
        "p_clear": run.p_clear,
        "w_fold": run.w_fold,
        "recovery_time": run.recovery_time,
        "recovery_time_slow": None
        if run.recovery_time is None
        else run.recovery_time * params.epsilon,
        "fold_crossed": run.fold_crossed,
        "t_end": float(run.t[-1]),
        "n_samples": int(run.t.size),
    }
