"""Equilibrium branches, fold/Hopf events, and limit-cycle sampling.

The fast subsystem's nontrivial equilibria form a closed-form pair of
branches in any parameter that only enters through the effective clearance
rate Gamma = gamma + delta*W. Sweeps therefore evaluate the quadratic
directly; event detection scans the branch for determinant / trace sign
changes and refines the event parameter against the analytic loci. Cycle
amplitudes come from batched fixed-step integration of the frozen-W fast
system past a transient.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import within_host as wh
from .numerics import BracketError, RootBracket, find_root

__all__ = [
    "SweepSpec",
    "BranchPoint",
    "BifurcationEvent",
    "CycleSample",
    "SweepResult",
    "sweep_branch",
    "detect_events",
    "detect_all_events",
    "cycle_amplitude",
    "branch_to_csv",
    "events_to_json",
    "cycles_to_csv",
]

# A sampled orbit counts as oscillatory only above this relative amplitude.
CYCLE_AMPLITUDE_TOL = 1e-4
# Periods beyond this flag an approach to the homoclinic collision.
HOMOCLINIC_PERIOD = 1e3


@dataclass(frozen=True)
class SweepSpec:
    """A one-parameter sweep: ``which`` in {"delta", "W"} over [lo, hi].

    Sweeping delta requires the frozen immune status ``W``; sweeping W takes
    delta from the parameter set.
    """

    which: str
    lo: float
    hi: float
    n: int = 200
    W: float | None = None

    def __post_init__(self) -> None:
        if self.which not in ("delta", "W"):
            raise ValueError(f"sweep parameter must be 'delta' or 'W', got {self.which!r}")
        if not self.lo < self.hi:
            raise ValueError("sweep range requires lo < hi")
        if self.n < 2:
            raise ValueError("sweep needs at least 2 points")
        if self.which == "delta":
            if self.W is None or self.W <= 0:
                raise ValueError("delta sweep requires a frozen immune status W > 0")
        if self.lo < 0:
            raise ValueError("sweep values must be nonnegative")

    def values(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n)

    def resolve(self, params: wh.WithinHostParams, value: float) -> tuple[wh.WithinHostParams, float]:
        """Parameter set and frozen W for one sweep value."""
        if self.which == "delta":
            if value <= 0:
                raise ValueError("delta must be positive")
            return replace(params, delta=float(value)), float(self.W)
        return params, float(value)


@dataclass(frozen=True)
class BranchPoint:
    """An equilibrium on a branch with its local linearization."""

    param: float
    T: float
    P: float
    eigenvalues: tuple[complex, complex]
    trace: float
    det: float
    stability: str


@dataclass(frozen=True)
class BifurcationEvent:
    kind: str  # "fold" | "hopf"
    param: float
    T: float
    P: float


@dataclass(frozen=True)
class CycleSample:
    """Amplitude record of the frozen-W fast flow at one sweep value.

    ``oscillatory`` requires at least three strict local maxima of P with
    relative amplitude above CYCLE_AMPLITUDE_TOL in the sampling window.
    ``collapsed`` marks orbits that fell to the infection-free state, where
    amplitude is undefined. ``homoclinic_flag`` marks diverging periods.
    """

    param: float
    p_min: float
    p_max: float
    period: float | None
    n_maxima: int
    oscillatory: bool
    collapsed: bool
    homoclinic_flag: bool


@dataclass
class SweepResult:
    spec: SweepSpec
    params: wh.WithinHostParams
    upper: list[BranchPoint]
    lower: list[BranchPoint]
    trivial: list[BranchPoint]

    @property
    def fold_path(self) -> list[BranchPoint]:
        """Upper branch then lower branch reversed: ordered along the curve,
        so the fold sits between the two halves."""
        return self.upper + list(reversed(self.lower))


def _classify(trace: float, det: float, tol: float = 1e-9) -> str:
    if det < -tol:
        return "saddle"
    disc = trace * trace - 4.0 * det
    kind = "focus" if disc < 0 else "node"
    if abs(trace) <= tol:
        return "marginal"
    return ("stable-" if trace < 0 else "unstable-") + kind


def _eig_pair(trace: float, det: float) -> tuple[complex, complex]:
    disc = trace * trace - 4.0 * det
    if disc >= 0:
        r = np.sqrt(disc)
        return (complex(0.5 * (trace - r)), complex(0.5 * (trace + r)))
    r = np.sqrt(-disc)
    return (complex(0.5 * trace, -0.5 * r), complex(0.5 * trace, 0.5 * r))


def _point(param: float, T: float, P: float, params: wh.WithinHostParams, W: float) -> BranchPoint:
    J = wh.jacobian_fast((T, P), params, W)
    trace = float(J[0, 0] + J[1, 1])
    det = float(J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0])
    return BranchPoint(
        param=param,
        T=T,
        P=P,
        eigenvalues=_eig_pair(trace, det),
        trace=trace,
        det=det,
        stability=_classify(trace, det),
    )


def sweep_branch(params: wh.WithinHostParams, spec: SweepSpec) -> SweepResult:
    """Trace the equilibrium branches over the sweep range.

    Upper/lower branches hold only the sweep values where the nontrivial
    pair exists; the trivial (infection-free) branch covers every value.
    Raises BracketError-free ValueError if no point of the range admits a
    nontrivial equilibrium.
    """
    upper: list[BranchPoint] = []
    lower: list[BranchPoint] = []
    trivial: list[BranchPoint] = []
    for value in spec.values():
        p, W = spec.resolve(params, max(value, 1e-12) if spec.which == "delta" else value)
        eq = wh.equilibria_fast(p, W)
        T0, P0 = eq.trivial
        trivial.append(_point(float(value), T0, P0, p, W))
        if eq.exists:
            upper.append(_point(float(value), eq.upper[0], eq.upper[1], p, W))
            lower.append(_point(float(value), eq.lower[0], eq.lower[1], p, W))
    if not upper:
        raise ValueError(
            "no nontrivial equilibrium anywhere on the sweep range "
            f"({spec.which} in [{spec.lo}, {spec.hi}])"
        )
    return SweepResult(spec=spec, params=params, upper=upper, lower=lower, trivial=trivial)


def _gamma_of(params: wh.WithinHostParams, spec: SweepSpec, value: float) -> float:
    if spec.which == "delta":
        return params.gamma + value * spec.W
    return params.gamma + params.delta * value


def _param_from_gamma(params: wh.WithinHostParams, spec: SweepSpec, Gamma: float) -> float:
    if spec.which == "delta":
        return (Gamma - params.gamma) / spec.W
    return (Gamma - params.gamma) / params.delta


def detect_events(
    branch: Sequence[BranchPoint],
    params: wh.WithinHostParams,
    spec: SweepSpec,
) -> list[BifurcationEvent]:
    """Scan a branch for fold and Hopf crossings.

    Folds are determinant sign changes; Hopf points are trace sign changes
    with positive determinant. Event parameters are refined on the analytic
    critical loci (closed-form fold, bisected trace-vanishing root) rather
    than interpolated from the sampled branch.
    """
    events: list[BifurcationEvent] = []
    loci = wh.critical_loci(params)
    # the true event can sit up to one grid step beyond the bracketing pair
    # (the branch vanishes past the fold, so the last sampled points straddle
    # the fold only to grid resolution)
    grid_step = (spec.hi - spec.lo) / (spec.n - 1)

    def refine_fold(p_lo: float, p_hi: float) -> float | None:
        p_star = _param_from_gamma(params, spec, loci.Gamma_fold)
        if min(p_lo, p_hi) - grid_step <= p_star <= max(p_lo, p_hi) + grid_step:
            return p_star
        return None

    def refine_hopf(p_lo: float, p_hi: float) -> float | None:
        # pick the analytic trace-zero root inside the bracketing interval
        a, lam, mu = params.alpha, params.Lambda, params.mu

        def trace_cond(G):
            return G - G ** 4 / (a * lam * lam) - mu

        g_lo = _gamma_of(params, spec, min(p_lo, p_hi) - grid_step)
        g_hi = _gamma_of(params, spec, max(p_lo, p_hi) + grid_step)
        for h in loci.hopf:
            if g_lo - 1e-9 <= h.Gamma <= g_hi + 1e-9 and h.valid:
                try:
                    G = find_root(trace_cond, RootBracket(g_lo - 1e-9, g_hi + 1e-9), tol=1e-14)
                except BracketError:
                    G = h.Gamma
                return _param_from_gamma(params, spec, G)
        return None

    for a_pt, b_pt in zip(branch[:-1], branch[1:]):
        if a_pt.det * b_pt.det < 0.0:
            p_star = refine_fold(a_pt.param, b_pt.param)
            if p_star is not None:
                # double root of the equilibrium quadratic at the fold
                P_fold = float(np.sqrt(params.mu / params.alpha))
                T_fold = float(params.Lambda / (2.0 * params.mu))
                events.append(BifurcationEvent(kind="fold", param=p_star, T=T_fold, P=P_fold))
        if a_pt.trace * b_pt.trace < 0.0 and min(a_pt.det, b_pt.det) > 0.0:
            p_star = refine_hopf(a_pt.param, b_pt.param)
            if p_star is not None:
                p, W = spec.resolve(params, p_star)
                eq = wh.equilibria_fast(p, W)
                T, P = eq.upper
                events.append(BifurcationEvent(kind="hopf", param=p_star, T=float(T), P=float(P)))
    return events


def detect_all_events(result: SweepResult) -> list[BifurcationEvent]:
    """Events over the fold-traversing path plus the upper branch."""
    events = detect_events(result.fold_path, result.params, result.spec)
    seen = {(e.kind, round(e.param, 12)) for e in events}
    for e in detect_events(result.upper, result.params, result.spec):
        key = (e.kind, round(e.param, 12))
        if key not in seen:
            events.append(e)
            seen.add(key)
    events.sort(key=lambda e: e.param)
    return events


# ---------------------------------------------------------------------------
# cycle sampling
# ---------------------------------------------------------------------------


def _batched_rk4(rhs, y, t_len, h):
    n = int(round(t_len / h))
    for _ in range(n):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * h * k1)
        k3 = rhs(y + 0.5 * h * k2)
        k4 = rhs(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y


def cycle_amplitude(
    params: wh.WithinHostParams,
    spec: SweepSpec,
    *,
    transient: float = 400.0,
    window: float = 400.0,
    step: float = 0.02,
    collapse_level: float = 1e-6,
) -> list[CycleSample]:
    """Sample the frozen-W fast flow at each sweep value.

    Orbits start slightly off the upper equilibrium (5% in P), run past the
    transient window, then min/max P, strict local maxima, and the mean
    maximum-to-maximum period are recorded over the sampling window. All
    sweep values are integrated together with a batched fixed-step RK4.
    """
    values = spec.values()
    rows: list[tuple[float, float, float, float]] = []  # value, Gamma, T0, P0
    for value in values:
        p, W = spec.resolve(params, max(value, 1e-12) if spec.which == "delta" else value)
        eq = wh.equilibria_fast(p, W)
        if eq.exists:
            T0, P0 = eq.upper[0], eq.upper[1] * 1.05
        else:
            T0, P0 = 0.5 * params.Lambda / params.mu, 2.0 * np.sqrt(params.mu / params.alpha)
        rows.append((float(value), p.gamma_eff(W), T0, P0))

    Gam = np.array([r[1] for r in rows])
    y = np.array([[r[2], r[3]] for r in rows])
    lam, mu, a = params.Lambda, params.mu, params.alpha

    def rhs(state):
        T, P = state[:, 0], state[:, 1]
        infection = a * P * P * T
        return np.stack([lam - mu * T - infection, infection - Gam * P], axis=1)

    y = _batched_rk4(rhs, y, transient, step)

    n_steps = int(round(window / step))
    m = len(rows)
    p_min = y[:, 1].copy()
    p_max = y[:, 1].copy()
    max_count = np.zeros(m, dtype=int)
    first_max_t = np.full(m, np.nan)
    last_max_t = np.full(m, np.nan)
    prev2 = y[:, 1].copy()
    prev1 = y[:, 1].copy()
    for i in range(n_steps):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * step * k1)
        k3 = rhs(y + 0.5 * step * k2)
        k4 = rhs(y + step * k3)
        y = y + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        P = y[:, 1]
        p_min = np.minimum(p_min, P)
        p_max = np.maximum(p_max, P)
        if i >= 2:
            is_max = (prev1 > prev2) & (prev1 > P)
            t_here = (i - 1) * step
            fresh = is_max & np.isnan(first_max_t)
            first_max_t[fresh] = t_here
            last_max_t[is_max] = t_here
            max_count += is_max.astype(int)
        prev2, prev1 = prev1, P.copy()

    samples: list[CycleSample] = []
    for j, (value, _, _, _) in enumerate(rows):
        amp = p_max[j] - p_min[j]
        oscillatory = bool(
            max_count[j] >= 3 and amp > CYCLE_AMPLITUDE_TOL * max(1.0, abs(p_max[j]))
        )
        collapsed = bool(p_max[j] < collapse_level)
        period = None
        if oscillatory and max_count[j] >= 2:
            period = float((last_max_t[j] - first_max_t[j]) / (max_count[j] - 1))
        homoclinic = bool(
            (period is not None and period > HOMOCLINIC_PERIOD)
            or (not oscillatory and not collapsed and amp > CYCLE_AMPLITUDE_TOL and max_count[j] < 3)
        )
        samples.append(
            CycleSample(
                param=value,
                p_min=float(p_min[j]),
                p_max=float(p_max[j]),
                period=period,
                n_maxima=int(max_count[j]),
                oscillatory=oscillatory,
                collapsed=collapsed,
                homoclinic_flag=homoclinic,
            )
        )
    return samples


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------


def branch_to_csv(points: Sequence[BranchPoint], path) -> None:
    """CSV with header ``param,T,P,re_ev1,im_ev1,re_ev2,im_ev2,stability``."""
    with open(path, "w") as fh:
        fh.write("param,T,P,re_ev1,im_ev1,re_ev2,im_ev2,stability\n")
        for pt in points:
            e1, e2 = pt.eigenvalues
            fh.write(
                f"{float(pt.param)!r},{float(pt.T)!r},{float(pt.P)!r},"
                f"{float(e1.real)!r},{float(e1.imag)!r},"
                f"{float(e2.real)!r},{float(e2.imag)!r},{pt.stability}\n"
            )


def events_to_json(events: Sequence[BifurcationEvent]) -> list[dict]:
    return [{"kind": e.kind, "param": e.param, "T": e.T, "P": e.P} for e in events]


def cycles_to_csv(samples: Sequence[CycleSample], path) -> None:
    with open(path, "w") as fh:
        fh.write("param,p_min,p_max,period,n_maxima,oscillatory,collapsed,homoclinic_flag\n")
        for s in samples:
            period = "" if s.period is None else repr(s.period)
            fh.write(
                f"{s.param!r},{s.p_min!r},{s.p_max!r},{period},"
                f"{s.n_maxima},{int(s.oscillatory)},{int(s.collapsed)},{int(s.homoclinic_flag)}\n"
            )


def events_json_dump(events: Sequence[BifurcationEvent], path) -> None:
    with open(path, "w") as fh:
        json.dump(events_to_json(events), fh, indent=2, sort_keys=True)
        fh.write("\n")
