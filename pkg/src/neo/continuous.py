"""Continuous-time reference implementations: ODE flows, continuous NEO weights, NEIS.

Flows are integrated with fixed-step RK4 on the augmented state
``(x, log J)`` where ``d/dt log J = div b(x)``. Everything is batched over
a leading axis of start points and is deterministic.
"""

import math
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import DegenerateError, InvalidInputError, NeoError, _lse_unchecked, uniform_window_weights
from .estimators import EstimateReport
from .orbit import build_orbit
from .targets import PhaseTarget
from .transforms import ConformalParams, ConformalSymplecticEuler


class FlowDivergenceError(NeoError, FloatingPointError):
    """The integrated trajectory became non-finite; ``time`` is where it was detected."""

    def __init__(self, time, message=None):
        self.time = time
        super().__init__(message or f"flow diverged at t = {time:.6g}")


@dataclass(frozen=True)
class FlowConfig:
    """Vector field ``b`` with its divergence and the reference integrator settings.

    ``drift`` and ``div`` act on batches ``(n, D)``. ``steps_per_unit`` is
    the number of RK4 substeps per unit of time.
    """

    drift: Callable
    div: Callable
    steps_per_unit: int = 200
    t_span: tuple = (-math.inf, math.inf)

    def __post_init__(self):
        if self.steps_per_unit < 1:
            raise InvalidInputError("steps_per_unit must be >= 1")


@dataclass(frozen=True)
class WeightFunction:
    """Nonnegative weight ``omega_c(t)`` vanishing outside ``support``."""

    omega_c: Callable
    support: tuple
    m_ratio: float = 1.0

    @property
    def total(self):
        return integrate_weight(self)


def indicator_weight(t_lo, t_hi):
    """``omega_c = 1`` on ``[t_lo, t_hi]`` (closed), 0 elsewhere."""
    if not t_hi > t_lo:
        raise InvalidInputError("need t_hi > t_lo")
    def omega(t):
        t = np.asarray(t, dtype=float)
        return ((t >= t_lo - 1e-12) & (t <= t_hi + 1e-12)).astype(float)
    return WeightFunction(omega, (float(t_lo), float(t_hi)), 1.0)


def integrate_weight(weight_fn, n=20001):
    lo, hi = weight_fn.support
    t = np.linspace(lo, hi, n)
    return float(np.trapezoid(weight_fn.omega_c(t), t))


def conformal_field(grad_U, gamma, mass_diag, steps_per_unit=200):
    """Dissipative conformal field ``b(q, p) = (M^{-1} p, -grad U(q) - gamma p)``.

    Its divergence is the constant ``-gamma d``.
    """
    mass = np.atleast_1d(np.asarray(mass_diag, dtype=float))
    d = mass.shape[0]

    def drift(x):
        q, p = x[..., :d], x[..., d:]
        return np.concatenate([p / mass, -grad_U(q) - gamma * p], axis=-1)

    def div(x):
        return np.full(np.shape(x)[:-1], -gamma * d)

    return FlowConfig(drift, div, steps_per_unit)


def linear_field(gamma, steps_per_unit=200):
    """``b(x) = -gamma x``; closed form ``phi_t(x) = x e^{-gamma t}``."""
    def drift(x):
        return -gamma * x

    def div(x):
        return np.full(np.shape(x)[:-1], -gamma * np.shape(x)[-1])

    return FlowConfig(drift, div, steps_per_unit)


def _rk4(x, lj, dt, cfg):
    b, dv = cfg.drift, cfg.div
    k1, l1 = b(x), dv(x)
    x2 = x + 0.5 * dt * k1
    k2, l2 = b(x2), dv(x2)
    x3 = x + 0.5 * dt * k2
    k3, l3 = b(x3), dv(x3)
    x4 = x + dt * k3
    k4, l4 = b(x4), dv(x4)
    x_new = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    lj_new = lj + dt / 6.0 * (l1 + 2 * l2 + 2 * l3 + l4)
    return x_new, lj_new


def _advance(x, lj, t, cfg):
    """Integrate every row by time ``t`` (any sign); non-finite rows stay non-finite."""
    if t == 0:
        return x, lj
    n_steps = max(1, math.ceil(abs(t) * cfg.steps_per_unit - 1e-9))
    dt = t / n_steps
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(n_steps):
            x, lj = _rk4(x, lj, dt, cfg)
    return x, lj


def _advance_rows(x, lj, t, cfg):
    """Like :func:`_advance` with a per-row time ``t`` (shape ``(n,)``)."""
    t = np.asarray(t, dtype=float)
    n_steps = max(1, math.ceil(np.max(np.abs(t)) * cfg.steps_per_unit - 1e-9))
    dt = (t / n_steps)[:, None]
    dtl = t / n_steps
    b, dv = cfg.drift, cfg.div
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(n_steps):
            k1, l1 = b(x), dv(x)
            x2 = x + 0.5 * dt * k1
            k2, l2 = b(x2), dv(x2)
            x3 = x + 0.5 * dt * k2
            k3, l3 = b(x3), dv(x3)
            x4 = x + dt * k3
            k4, l4 = b(x4), dv(x4)
            x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            lj = lj + dtl / 6.0 * (l1 + 2 * l2 + 2 * l3 + l4)
    return x, lj


def flow(x, t, config):
    """``(phi_t(x), log J_{phi_t}(x))``; negative ``t`` integrates backward.

    Accepts one point ``(D,)`` or a batch ``(n, D)``. Raises
    :class:`FlowDivergenceError` if any row becomes non-finite.
    """
    lo, hi = config.t_span
    if not lo <= t <= hi:
        raise InvalidInputError(f"t = {t} outside t_span {config.t_span}")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None] if single else x
    lj = np.zeros(xb.shape[0])
    if t != 0:
        n_steps = max(1, math.ceil(abs(t) * config.steps_per_unit - 1e-9))
        dt = t / n_steps
        with np.errstate(over="ignore", invalid="ignore"):
            for i in range(n_steps):
                xb, lj = _rk4(xb, lj, dt, config)
                if not (np.isfinite(xb).all() and np.isfinite(lj).all()):
                    raise FlowDivergenceError((i + 1) * dt)
    if single:
        return xb[0], float(lj[0])
    return xb, lj


def trajectory(x, t_lo, t_hi, step, config):
    """Points and log-Jacobians on the grid ``t_lo, t_lo + step, .., t_hi``.

    ``t_lo <= 0 <= t_hi`` need not hold. The grid is uniform with
    ``round((t_hi - t_lo) / step)`` cells. Returns ``(times, points, log_j)``
    with shapes ``(m,)``, ``(n, m, D)``, ``(n, m)``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n_cells = max(1, int(round((t_hi - t_lo) / step)))
    times = np.linspace(t_lo, t_hi, n_cells + 1)
    dt = times[1] - times[0]
    y, lj = _advance(x, np.zeros(x.shape[0]), t_lo, config)
    pts = np.empty((x.shape[0], n_cells + 1, x.shape[1]))
    ljs = np.empty((x.shape[0], n_cells + 1))
    pts[:, 0], ljs[:, 0] = y, lj
    for j in range(1, n_cells + 1):
        y, lj = _advance(y, lj, dt, config)
        pts[:, j], ljs[:, j] = y, lj
    return times, pts, ljs


def _log_trapezoid(log_vals, dt, axis=-1):
    """``log`` of the trapezoid rule applied to ``exp(log_vals)`` on a uniform grid."""
    m = log_vals.shape[axis]
    c = np.full(m, np.log(dt))
    c[0] = c[-1] = np.log(dt / 2)
    shape = [1] * log_vals.ndim
    shape[axis] = m
    with np.errstate(invalid="ignore"):
        return _lse_unchecked(log_vals + c.reshape(shape), axis=axis)


def continuous_weight(x, t, flow_config, weight_fn, quadrature_step, log_rho):
    """``log w^c_t(x)`` with the denominator by the trapezoid rule in log space.

    The denominator is ``Omega_c rho_T^c(phi_t x) / J_{phi_t}(x)``, that is
    ``int omega_c(t - s) rho(phi_s x) J_{phi_s}(x) ds`` over ``s`` in
    ``[t - T_hi, t - T_lo]``; this is the limit of the discrete orbit weights.
    """
    if quadrature_step <= 0:
        raise InvalidInputError("quadrature_step must be positive")
    x = np.asarray(x, dtype=float)
    lo, hi = weight_fn.support
    om_t = float(weight_fn.omega_c(np.array([t]))[0])
    if om_t == 0:
        return -np.inf
    times, pts, ljs = trajectory(x, t - hi, t - lo, quadrature_step, flow_config)
    with np.errstate(divide="ignore"):
        log_om = np.log(weight_fn.omega_c(t - times))
    a = log_rho(pts[0]) + ljs[0]
    log_den = _log_trapezoid(log_om + a, times[1] - times[0])
    if not np.isfinite(log_den):
        raise DegenerateError("zero denominator in the continuous weight")
    y, lj = flow(x, t, flow_config)
    return float(np.log(om_t) + log_rho(y[None])[0] + lj - log_den)


def continuous_weighted_integral(x, f, flow_config, weight_fn, quadrature_step, log_rho):
    """``int w^c_t(x) f(phi_t x) dt`` for an indicator-type window, by trapezoid rules.

    Uses one trajectory on ``s in [T_lo - T_hi, T_hi - T_lo]``; both the
    outer integral over ``t`` and each denominator are trapezoid sums on the
    same uniform grid, which must divide the window.
    """
    lo, hi = weight_fn.support
    width = hi - lo
    n_cells = int(round(width / quadrature_step))
    if not math.isclose(n_cells * quadrature_step, width, rel_tol=1e-9):
        raise InvalidInputError("quadrature_step must divide the support width")
    times, pts, ljs = trajectory(x, -width, width, quadrature_step, flow_config)
    dt = times[1] - times[0]
    a = log_rho(pts[0]) + ljs[0]
    center = n_cells  # index of s = 0
    t_idx = np.arange(n_cells + 1)  # t = lo + j dt, requires lo = 0 for the shift below
    if lo != 0:
        raise InvalidInputError("windows must start at 0")
    with np.errstate(divide="ignore"):
        log_om = np.log(weight_fn.omega_c(times[center + t_idx]))
    # denominator at t = j dt: s ranges over [t - width, t]
    log_den = np.array([
        _log_trapezoid(a[center + j - n_cells: center + j + 1], dt) for j in t_idx
    ])
    log_w = log_om + a[center + t_idx] - log_den
    vals = np.exp(log_w) * f(pts[0, center + t_idx])
    return float(np.trapezoid(vals, dx=dt))


def theorem9_convergence(x, target_1d, gamma, weight_window_T, h_values, f=None,
                         mass=1.0, oracle_step=None, steps_per_unit=400):
    """Discrete NEO weighted sums versus the continuous-time limit for decreasing ``h``.

    Phase space over a one-dimensional target with the conformal symplectic
    Euler map; ``varpi_k = 1`` for ``k h`` in ``[0, T]``. ``f`` acts on phase
    points and defaults to ``tanh`` of the position. Returns a list of dict
    rows with ``h``, discrete value, continuous value and absolute error.
    """
    if target_1d.dim != 1:
        raise InvalidInputError("theorem9_convergence needs a one-dimensional target")
    if f is None:
        def f(z):
            return np.tanh(z[..., 0])
    h_values = [float(h) for h in h_values]
    if any(h <= 0 for h in h_values) or any(b >= a for a, b in zip(h_values, h_values[1:])):
        raise InvalidInputError("h_values must be positive and strictly decreasing")
    T = float(weight_window_T)
    for h in h_values:
        if not math.isclose(round(T / h) * h, T, rel_tol=1e-9):
            raise InvalidInputError(f"h = {h} does not divide the window length {T}")
    phase = PhaseTarget(target_1d, np.array([float(mass)]))
    x = np.asarray(x, dtype=float)
    cfg = conformal_field(target_1d.grad_U, gamma, phase.mass_diag, steps_per_unit)
    step = oracle_step or min(h_values) / 20
    cont = continuous_weighted_integral(x, f, cfg, indicator_weight(0.0, T), step, phase.log_rho)
    rows = []
    for h in h_values:
        K = int(round(T / h))
        tr = ConformalSymplecticEuler(ConformalParams(gamma, h, phase.mass_diag), target_1d.grad_U)
        tab = build_orbit(x, tr, uniform_window_weights(K), phase, keep_points=False)
        disc = float(np.sum(np.exp(tab.log_w[0]) * f(tab.support_points[0])))
        rows.append({"h": h, "discrete": disc, "continuous": cont, "error": abs(disc - cont)})
    for prev, row in zip(rows, rows[1:]):
        row["ratio"] = prev["error"] / row["error"] if row["error"] > 0 else math.inf
    rows[0]["ratio"] = float("nan")
    return rows


# -- NEIS ---------------------------------------------------------------------

def _bisect_exit(y_in, lj_in, dt_cell, cfg, exit_set, tol):
    """Exit time within a cell for rows inside at the cell start and outside at its end.

    Returns the offset from the cell start and the boundary state.
    """
    lo = np.zeros(y_in.shape[0])
    hi = np.full(y_in.shape[0], abs(dt_cell))
    sign = 1.0 if dt_cell > 0 else -1.0
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        ym, _ = _advance_rows(y_in, lj_in, sign * mid, cfg)
        inside = exit_set.contains(ym)
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    y_b, lj_b = _advance_rows(y_in, lj_in, sign * lo, cfg)
    return lo, y_b, lj_b


def _neis_sweep(x, direction, cfg, exit_set, step, cap, log_rho, log_f, tol):
    """Trapezoid sums of ``rho J`` and ``rho J f`` from ``t = 0`` to the exit time.

    Returns ``(log_den, log_num, exit_time, capped)`` per row.
    """
    n = x.shape[0]
    y = x.copy()
    lj = np.zeros(n)
    g_den = log_rho(y)
    g_num = g_den + log_f(y)
    acc_den = np.full(n, -np.inf)
    acc_num = np.full(n, -np.inf)
    alive = np.ones(n, dtype=bool)
    t_exit = np.full(n, cap)
    n_cells = int(math.ceil(cap / step - 1e-9))
    dt = direction * step
    half = np.log(step / 2)
    for j in range(n_cells):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        y_new, lj_new = _advance(y[idx], lj[idx], dt, cfg)
        inside = exit_set.contains(y_new)
        with np.errstate(invalid="ignore", over="ignore"):
            d_new = log_rho(y_new) + lj_new
            n_new = d_new + log_f(y_new)
        d_new = np.where(inside, d_new, -np.inf)
        n_new = np.where(inside, n_new, -np.inf)
        stay = idx[inside]
        acc_den[stay] = np.logaddexp(acc_den[stay], half + np.logaddexp(g_den[stay], d_new[inside]))
        acc_num[stay] = np.logaddexp(acc_num[stay], half + np.logaddexp(g_num[stay], n_new[inside]))
        leave = idx[~inside]
        if leave.size:
            off, yb, ljb = _bisect_exit(y[leave], lj[leave], dt, cfg, exit_set, tol)
            with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
                db = log_rho(yb) + ljb
                nb = db + log_f(yb)
                lh = np.log(off / 2)
            db = np.where(np.isfinite(yb).all(axis=-1), db, -np.inf)
            nb = np.where(np.isfinite(yb).all(axis=-1), nb, -np.inf)
            ok = off > 0
            acc_den[leave[ok]] = np.logaddexp(acc_den[leave[ok]], lh[ok] + np.logaddexp(g_den[leave[ok]], db[ok]))
            acc_num[leave[ok]] = np.logaddexp(acc_num[leave[ok]], lh[ok] + np.logaddexp(g_num[leave[ok]], nb[ok]))
            t_exit[leave] = j * step + off
            alive[leave] = False
        y[stay], lj[stay] = y_new[inside], lj_new[inside]
        g_den[stay], g_num[stay] = d_new[inside], n_new[inside]
    return acc_den, acc_num, direction * t_exit, alive


def neis_estimate(target, flow_config, exit_set, n, rng, quadrature_step, f=None,
                  time_cap=50.0, bisection_tol=1e-6, chunk=1024):
    """NEIS estimate of ``int_O f rho`` (``f = L`` by default, i.e. ``Z`` restricted to ``O``).

    Each sample's trajectory is followed forward and backward until it
    leaves ``exit_set`` (exit times refined by bisection) or reaches
    ``time_cap``; both time integrals are trapezoid sums at
    ``quadrature_step``. Rows hitting the cap are counted in
    ``extra["n_capped"]``; their contribution is then approximate.
    """
    if quadrature_step <= 0 or n < 1:
        raise InvalidInputError("need quadrature_step > 0 and n >= 1")
    t0 = time.perf_counter()
    if f is None:
        log_f = target.log_L
    else:
        def log_f(z):
            with np.errstate(divide="ignore"):
                return np.log(f(z))
    out = np.empty(n)
    n_capped = 0
    steps = 0
    for start in range(0, n, chunk):
        m = min(chunk, n - start)
        x = target.sample_rho(rng, m)
        inside = exit_set.contains(x)
        vals = np.full(m, -np.inf)
        xi = x[inside]
        if xi.shape[0]:
            den_f, num_f, tp, cap_f = _neis_sweep(xi, 1, flow_config, exit_set, quadrature_step,
                                                  time_cap, target.log_rho, log_f, bisection_tol)
            den_b, num_b, tm, cap_b = _neis_sweep(xi, -1, flow_config, exit_set, quadrature_step,
                                                  time_cap, target.log_rho, log_f, bisection_tol)
            log_den = np.logaddexp(den_f, den_b)
            log_num = np.logaddexp(num_f, num_b)
            with np.errstate(invalid="ignore"):
                vals[inside] = np.where(np.isfinite(log_den), log_num - log_den, -np.inf)
            n_capped += int(np.sum(cap_f | cap_b))
            steps += int(np.sum(np.ceil((tp - tm) / quadrature_step)))
        out[start:start + m] = vals
    log_Z = float(_lse_unchecked(out) - np.log(n))
    if np.isfinite(log_Z):
        r = np.exp(out - log_Z)
        rel = float(np.mean(r * r) - 1.0)
    else:
        rel = float("nan")
    return EstimateReport(
        log_Z_hat=log_Z,
        n_samples=n,
        per_sample_log_Zhat=out,
        rel_var_hat=rel,
        wall_time=time.perf_counter() - t0,
        seed=(rng.seed, rng.stream_id),
        n_evals=steps,
        degenerate=not np.isfinite(log_Z),
        extra={"n_capped": n_capped},
    )
