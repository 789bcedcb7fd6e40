"""Orbit tables and NEO weights.

For a start point ``x`` and a weight sequence supported on ``[k_min, k_max]``
the table stores ``a[m] = log rho(T^m x) + log J_{T^m}(x)`` for
``m in [k_min - k_max, k_max - k_min]`` and the log-weights

    log w_k = log varpi_k + a[k] - logsumexp_j(log varpi_j + a[k - j]),

together with the per-orbit estimate ``log Zhat_x = logsumexp_k(log w_k + log L(T^k x))``.
Everything is batched over a leading axis of start points.
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .core import InvalidInputError, NeoError, _lse_unchecked


class InvalidStartError(NeoError, ValueError):
    """Start point has zero proposal density or lies outside the exit set."""


@dataclass
class OrbitTable:
    start: np.ndarray  # (n, D)
    span_lo: int
    span_hi: int
    support: np.ndarray  # (s,) orbit indices k with varpi_k listed
    a: np.ndarray  # (n, span_hi - span_lo + 1)
    log_w: np.ndarray  # (n, s)
    log_L: np.ndarray  # (n, s)
    log_Zhat: np.ndarray  # (n,)
    support_points: np.ndarray  # (n, s, D)
    points: Optional[np.ndarray]  # (n, span, D) when kept
    diverged_fwd: np.ndarray  # (n,) first divergent forward index, 0 if none
    diverged_bwd: np.ndarray  # (n,) first divergent backward index, 0 if none
    n_evals: int

    def __len__(self):
        return self.start.shape[0]

    def a_at(self, m):
        return self.a[:, m - self.span_lo]

    def point(self, k):
        """Points ``T^k(x)`` for every row (``k`` in the stored span)."""
        if self.points is not None:
            return self.points[:, k - self.span_lo]
        pos = np.flatnonzero(self.support == k)
        if pos.size == 0:
            raise KeyError(f"orbit index {k} not stored; build with keep_points=True")
        return self.support_points[:, pos[0]]

    def row(self, i):
        """Single-orbit view as a batch of size one."""
        sl = slice(i, i + 1)
        return OrbitTable(
            start=self.start[sl],
            span_lo=self.span_lo,
            span_hi=self.span_hi,
            support=self.support,
            a=self.a[sl],
            log_w=self.log_w[sl],
            log_L=self.log_L[sl],
            log_Zhat=self.log_Zhat[sl],
            support_points=self.support_points[sl],
            points=None if self.points is None else self.points[sl],
            diverged_fwd=self.diverged_fwd[sl],
            diverged_bwd=self.diverged_bwd[sl],
            n_evals=self.n_evals // max(len(self), 1),
        )

    @property
    def log_out_weights(self):
        """``log(w_k L(T^k x))``: unnormalized output-index probabilities."""
        return _safe_add(self.log_w, self.log_L)


def _safe_add(u, v):
    out = u + v
    return np.where(np.isneginf(u) | np.isneginf(v), -np.inf, out)


def _denominator_index(weights):
    s = weights.support
    lo, _ = weights.span
    # column m - lo for the pair (k, j) with m = k - j
    return (s[:, None] - s[None, :]) - lo


def orbit_log_weights(a, weights):
    """NEO log-weights from a table of ``a[m]`` values.

    ``a`` has shape ``(n, span)`` over ``weights.span``. Returns ``(n, s)``.
    """
    lo, _ = weights.span
    lv = weights.log_values
    s_idx = weights.support - lo
    a_k = a[:, s_idx]
    terms = _safe_add(lv[None, None, :], a[:, _denominator_index(weights)])
    denom = _lse_unchecked(terms, axis=-1)
    num = _safe_add(lv[None, :], a_k)
    with np.errstate(invalid="ignore"):
        log_w = num - denom
    return np.where(np.isneginf(num), -np.inf, log_w)


def _walk(x, transform, steps, direction, in_set=None):
    """Follow the orbit ``steps`` times forward (+1) or backward (-1).

    Returns the visited points ``(n, steps, D)``, cumulative log-Jacobians
    ``(n, steps)``, a validity mask and the first invalid index per row.
    """
    n, D = x.shape
    pts = np.empty((n, steps, D))
    logj = np.empty((n, steps))
    valid = np.empty((n, steps), dtype=bool)
    first_bad = np.zeros(n, dtype=int)
    alive = np.ones(n, dtype=bool)
    y = x
    acc = np.zeros(n)
    const = transform.constant_log_jacobian
    step = transform.forward if direction > 0 else transform.inverse
    for i in range(steps):
        if const is not None:
            acc = acc + direction * const
        elif direction > 0:
            acc = acc + transform.log_jacobian(y)
        else:
            acc = acc + transform.log_jacobian_inverse(y)
        y = step(y)
        finite = np.isfinite(y).all(axis=-1)
        newly = alive & ~finite
        first_bad[newly] = direction * (i + 1)
        alive = alive & finite
        pts[:, i] = y
        logj[:, i] = acc
        valid[:, i] = alive
    return pts, logj, valid, first_bad


def build_orbit(x, transform, weights, target, keep_points=True, exit_set=None,
                require_inside=True):
    """Build orbit tables for one start point or a batch of them.

    Divergent orbit segments and, with ``exit_set``, iterates outside the
    in-set segment ``(tau_-, tau_+)`` get ``a[m] = -inf``.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None]
    n, D = x.shape
    if not np.isfinite(x).all():
        raise InvalidStartError("start points must be finite")
    lo, hi = weights.span
    width = hi
    log_rho0 = target.log_rho(x)
    inside0 = np.ones(n, dtype=bool)
    if exit_set is not None:
        inside0 = exit_set.contains(x)
        if require_inside and not inside0.all():
            raise InvalidStartError("start point outside the exit set")
    if require_inside and np.isneginf(log_rho0[inside0]).any():
        raise InvalidStartError("start point has zero proposal density")

    L = hi - lo + 1
    a = np.full((n, L), -np.inf)
    pts_all = np.empty((n, L, D))
    pts_all[:, -lo] = x
    a[:, -lo] = np.where(inside0, log_rho0, -np.inf)
    div_f = np.zeros(n, dtype=int)
    div_b = np.zeros(n, dtype=int)
    if width > 0:
        for direction in (1, -1):
            pts, logj, valid, bad = _walk(x, transform, width, direction)
            if exit_set is not None:
                # keep only the segment before the first exit
                inside = exit_set.contains(pts) & valid
                valid = np.logical_and.accumulate(inside, axis=1)
            cols = -lo + direction * np.arange(1, width + 1)
            pts_all[:, cols] = pts
            with np.errstate(invalid="ignore"):
                vals = target.log_rho(pts) + logj
            vals = np.where(valid & ~np.isnan(vals), vals, -np.inf)
            a[:, cols] = np.where(inside0[:, None], vals, -np.inf)
            if direction > 0:
                div_f = bad
            else:
                div_b = bad

    log_w = orbit_log_weights(a, weights)
    s_cols = weights.support - lo
    support_points = pts_all[:, s_cols]
    finite_rows = np.isfinite(a[:, s_cols])
    with np.errstate(invalid="ignore", over="ignore"):
        log_L = target.log_L(support_points)
    log_L = np.where(finite_rows & ~np.isnan(log_L), log_L, -np.inf)
    log_Zhat = _lse_unchecked(_safe_add(log_w, log_L), axis=-1)
    return OrbitTable(
        start=x,
        span_lo=lo,
        span_hi=hi,
        support=weights.support,
        a=a,
        log_w=log_w,
        log_L=log_L,
        log_Zhat=log_Zhat,
        support_points=support_points,
        points=pts_all if keep_points else None,
        diverged_fwd=div_f,
        diverged_bwd=div_b,
        n_evals=n * L,
    )


def direct_log_weights(x, transform, weights, target):
    """Reference evaluation of ``w_k = varpi_k rho(T^k x) / (Omega rho_T(T^k x))``.

    ``rho_T(y) = Omega^{-1} sum_j varpi_j rho(T^{-j} y) J_{T^{-j}}(y)`` is
    evaluated from scratch at every ``y = T^k x`` by re-running the inverse
    transform with per-step Jacobians. Independent of :func:`build_orbit`;
    used as a test oracle. Single start point, returns ``(s,)``.
    """
    from .transforms import iterate, iterate_log_jacobian

    x = np.asarray(x, dtype=float)
    out = []
    for k in weights.support:
        y = iterate(transform, x, k)
        terms = []
        for j, vj in zip(weights.support, weights.values):
            if vj == 0:
                continue
            z = iterate(transform, y, -j)
            lj = iterate_log_jacobian(transform, y, -j)
            terms.append(np.log(vj) + target.log_rho(z[None])[0] + float(np.ravel(lj)[0]))
        log_rhoT_times_omega = _lse_unchecked(np.array(terms))
        out.append(np.log(weights[k]) + target.log_rho(y[None])[0] - log_rhoT_times_omega
                   if weights[k] > 0 else -np.inf)
    return np.array(out)


class ExitSet:
    """Open set ``O`` used to truncate orbits. Non-finite points are outside."""

    def contains(self, x):
        raise NotImplementedError


class AllSpace(ExitSet):
    def contains(self, x):
        return np.isfinite(np.asarray(x)).all(axis=-1)


class Box(ExitSet):
    """Open coordinate box ``prod_i (lo_i, hi_i)``."""

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(invalid="ignore"):
            return ((x > self.lo) & (x < self.hi)).all(axis=-1)


class EnergyBall(ExitSet):
    """``{x : energy(x) <= e_max}`` for a user-supplied energy function."""

    def __init__(self, energy, e_max):
        self.energy = energy
        self.e_max = float(e_max)

    def contains(self, x):
        with np.errstate(invalid="ignore", over="ignore"):
            e = self.energy(np.asarray(x, dtype=float))
        return np.isfinite(e) & (e <= self.e_max)


class ExitTimes(NamedTuple):
    tau_minus: int
    tau_plus: int
    capped_minus: bool
    capped_plus: bool


def exit_times(x, transform, exit_set, max_iter):
    """First forward index ``>= 1`` and backward index ``<= -1`` leaving ``O``.

    When no exit happens within ``max_iter`` steps the time is reported as
    ``+-max_iter`` with the matching ``capped_*`` flag set.
    """
    x = np.asarray(x, dtype=float)
    if not exit_set.contains(x[None])[0]:
        raise InvalidStartError("start point outside the exit set")
    if max_iter < 1:
        raise InvalidInputError("max_iter must be >= 1")
    result = []
    for step, sign in ((transform.forward, 1), (transform.inverse, -1)):
        y = x
        tau, capped = sign * max_iter, True
        for i in range(1, max_iter + 1):
            y = step(y)
            if not exit_set.contains(y[None])[0]:
                tau, capped = sign * i, False
                break
        result.append((tau, capped))
    (tp, cp), (tm, cm) = result
    return ExitTimes(tm, tp, cm, cp)


def default_max_iter(weights):
    return 10 * len(weights.values)


def build_orbit_truncated(x, transform, weights, target, exit_set, keep_points=True,
                          require_inside=True):
    """Orbit table restricted to the segment of the orbit inside ``exit_set``.

    With ``require_inside=False`` rows starting outside ``O`` are allowed
    and get ``Zhat = 0``; this is what an estimator of ``int_O f rho`` needs.
    """
    return build_orbit(x, transform, weights, target, keep_points=keep_points,
                       exit_set=exit_set, require_inside=require_inside)
