"""Invertible transforms with exact inverses and log-Jacobians.

All transforms act on arrays whose last axis is the state dimension; a
leading batch axis is allowed. A row that leaves the finite domain is
returned as non-finite and left for the caller to truncate.
"""

from dataclasses import dataclass

import numpy as np

from .core import InvalidInputError, NeoError


class DivergenceError(NeoError, FloatingPointError):
    """A trajectory produced a non-finite state.

    ``index`` is the first iterate (signed, counted from the start point)
    that was non-finite.
    """

    def __init__(self, index, message=None):
        self.index = index
        super().__init__(message or f"orbit diverged at iterate {index}")


@dataclass(frozen=True)
class PhasePoint:
    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        if q.shape != p.shape or q.ndim != 1:
            raise InvalidInputError("q and p must be 1D vectors of equal length")
        if not (np.isfinite(q).all() and np.isfinite(p).all()):
            raise InvalidInputError("phase point must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def dim(self):
        return self.q.shape[0]

    def as_array(self):
        return np.concatenate([self.q, self.p])

    @classmethod
    def from_array(cls, x):
        x = np.asarray(x, dtype=float)
        d = x.shape[-1] // 2
        return cls(x[:d], x[d:])


@dataclass(frozen=True)
class ConformalParams:
    gamma: float
    h: float
    mass_diag: np.ndarray

    def __post_init__(self):
        mass = np.atleast_1d(np.asarray(self.mass_diag, dtype=float))
        if self.gamma <= 0 or self.h <= 0:
            raise InvalidInputError("gamma and h must be positive")
        if mass.ndim != 1 or (mass <= 0).any():
            raise InvalidInputError("mass_diag must be a positive vector")
        object.__setattr__(self, "mass_diag", mass)

    @property
    def d(self):
        return self.mass_diag.shape[0]

    @classmethod
    def isotropic(cls, d, gamma, h, mass_scale=1.0):
        return cls(gamma, h, np.full(d, float(mass_scale)))


def _se_forward(q, p, params, grad_U):
    with np.errstate(over="ignore", invalid="ignore"):
        p_new = np.exp(-params.h * params.gamma) * p - params.h * grad_U(q)
        q_new = q + params.h * p_new / params.mass_diag
    return q_new, p_new


def _se_inverse(q, p, params, grad_U):
    with np.errstate(over="ignore", invalid="ignore"):
        q_prev = q - params.h * p / params.mass_diag
        p_prev = np.exp(params.gamma * params.h) * (p + params.h * grad_U(q_prev))
    return q_prev, p_prev


def conformal_se_forward(x, params, grad_U):
    """One conformal symplectic Euler step on a :class:`PhasePoint`."""
    q, p = _se_forward(x.q, x.p, params, grad_U)
    if not (np.isfinite(q).all() and np.isfinite(p).all()):
        raise DivergenceError(1)
    return PhasePoint(q, p)


def conformal_se_inverse(x, params, grad_U):
    q, p = _se_inverse(x.q, x.p, params, grad_U)
    if not (np.isfinite(q).all() and np.isfinite(p).all()):
        raise DivergenceError(-1)
    return PhasePoint(q, p)


def conformal_se_log_jacobian(k, params):
    """``log J`` of ``k`` steps; state independent and equal to ``-gamma h d k``."""
    return -params.gamma * params.h * params.d * k


class Transform:
    """Base class: subclasses supply ``forward``, ``inverse`` and ``log_jacobian``.

    ``log_jacobian(x)`` is the log absolute Jacobian determinant of one
    forward step evaluated at ``x`` (one value per row).
    """

    #: set when the one-step log-Jacobian does not depend on the state
    constant_log_jacobian = None

    def forward(self, x):
        raise NotImplementedError

    def inverse(self, x):
        raise NotImplementedError

    def log_jacobian(self, x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], float(self.constant_log_jacobian))

    def log_jacobian_inverse(self, x):
        """Log-Jacobian of one inverse step at ``x``: ``-log J_T(T^{-1} x)``."""
        if self.constant_log_jacobian is not None:
            x = np.asarray(x, dtype=float)
            return np.full(x.shape[:-1], -float(self.constant_log_jacobian))
        return -self.log_jacobian(self.inverse(x))


class Identity(Transform):
    constant_log_jacobian = 0.0

    def forward(self, x):
        return np.array(x, dtype=float, copy=True)

    def inverse(self, x):
        return np.array(x, dtype=float, copy=True)


class AffineMap1D(Transform):
    """``x -> a x + b`` applied coordinatewise (mostly used in one dimension)."""

    def __init__(self, a, b=0.0):
        if a == 0:
            raise InvalidInputError("AffineMap1D needs a != 0")
        self.a = float(a)
        self.b = float(b)

    def forward(self, x):
        with np.errstate(over="ignore", invalid="ignore"):
            return self.a * np.asarray(x, dtype=float) + self.b

    def inverse(self, x):
        with np.errstate(over="ignore", invalid="ignore"):
            return (np.asarray(x, dtype=float) - self.b) / self.a

    def log_jacobian(self, x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], x.shape[-1] * np.log(abs(self.a)))

    def log_jacobian_inverse(self, x):
        return -self.log_jacobian(x)

    def __repr__(self):
        return f"AffineMap1D(a={self.a}, b={self.b})"


class ConformalSymplecticEuler(Transform):
    """Conformal symplectic Euler map on stacked phase states ``[q, p]``.

    ``grad_U`` maps positions of shape ``(..., d)`` to gradients of the same
    shape. It is supplied by the target; the transform itself never
    evaluates a density.
    """

    def __init__(self, params, grad_U):
        self.params = params
        self.grad_U = grad_U
        self.constant_log_jacobian = conformal_se_log_jacobian(1, params)

    @property
    def d(self):
        return self.params.d

    def _split(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != 2 * self.d:
            raise InvalidInputError(
                f"expected phase states with last axis {2 * self.d}, got {x.shape[-1]}"
            )
        return x[..., : self.d], x[..., self.d :]

    def forward(self, x):
        q, p = self._split(x)
        return np.concatenate(_se_forward(q, p, self.params, self.grad_U), axis=-1)

    def inverse(self, x):
        q, p = self._split(x)
        return np.concatenate(_se_inverse(q, p, self.params, self.grad_U), axis=-1)

    def __repr__(self):
        p = self.params
        return f"ConformalSymplecticEuler(gamma={p.gamma}, h={p.h}, d={p.d})"


def iterate(transform, x, k):
    """Apply ``T^k`` to ``x``; negative ``k`` uses the inverse.

    Raises :class:`DivergenceError` carrying the first non-finite iterate.
    """
    k = int(k)
    y = np.asarray(x, dtype=float)
    if k == 0:
        return y
    step = transform.forward if k > 0 else transform.inverse
    sign = 1 if k > 0 else -1
    for i in range(1, abs(k) + 1):
        y = step(y)
        if not np.isfinite(y).all():
            raise DivergenceError(sign * i)
    return y


def iterate_log_jacobian(transform, x, k):
    """``log J_{T^k}(x)`` accumulated along the orbit (cocycle sum)."""
    k = int(k)
    y = np.asarray(x, dtype=float)
    total = np.zeros(y.shape[:-1])
    if k > 0:
        for _ in range(k):
            total = total + transform.log_jacobian(y)
            y = transform.forward(y)
    else:
        for _ in range(-k):
            total = total + transform.log_jacobian_inverse(y)
            y = transform.inverse(y)
    return total


def finite_difference_jacobian(func, x, eps=1e-5):
    """Central-difference Jacobian matrix of ``func`` at a single point ``x``."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    cols = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = eps
        cols.append((np.asarray(func(x + e)) - np.asarray(func(x - e))) / (2 * eps))
    return np.stack(cols, axis=-1)


def check_log_jacobian(transform, x, eps=1e-5):
    """Compare the transform's log-Jacobian with a finite-difference estimate.

    Returns ``(claimed, numerical)`` log absolute determinants at ``x``.
    """
    jac = finite_difference_jacobian(transform.forward, x, eps)
    _, logdet = np.linalg.slogdet(jac)
    claimed = float(np.asarray(transform.log_jacobian(np.asarray(x)[None]))[0])
    return claimed, float(logdet)
