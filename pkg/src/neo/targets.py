"""Benchmark targets written as ``pi = rho * L / Z`` with a Gaussian proposal.

Every factory returns a :class:`TargetModel` whose callables accept arrays
of shape ``(..., dim)``. The benchmark densities are normalized, so their
normalizing constant is exactly one.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import InvalidInputError, _lse_unchecked

LOG_2PI = np.log(2 * np.pi)


@dataclass(frozen=True)
class TargetModel:
    """Unnormalized target ``rho(x) L(x)``.

    ``grad_U`` is the gradient of ``U = -log(rho L)``. ``rho_var`` is set
    when ``rho`` is a centered Gaussian with that per-coordinate variance
    (needed by the autoregressive proposal). ``log_L_sup`` is ``log sup L``
    when known.
    """

    name: str
    dim: int
    log_rho: Callable
    sample_rho: Callable
    log_L: Callable
    grad_U: Callable
    log_Z: Optional[float] = None
    log_L_sup: Optional[float] = None
    rho_var: Optional[np.ndarray] = None
    params: dict = field(default_factory=dict)

    @property
    def Z(self):
        return None if self.log_Z is None else float(np.exp(self.log_Z))

    def log_target(self, x):
        """Unnormalized log density ``log rho + log L``."""
        return self.log_rho(x) + self.log_L(x)

    def position(self, x):
        return np.asarray(x)

    @property
    def position_dim(self):
        return self.dim


class PhaseTarget:
    """Momentum augmentation of a :class:`TargetModel`.

    States are stacked ``[q, p]``; the momentum block of the proposal is the
    normalized Gaussian ``N(0, diag(mass))`` and ``L(q, p) = L(q)``, so the
    phase-space normalizing constant equals the base one.
    """

    def __init__(self, base, mass_diag):
        mass = np.broadcast_to(np.asarray(mass_diag, dtype=float), (base.dim,)).copy()
        if (mass <= 0).any():
            raise InvalidInputError("mass must be positive")
        self.base = base
        self.mass_diag = mass
        self.d = base.dim
        self.dim = 2 * base.dim
        self.name = base.name
        self.params = dict(base.params)
        self.log_Z = base.log_Z
        self.log_L_sup = base.log_L_sup
        self._log_norm_p = -0.5 * self.d * LOG_2PI - 0.5 * np.sum(np.log(mass))
        if base.rho_var is not None:
            self.rho_var = np.concatenate([base.rho_var, mass])
        else:
            self.rho_var = None

    Z = TargetModel.Z

    def position(self, x):
        return np.asarray(x)[..., : self.d]

    def momentum(self, x):
        return np.asarray(x)[..., self.d :]

    @property
    def position_dim(self):
        return self.d

    def kinetic(self, p):
        return 0.5 * np.sum(p * p / self.mass_diag, axis=-1)

    def log_rho(self, x):
        x = np.asarray(x, dtype=float)
        q, p = x[..., : self.d], x[..., self.d :]
        with np.errstate(over="ignore", invalid="ignore"):
            return self.base.log_rho(q) - self.kinetic(p) + self._log_norm_p

    def log_L(self, x):
        return self.base.log_L(self.position(x))

    def log_target(self, x):
        return self.log_rho(x) + self.log_L(x)

    def grad_U(self, q):
        """Position gradient used by the conformal transform."""
        return self.base.grad_U(q)

    def sample_rho(self, rng, n):
        q = self.base.sample_rho(rng, n)
        p = np.sqrt(self.mass_diag) * rng.standard_normal((n, self.d))
        return np.concatenate([q, p], axis=-1)


def _gaussian_parts(dim, sigma2):
    if sigma2 <= 0:
        raise InvalidInputError("sigma2 must be positive")
    const = -0.5 * dim * np.log(2 * np.pi * sigma2)
    scale = np.sqrt(sigma2)

    def log_rho(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            return const - 0.5 * np.sum(x * x, axis=-1) / sigma2

    def sample_rho(rng, n):
        return scale * rng.standard_normal((n, dim))

    def grad_neg_log_rho(x):
        return np.asarray(x, dtype=float) / sigma2

    return log_rho, sample_rho, grad_neg_log_rho


def make_gaussian_proposal(dim, sigma2=5.0):
    """Isotropic ``N(0, sigma2 I)`` proposal with ``L = 1`` (so ``Z = 1``)."""
    log_rho, sample_rho, grad = _gaussian_parts(dim, sigma2)
    return TargetModel(
        name="gaussian",
        dim=dim,
        log_rho=log_rho,
        sample_rho=sample_rho,
        log_L=lambda x: np.zeros(np.shape(x)[:-1]),
        grad_U=grad,
        log_Z=0.0,
        log_L_sup=0.0,
        rho_var=np.full(dim, float(sigma2)),
        params={"sigma2": sigma2},
    )


def _from_normalized(name, dim, log_pi, grad_neg_log_pi, sigma2, params):
    log_rho, sample_rho, _ = _gaussian_parts(dim, sigma2)

    def log_L(x):
        with np.errstate(over="ignore", invalid="ignore"):
            out = log_pi(x) - log_rho(x)
        return np.where(np.isnan(out), -np.inf, out)

    return TargetModel(
        name=name,
        dim=dim,
        log_rho=log_rho,
        sample_rho=sample_rho,
        log_L=log_L,
        grad_U=grad_neg_log_pi,
        log_Z=0.0,
        rho_var=np.full(dim, float(sigma2)),
        params=dict(params, sigma2=sigma2),
    )


MG25_GRID = np.arange(-2.0, 3.0)


def _mixture_terms(t, var):
    """Sums over the five modes of ``exp(z - max z)`` and ``(t - mu) exp(z - max z)``.

    ``t`` has shape ``(..., c)`` and ``var`` shape ``(c,)``; ``z`` is the
    Gaussian exponent of each mode. The maximum sits at the nearest grid
    point, so no reduction over modes is needed.
    """
    c = -0.5 / var
    near = np.clip(np.rint(t), MG25_GRID[0], MG25_GRID[-1])
    m = c * (t - near) ** 2
    s = np.zeros_like(t)
    g = np.zeros_like(t)
    for mu in MG25_GRID:
        d = t - mu
        e = np.exp(c * d * d - m)
        s += e
        g += e * d
    return s, g, m


def _mixture_log_density(t, var):
    s, _, m = _mixture_terms(t, var)
    out = np.log(s) + m - 0.5 * np.log(2 * np.pi * var) - np.log(5.0)
    return np.where(np.isfinite(t), out, -np.inf)


def _mixture_grad(t, var):
    """``d/dt`` of minus the log mixture density."""
    s, g, _ = _mixture_terms(t, var)
    return g / s / var


def mg25_covariance(dim, cov_override=None):
    if cov_override is not None:
        cov = np.broadcast_to(np.asarray(cov_override, dtype=float), (dim,)).copy()
    else:
        cov = np.full(dim, 0.1)
        cov[:2] = 0.01
    return cov


def make_mg25(dim, cov_override=None, sigma2=5.0):
    """Equal-weight mixture of 25 Gaussians centred on the ``{-2..2}^2`` grid.

    The means are padded with zeros and the covariance is shared and
    diagonal, so the density factorizes into two one-dimensional five-mode
    mixtures times independent centred Gaussians; this is used for speed.
    """
    if dim < 2:
        raise InvalidInputError("MG25 needs dim >= 2")
    cov = mg25_covariance(dim, cov_override)
    tail_var = cov[2:]
    tail_const = -0.5 * np.sum(np.log(2 * np.pi * tail_var))

    head_var = cov[:2]

    def log_pi(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            head = np.sum(_mixture_log_density(x[..., :2], head_var), axis=-1)
            tail = x[..., 2:]
            return head + tail_const - 0.5 * np.sum(tail * tail / tail_var, axis=-1)

    def grad_U(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            return np.concatenate([_mixture_grad(x[..., :2], head_var), x[..., 2:] / tail_var],
                                  axis=-1)

    target = _from_normalized(
        "mg25", dim, log_pi, grad_U, sigma2, {"cov": cov.tolist()}
    )
    return target


def mg25_means(dim):
    ii, jj = np.meshgrid(MG25_GRID, MG25_GRID, indexing="ij")
    mu = np.zeros((25, dim))
    mu[:, 0] = ii.ravel()
    mu[:, 1] = jj.ravel()
    return mu


def mg25_log_density_direct(x, dim, cov_override=None):
    """Direct 25-term evaluation of the MG25 log density (test oracle)."""
    cov = mg25_covariance(dim, cov_override)
    x = np.asarray(x, dtype=float)
    diff = x[..., None, :] - mg25_means(dim)
    logc = -0.5 * np.sum(diff * diff / cov, axis=-1) - 0.5 * np.sum(np.log(2 * np.pi * cov))
    return _lse_unchecked(logc, axis=-1) - np.log(25.0)


def make_funnel(dim, a=1.0, b=0.5, sigma2=5.0):
    """Neal's funnel: ``x_1 ~ N(0, a^2)``, ``x_i | x_1 ~ N(0, exp(2 b x_1))`` for i >= 2."""
    if dim < 2:
        raise InvalidInputError("funnel needs dim >= 2")
    if a <= 0:
        raise InvalidInputError("funnel needs a > 0")
    m = dim - 1

    def log_pi(x):
        x = np.asarray(x, dtype=float)
        x1 = x[..., 0]
        rest = x[..., 1:]
        with np.errstate(over="ignore", invalid="ignore"):
            out = (
                -0.5 * LOG_2PI
                - np.log(a)
                - 0.5 * x1 * x1 / a**2
                - 0.5 * m * LOG_2PI
                - m * b * x1
                - 0.5 * np.sum(rest * rest, axis=-1) * np.exp(-2 * b * x1)
            )
        return out

    def grad_U(x):
        x = np.asarray(x, dtype=float)
        x1 = x[..., 0]
        rest = x[..., 1:]
        with np.errstate(over="ignore", invalid="ignore"):
            prec = np.exp(-2 * b * x1)
            g1 = x1 / a**2 + m * b - b * prec * np.sum(rest * rest, axis=-1)
            g_rest = rest * prec[..., None]
        return np.concatenate([g1[..., None], g_rest], axis=-1)

    return _from_normalized("funnel", dim, log_pi, grad_U, sigma2, {"a": a, "b": b})


def cauchy_pdf(x, mu, sigma):
    return 1.0 / (np.pi * sigma * (1.0 + ((x - mu) / sigma) ** 2))


def make_cauchy_mixture(dim, mu=5.0, sigma=1.0, sigma2=5.0):
    """Product over coordinates of ``(Cauchy(mu, sigma) + Cauchy(-mu, sigma)) / 2``."""
    if sigma <= 0:
        raise InvalidInputError("sigma must be positive")
    centers = np.array([mu, -mu])

    def comps(x):
        diff = np.asarray(x, dtype=float)[..., None] - centers
        logc = -np.log(np.pi * sigma) - np.log1p((diff / sigma) ** 2)
        return diff, logc

    def log_pi(x):
        with np.errstate(over="ignore", invalid="ignore"):
            _, logc = comps(x)
            per = _lse_unchecked(logc, axis=-1) - np.log(2.0)
        return np.sum(per, axis=-1)

    def grad_U(x):
        with np.errstate(over="ignore", invalid="ignore"):
            diff, logc = comps(x)
            resp = np.exp(logc - _lse_unchecked(logc, axis=-1)[..., None])
            g = resp * 2 * diff / (sigma**2 + diff * diff)
        return np.sum(g, axis=-1)

    return _from_normalized(
        "cauchy_mixture", dim, log_pi, grad_U, sigma2, {"mu": mu, "sigma": sigma}
    )


def make_gaussian_L_1d():
    """``rho = N(0, 1)``, ``L(x) = exp(-x^2 / 2)``.

    Then ``Z = 1/sqrt(2)``, ``pi = N(0, 1/2)``, ``sup L = 1`` and
    ``E_rho[(L/Z)^2] = 2/sqrt(3)``.
    """
    log_rho, sample_rho, _ = _gaussian_parts(1, 1.0)

    def log_L(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            return -0.5 * np.sum(x * x, axis=-1)

    def grad_U(x):
        return 2.0 * np.asarray(x, dtype=float)

    return TargetModel(
        name="gaussian_L_1d",
        dim=1,
        log_rho=log_rho,
        sample_rho=sample_rho,
        log_L=log_L,
        grad_U=grad_U,
        log_Z=-0.5 * np.log(2.0),
        log_L_sup=0.0,
        rho_var=np.ones(1),
    )


GAUSSIAN_L_1D_Z = 1 / np.sqrt(2.0)
GAUSSIAN_L_1D_SECOND_MOMENT = 2 / np.sqrt(3.0)


def make_target(name, dim, **params):
    """Factory by name, used by the command-line runner."""
    factories = {
        "mg25": make_mg25,
        "funnel": make_funnel,
        "cauchy_mixture": make_cauchy_mixture,
        "gaussian": make_gaussian_proposal,
    }
    if name == "gaussian_L_1d":
        return make_gaussian_L_1d()
    if name not in factories:
        raise InvalidInputError(f"unknown target {name!r}")
    return factories[name](dim, **params)


def phase_transform(target, gamma, h, mass_scale=1.0):
    """Wrap ``target`` in momentum space and build the matching conformal map."""
    from .transforms import ConformalParams, ConformalSymplecticEuler

    phase = PhaseTarget(target, mass_scale)
    params = ConformalParams(gamma, h, phase.mass_diag)
    return phase, ConformalSymplecticEuler(params, phase.grad_U)
