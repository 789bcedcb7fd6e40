"""NEO-IS / NEO-SNIS / plain IS estimators and efficiency diagnostics."""

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import simpson

from .core import DegenerateError, InvalidInputError, NeoError, _lse_unchecked, log_sum_exp
from .orbit import _safe_add, build_orbit
from .transforms import Identity

DEFAULT_CHUNK = 4096


class QuadratureAccuracyError(NeoError):
    pass


@dataclass
class EstimateReport:
    log_Z_hat: float
    n_samples: int
    per_sample_log_Zhat: Optional[np.ndarray] = None
    rel_var_hat: float = float("nan")
    wall_time: float = 0.0
    seed: Optional[tuple] = None
    n_evals: int = 0
    degenerate: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def Z_hat(self):
        return float(np.exp(self.log_Z_hat))


@dataclass
class SnisReport:
    estimate: float
    log_Z_hat: float
    n_samples: int


def _report_from_samples(log_z, t0, rng, n_evals, keep):
    n = log_z.shape[0]
    log_Z = float(_lse_unchecked(log_z) - np.log(n))
    degenerate = not np.isfinite(log_Z)
    if degenerate:
        rel = float("nan")
    else:
        r = np.exp(log_z - log_Z)
        rel = float(np.mean(r * r) - 1.0)
    return EstimateReport(
        log_Z_hat=log_Z,
        n_samples=n,
        per_sample_log_Zhat=log_z if keep else None,
        rel_var_hat=rel,
        wall_time=time.perf_counter() - t0,
        seed=None if rng is None else (rng.seed, rng.stream_id),
        n_evals=n_evals,
        degenerate=degenerate,
    )


def orbit_log_Zhat(target, transform, weights, n, rng, chunk=DEFAULT_CHUNK):
    """Per-sample ``log Zhat_{X^i}`` for ``X^i ~ rho`` together with the evaluation count.

    Draws are made chunk by chunk, so the values depend on ``chunk``.
    """
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    out = np.empty(n)
    evals = 0
    for start in range(0, n, chunk):
        m = min(chunk, n - start)
        x = target.sample_rho(rng, m)
        tab = build_orbit(x, transform, weights, target, keep_points=False)
        out[start:start + m] = tab.log_Zhat
        evals += tab.n_evals
    return out, evals


def neo_is(target, transform, weights, n, rng, keep_samples=True, chunk=DEFAULT_CHUNK):
    """NEO-IS estimate of the normalizing constant from ``n`` orbits."""
    t0 = time.perf_counter()
    log_z, evals = orbit_log_Zhat(target, transform, weights, n, rng, chunk)
    return _report_from_samples(log_z, t0, rng, evals, keep_samples)


def plain_is(target, n, rng, keep_samples=True, chunk=DEFAULT_CHUNK):
    """Importance sampling with the proposal: ``mean L(X^i)``, ``X^i ~ rho``."""
    t0 = time.perf_counter()
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    out = np.empty(n)
    for start in range(0, n, chunk):
        m = min(chunk, n - start)
        out[start:start + m] = target.log_L(target.sample_rho(rng, m))
    return _report_from_samples(out, t0, rng, n, keep_samples)


def neo_snis(target, transform, weights, g, n, rng, chunk=DEFAULT_CHUNK):
    """Self-normalized NEO estimate of ``pi(g)``.

    ``g`` receives positions (the ``q`` block for phase-space targets) of
    shape ``(..., position_dim)`` and returns values of shape ``(...)``.
    """
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    log_z = np.empty(n)
    inner = np.empty(n)
    for start in range(0, n, chunk):
        m = min(chunk, n - start)
        x = target.sample_rho(rng, m)
        tab = build_orbit(x, transform, weights, target, keep_points=False)
        lw = tab.log_out_weights
        log_z[start:start + m] = tab.log_Zhat
        gv = np.asarray(g(target.position(tab.support_points)), dtype=float)
        with np.errstate(invalid="ignore"):
            probs = np.exp(lw - tab.log_Zhat[:, None])
        probs = np.where(np.isfinite(tab.log_Zhat)[:, None], probs, 0.0)
        inner[start:start + m] = np.sum(probs * np.where(probs > 0, gv, 0.0), axis=1)
    log_Z = _lse_unchecked(log_z)
    if not np.isfinite(log_Z):
        raise DegenerateError("all orbits have zero weight")
    outer = np.exp(log_z - log_Z)
    estimate = float(np.sum(outer * inner))
    return SnisReport(estimate=estimate, log_Z_hat=float(log_Z - np.log(n)), n_samples=n)


def estimate_efficiency(target, transform, weights, n, rng, Z_true=None):
    """Monte Carlo ``(E_hat, M_hat)`` for the orbit estimator ``Zhat_X / Z``.

    ``E_hat`` is the sample second moment; ``M_hat`` the sample maximum,
    only a lower bound on the essential supremum. If ``Z_true`` is not
    given (and the target does not know it) the plug-in estimate is used
    and ``plug_in`` is set in the returned dict.
    """
    log_z, _ = orbit_log_Zhat(target, transform, weights, n, rng)
    plug_in = False
    if Z_true is None and getattr(target, "log_Z", None) is not None:
        log_Z = target.log_Z
    elif Z_true is not None:
        log_Z = float(np.log(Z_true))
    else:
        log_Z = float(_lse_unchecked(log_z) - np.log(n))
        plug_in = True
    r = np.exp(log_z - log_Z)
    return {
        "E_hat": float(np.mean(r * r)),
        "E_stderr": float(np.std(r * r, ddof=1) / np.sqrt(n)) if n > 1 else float("nan"),
        "M_hat": float(np.max(r)),
        "M_hat_is_lower_bound": True,
        "plug_in": plug_in,
    }


def analytic_M_bound(target, weights):
    """``sup L * Omega / (varpi_0 Z)`` when the target declares ``sup L`` and ``Z``."""
    if getattr(target, "log_L_sup", None) is None or target.log_Z is None:
        return None
    return float(np.exp(target.log_L_sup - target.log_Z) * weights.omega / weights[0])


def efficiency_curve(target, transform, k_values, gamma_values, n, rng, make_transform=None):
    """Table of ``E_hat`` for the window ``[0, K]`` over a grid of ``K`` and ``gamma``.

    ``make_transform(gamma)`` builds ``(target, transform)`` for each damping
    value; without it ``transform`` is used for all rows. Each row also carries
    the reference ``E_IS(K) = 1 + (E_IS(0) - 1) / (K + 1)`` for averaging
    ``K + 1`` independent plain IS estimates.
    """
    from .core import uniform_window_weights

    base = estimate_efficiency(target if make_transform is None else make_transform(gamma_values[0])[0],
                               Identity(), uniform_window_weights(0), n, rng)
    e_is0 = base["E_hat"]
    rows = []
    for gamma in gamma_values:
        tgt, tr = (target, transform) if make_transform is None else make_transform(gamma)
        for K in k_values:
            eff = estimate_efficiency(tgt, tr, uniform_window_weights(K), n, rng)
            rows.append({
                "K": int(K),
                "gamma": float(gamma),
                "E_hat": eff["E_hat"],
                "E_stderr": eff["E_stderr"],
                "E_IS": 1.0 + (e_is0 - 1.0) / (K + 1),
            })
    return rows


def hoeffding_bound(M_T, n, delta):
    """Deviation bound on ``|Zhat/Z - 1|`` holding with probability ``1 - delta``."""
    if M_T <= 0 or not 0 < delta < 1 or n < 1:
        raise InvalidInputError("need M_T > 0, 0 < delta < 1, n >= 1")
    return M_T * np.sqrt(np.log(2 / delta) / (2 * n))


def mixture_proposal_log_density(y, transform, weights, target):
    """``log rho_T(y)``: log of the weighted mixture of pushforwards of ``rho``.

    Uses ``rho_k(y) = rho(T^{-k} y) J_{T^{-k}}(y)`` accumulated along
    the backward (or forward, for negative ``k``) orbit of ``y``.
    """
    y = np.asarray(y, dtype=float)
    terms = []
    for k, vk in zip(weights.support, weights.values):
        if vk == 0:
            continue
        z = y
        lj = np.zeros(y.shape[:-1])
        for _ in range(abs(int(k))):
            if k > 0:
                lj = lj + transform.log_jacobian_inverse(z)
                z = transform.inverse(z)
            else:
                lj = lj + transform.log_jacobian(z)
                z = transform.forward(z)
        with np.errstate(invalid="ignore"):
            val = np.log(vk) + target.log_rho(z) + lj
        terms.append(np.where(np.isnan(val), -np.inf, val))
    return _lse_unchecked(np.stack(terms, axis=-1), axis=-1) - np.log(weights.omega)


def chi2_bound_check(target_1d, transform, weights, half_width=12.0, n_points=2**14 + 1):
    """Both sides of ``E_T <= D_chi2(pi || rho_T) + 1`` by Simpson quadrature.

    One-dimensional targets with known ``Z``. The grid spans
    ``+-half_width`` proposal standard deviations. Raises
    :class:`QuadratureAccuracyError` when ``rho_T`` does not integrate to
    one within ``1e-4`` on the grid.
    """
    if target_1d.dim != 1:
        raise InvalidInputError("chi2_bound_check is one-dimensional")
    scale = 1.0 if target_1d.rho_var is None else float(np.sqrt(target_1d.rho_var[0]))
    grid = np.linspace(-half_width * scale, half_width * scale, n_points)
    pts = grid[:, None]
    log_rhoT = mixture_proposal_log_density(pts, transform, weights, target_1d)
    mass = simpson(np.exp(log_rhoT), x=grid)
    if abs(mass - 1.0) > 1e-4:
        raise QuadratureAccuracyError(f"rho_T integrates to {mass:.6f} on the grid")
    log_Z = target_1d.log_Z
    log_pi = target_1d.log_target(pts) - log_Z
    chi2_plus_1 = simpson(np.exp(2 * log_pi - log_rhoT), x=grid)
    tab = build_orbit(pts, transform, weights, target_1d, keep_points=False)
    ratio = np.exp(tab.log_Zhat - log_Z)
    E_T = simpson(ratio**2 * np.exp(target_1d.log_rho(pts)), x=grid)
    return float(E_T), float(chi2_plus_1)
