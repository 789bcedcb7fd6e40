"""NEO-MCMC (iterated SIR over orbits), SIR and i-SIR baselines, chain diagnostics.

The kernel is written for a batch of ``C`` independent chains advanced in
lockstep; a single chain is the case ``C = 1``. Every chain in a batch
shares one :class:`~neo.core.RngStream`.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    DegenerateError,
    InvalidInputError,
    NeoError,
    WeightSequence,
    categorical_from_uniform,
    categorical_rows,
    point_mass_weights,
)
from .orbit import build_orbit
from .transforms import Identity, Transform

logger = logging.getLogger(__name__)


class InitializationError(NeoError):
    pass


@dataclass(frozen=True)
class KernelConfig:
    """Settings of the NEO-MCMC kernel.

    ``proposal_mode`` is ``"independent"`` (fresh points from ``rho``) or
    ``"autoregressive"`` (points linked to the conditioning point by the
    ``rho``-reversible kernel ``N(alpha x, sigma2 (1 - alpha^2))``).
    ``sigma2`` defaults to the target's proposal variance. ``prefetch`` is
    the number of steps worth of independent proposals built in one batch.
    """

    n_proposals: int
    weights: WeightSequence
    transform: Transform
    proposal_mode: str = "independent"
    alpha: Optional[float] = None
    sigma2: Optional[object] = None
    prefetch: int = 256

    def __post_init__(self):
        if self.n_proposals < 2:
            raise InvalidInputError("NEO-MCMC needs at least 2 proposals")
        if self.proposal_mode not in ("independent", "autoregressive"):
            raise InvalidInputError(f"unknown proposal_mode {self.proposal_mode!r}")
        if self.proposal_mode == "autoregressive":
            if self.alpha is None or not 0 < self.alpha < 1:
                raise InvalidInputError("autoregressive proposals need alpha in (0, 1)")
        if self.prefetch < 1:
            raise InvalidInputError("prefetch must be >= 1")


@dataclass
class ChainState:
    """Conditioning points, their orbit summaries and the last outputs.

    Arrays carry a leading chain axis ``C``. ``orbit_log_Zhat`` is the
    per-orbit estimate of each conditioning orbit, ``orbit_log_q`` the
    unnormalized log-probabilities ``log(w_k L(T^k y))`` over the weight
    support and ``orbit_points`` the matching points ``T^k y``.
    """

    y: np.ndarray  # (C, D)
    orbit_log_Zhat: np.ndarray  # (C,)
    orbit_log_q: np.ndarray  # (C, s)
    orbit_points: np.ndarray  # (C, s, D)
    u: np.ndarray  # (C, D)
    iter: int
    rng: object
    moved: Optional[np.ndarray] = None  # (C,) conditioning point replaced at last step
    stalled: Optional[np.ndarray] = None
    _buffer: Optional[dict] = None
    _buffer_pos: int = 0

    @property
    def n_chains(self):
        return self.y.shape[0]


@dataclass
class ChainOutput:
    samples: np.ndarray  # (n_iters, D) or (C, n_iters, D)
    conditioning_trace: Optional[np.ndarray]
    acceptance_rate: float
    ess: np.ndarray  # per coordinate


# -- proposals ---------------------------------------------------------------

def ar_proposal_draw(x, alpha, sigma2, rng):
    """``x' = alpha x + sqrt(sigma2 (1 - alpha^2)) xi`` with ``xi`` standard normal."""
    x = np.asarray(x, dtype=float)
    scale = np.sqrt(np.asarray(sigma2, dtype=float) * (1.0 - alpha * alpha))
    return alpha * x + scale * rng.standard_normal(x.shape)


def ar_log_kernel(x, x_new, alpha, sigma2):
    """``log m(x, x')`` for the autoregressive kernel (diagonal covariance)."""
    var = np.broadcast_to(np.asarray(sigma2, dtype=float) * (1 - alpha * alpha), np.shape(x))
    r = np.asarray(x_new) - alpha * np.asarray(x)
    return np.sum(-0.5 * r * r / var - 0.5 * np.log(2 * np.pi * var), axis=-1)


def _ar_sigma2(config, target):
    if config.sigma2 is not None:
        return np.broadcast_to(np.asarray(config.sigma2, dtype=float), (target.dim,))
    if getattr(target, "rho_var", None) is None:
        raise InvalidInputError("autoregressive proposals need a Gaussian proposal variance")
    return np.asarray(target.rho_var, dtype=float)


def _ar_proposals(y, slot, n_proposals, alpha, sigma2, rng):
    """Chains of ``m``-moves to the right and left of each conditioning slot.

    Returns ``X`` of shape ``(C, N, D)`` with ``X[c, slot[c]] = y[c]``. Each
    chain consumes one block of ``N - 1`` innovations: the first
    ``N - 1 - slot`` feed the right side, the rest the left side. The AR(1)
    recursion is unrolled as ``x_r = alpha^r y + sum_i alpha^(r-1-i) e_i``.
    """
    C, D = y.shape
    N = n_proposals
    scale = np.sqrt(np.asarray(sigma2, dtype=float) * (1.0 - alpha * alpha))
    e = scale * rng.standard_normal((C, N - 1, D))
    r = np.arange(N)
    lag = r[:, None] - 1 - r[None, : N - 1]
    with np.errstate(divide="ignore", over="ignore"):
        A = np.where(lag >= 0, float(alpha) ** np.maximum(lag, 0), 0.0)  # (N, N-1)
    powers = float(alpha) ** r
    n_right = N - 1 - slot
    # left innovations start after the right ones
    idx = np.minimum(n_right[:, None] + np.arange(N - 1)[None], N - 2)
    e_left = np.take_along_axis(e, idx[..., None], axis=1)
    base = powers[None, :, None] * y[:, None, :]
    right = base + np.einsum("ri,cid->crd", A, e)
    left = base + np.einsum("ri,cid->crd", A, e_left)
    pos = np.arange(N)[None]
    off = pos - slot[:, None]
    rows = np.arange(C)[:, None]
    X = np.where((off >= 0)[..., None], right[rows, np.abs(off)], left[rows, np.abs(off)])
    return X


def _orbit_summaries(x, config, target):
    tab = build_orbit(x, config.transform, config.weights, target, keep_points=False)
    return tab.log_Zhat, tab.log_out_weights, tab.support_points


def _fresh_independent(state, config, target):
    """Next ``N - 1`` prebuilt independent orbits for every chain."""
    C = state.n_chains
    need = C * (config.n_proposals - 1)
    buf = state._buffer
    if buf is None or state._buffer_pos + need > buf["log_Zhat"].shape[0]:
        m = need * config.prefetch
        x = target.sample_rho(state.rng, m)
        lz, lq, pts = _orbit_summaries(x, config, target)
        buf = {"x": x, "log_Zhat": lz, "log_q": lq, "points": pts}
        state._buffer = buf
        state._buffer_pos = 0
    sl = slice(state._buffer_pos, state._buffer_pos + need)
    state._buffer_pos += need
    shape = (C, config.n_proposals - 1)
    return (
        buf["x"][sl].reshape(shape + buf["x"].shape[1:]),
        buf["log_Zhat"][sl].reshape(shape),
        buf["log_q"][sl].reshape(shape + buf["log_q"].shape[1:]),
        buf["points"][sl].reshape(shape + buf["points"].shape[1:]),
    )


def _assemble(state, config, target):
    """All ``N`` candidates per chain and the slot holding the conditioning point."""
    C = state.n_chains
    N = config.n_proposals
    if config.proposal_mode == "independent":
        fx, flz, flq, fpts = _fresh_independent(state, config, target)
        slot = np.zeros(C, dtype=int)
        X = np.concatenate([state.y[:, None], fx], axis=1)
        LZ = np.concatenate([state.orbit_log_Zhat[:, None], flz], axis=1)
        LQ = np.concatenate([state.orbit_log_q[:, None], flq], axis=1)
        PTS = np.concatenate([state.orbit_points[:, None], fpts], axis=1)
        return X, LZ, LQ, PTS, slot
    slot = state.rng.integers(0, N, size=C)
    X = _ar_proposals(state.y, slot, N, config.alpha, _ar_sigma2(config, target), state.rng)
    fresh = np.ones((C, N), dtype=bool)
    fresh[np.arange(C), slot] = False
    lz, lq, pts = _orbit_summaries(X[fresh], config, target)
    s = lq.shape[-1]
    LZ = np.empty((C, N))
    LQ = np.empty((C, N, s))
    PTS = np.empty((C, N, s, X.shape[-1]))
    LZ[fresh], LQ[fresh], PTS[fresh] = lz, lq, pts
    rows = np.arange(C)
    LZ[rows, slot] = state.orbit_log_Zhat
    LQ[rows, slot] = state.orbit_log_q
    PTS[rows, slot] = state.orbit_points
    return X, LZ, LQ, PTS, slot


def _select(LZ, rng):
    C = LZ.shape[0]
    u = rng.random(C)
    if C == 1:
        return np.array([categorical_from_uniform(LZ[0], u[0])])
    return categorical_rows(LZ, u)


def neo_mcmc_step(state, config, target):
    """One NEO-MCMC iteration for every chain in ``state``; updates it in place.

    Draws the orbit index proportionally to the per-orbit estimates, moves the
    conditioning point, then draws an output point on the conditioning
    orbit with probabilities ``w_k L(T^k y) / Zhat_y``.
    """
    X, LZ, LQ, PTS, slot = _assemble(state, config, target)
    rows = np.arange(state.n_chains)
    fresh_mass = LZ.copy()
    fresh_mass[rows, slot] = -np.inf
    stalled = ~np.isfinite(fresh_mass).any(axis=1)
    if stalled.any():
        logger.debug("NEO-MCMC: %d chain(s) drew only zero-weight proposals", stalled.sum())
    idx = _select(LZ, state.rng)
    state.moved = idx != slot
    state.stalled = stalled
    state.y = X[rows, idx]
    state.orbit_log_Zhat = LZ[rows, idx]
    state.orbit_log_q = LQ[rows, idx]
    state.orbit_points = PTS[rows, idx]
    if state.orbit_log_q.shape[1] == 1:
        k = np.zeros(state.n_chains, dtype=int)
    else:
        k = _select(state.orbit_log_q, state.rng)
    state.u = state.orbit_points[rows, k]
    state.iter += 1
    return state


def isir_step(state, config, target):
    """Iterated SIR step with importance weights ``L(X^i)``.

    Same proposal mechanism and random-number consumption as
    :func:`neo_mcmc_step` with ``varpi = delta_0``, but without orbits.
    """
    C = state.n_chains
    N = config.n_proposals
    if config.proposal_mode == "independent":
        need = C * (N - 1)
        buf = state._buffer
        if buf is None or state._buffer_pos + need > buf["log_L"].shape[0]:
            x = target.sample_rho(state.rng, need * config.prefetch)
            buf = {"x": x, "log_L": target.log_L(x)}
            state._buffer = buf
            state._buffer_pos = 0
        sl = slice(state._buffer_pos, state._buffer_pos + need)
        state._buffer_pos += need
        X = np.concatenate([state.y[:, None], buf["x"][sl].reshape(C, N - 1, -1)], axis=1)
        LZ = np.concatenate(
            [state.orbit_log_Zhat[:, None], buf["log_L"][sl].reshape(C, N - 1)], axis=1
        )
        slot = np.zeros(C, dtype=int)
    else:
        slot = state.rng.integers(0, N, size=C)
        X = _ar_proposals(state.y, slot, N, config.alpha, _ar_sigma2(config, target), state.rng)
        LZ = target.log_L(X)
        LZ[np.arange(C), slot] = state.orbit_log_Zhat
    rows = np.arange(C)
    idx = _select(LZ, state.rng)
    state.moved = idx != slot
    state.y = X[rows, idx]
    state.orbit_log_Zhat = LZ[rows, idx]
    state.orbit_log_q = state.orbit_log_Zhat[:, None]
    state.orbit_points = state.y[:, None]
    state.u = state.y
    state.iter += 1
    return state


# -- initialization and chains ----------------------------------------------

def init_state(config, target, rng, y0=None, n_chains=1, max_attempts=100):
    """Initial state; ``y0`` is drawn from ``rho`` (redrawn while ``Zhat = 0``) if absent."""
    if y0 is None:
        ys = np.empty((n_chains, target.dim))
        ok = np.zeros(n_chains, dtype=bool)
        for _ in range(max_attempts):
            cand = target.sample_rho(rng, n_chains)
            lz, _, _ = _orbit_summaries(cand, config, target)
            good = ~ok & np.isfinite(lz)
            ys[good] = cand[good]
            ok |= good
            if ok.all():
                break
        if not ok.all():
            raise InitializationError("no starting point with positive Zhat found")
    else:
        ys = np.atleast_2d(np.asarray(y0, dtype=float))
        if ys.shape[0] == 1 and n_chains > 1:
            ys = np.repeat(ys, n_chains, axis=0)
    if not np.isfinite(ys).all() or np.isneginf(target.log_rho(ys)).any():
        raise InitializationError("initial point outside the proposal support")
    lz, lq, pts = _orbit_summaries(ys, config, target)
    if not np.isfinite(lz).all():
        raise InitializationError("initial point has Zhat = 0")
    return ChainState(y=ys, orbit_log_Zhat=lz, orbit_log_q=lq, orbit_points=pts,
                      u=ys.copy(), iter=0, rng=rng)


def run_chain(y0, config, target, n_iters, rng, n_chains=1, keep_conditioning=False,
              step=neo_mcmc_step):
    """Run ``n_iters`` steps and collect the output points ``U_1 .. U_n``.

    With ``n_chains > 1`` the chains advance in lockstep and ``samples`` has
    shape ``(n_chains, n_iters, D)``.
    """
    state = init_state(config, target, rng, y0=y0, n_chains=n_chains)
    D = target.dim
    samples = np.empty((n_chains, n_iters, D))
    trace = np.empty((n_chains, n_iters, D)) if keep_conditioning else None
    moved = 0
    for i in range(n_iters):
        step(state, config, target)
        samples[:, i] = state.u
        if keep_conditioning:
            trace[:, i] = state.y
        moved += int(state.moved.sum())
    rate = moved / (n_iters * n_chains) if n_iters else float("nan")
    ess = (np.mean([effective_sample_size(samples[c]) for c in range(n_chains)], axis=0)
           if n_iters > 3 else np.full(D, float(n_iters)))
    if n_chains == 1:
        samples = samples[0]
        trace = None if trace is None else trace[0]
    return ChainOutput(samples=samples, conditioning_trace=trace, acceptance_rate=rate, ess=ess)


def run_isir(y0, config, target, n_iters, rng, **kwargs):
    """i-SIR chain: ``config.weights`` and ``config.transform`` are ignored."""
    cfg = KernelConfig(config.n_proposals, point_mass_weights(), Identity(),
                       config.proposal_mode, config.alpha, config.sigma2, config.prefetch)
    return run_chain(y0, cfg, target, n_iters, rng, step=isir_step, **kwargs)


def sir_sample(target, transform, weights, n, rng, n_draws=None):
    """Sampling importance resampling over ``n`` orbits.

    Returns one point, or ``n_draws`` independent points (each from its own
    set of ``n`` orbits) as an ``(n_draws, D)`` array.
    """
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    m = 1 if n_draws is None else int(n_draws)
    x = target.sample_rho(rng, m * n)
    tab = build_orbit(x, transform, weights, target, keep_points=False)
    LZ = tab.log_Zhat.reshape(m, n)
    if not np.isfinite(LZ).any(axis=1).all():
        raise DegenerateError("all orbits have zero weight")
    i = categorical_rows(LZ, rng.random(m))
    rows = np.arange(m) * n + i
    lq = tab.log_out_weights[rows]
    k = categorical_rows(lq, rng.random(m))
    out = tab.support_points[rows, k]
    return out[0] if n_draws is None else out


def mixing_rate_bound(M_T, n_proposals):
    """Minorization constant ``eps_N`` and contraction ``kappa_N = 1 - eps_N``."""
    if M_T < 1 or n_proposals < 2:
        raise InvalidInputError("need M_T >= 1 and n_proposals >= 2")
    eps = (n_proposals - 1) / (2 * M_T + n_proposals - 2)
    return eps, 1.0 - eps


# -- diagnostics --------------------------------------------------------------

def autocorrelation(x):
    """Normalized autocorrelation of a 1D series via FFT."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n]
    if acov[0] == 0:
        return np.concatenate([[1.0], np.zeros(n - 1)])
    return acov / acov[0]


def effective_sample_size(samples):
    """Per-coordinate ESS with Geyer's initial positive sequence truncation."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    n, D = samples.shape
    out = np.empty(D)
    for j in range(D):
        rho = autocorrelation(samples[:, j])
        tau = -1.0
        for k in range(0, n - 1, 2):
            pair = rho[k] + rho[k + 1]
            if pair <= 0:
                break
            tau += 2 * pair
        out[j] = n / max(tau, 1e-12) if tau > 0 else float(n)
    return out


def mode_occupancy(positions, centers):
    """Fraction of points whose nearest center is each of ``centers``."""
    positions = np.asarray(positions, dtype=float)
    d2 = np.sum((positions[:, None, :] - centers[None]) ** 2, axis=-1)
    nearest = np.argmin(d2, axis=1)
    return np.bincount(nearest, minlength=centers.shape[0]) / positions.shape[0]


def modes_visited(positions, centers, radius=0.5):
    """Boolean per center: some point lies within ``radius`` of it."""
    positions = np.asarray(positions, dtype=float)
    hit = np.zeros(centers.shape[0], dtype=bool)
    for start in range(0, positions.shape[0], 65536):
        chunk = positions[start:start + 65536]
        d2 = np.sum((chunk[:, None, :] - centers[None]) ** 2, axis=-1)
        hit |= (d2 < radius**2).any(axis=0)
    return hit
