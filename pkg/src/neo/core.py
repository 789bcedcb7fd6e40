"""Shared numerics: weight sequences, log-domain helpers and seeded random streams."""

from dataclasses import dataclass, field

import numpy as np


class NeoError(Exception):
    """Base class for errors raised by this package."""


class InvalidInputError(NeoError, ValueError):
    pass


class DegenerateError(NeoError):
    """Raised when a set of weights carries no mass."""


def _as_log_array(values):
    arr = np.asarray(values, dtype=float)
    if np.isnan(arr).any():
        raise InvalidInputError("log-domain input contains NaN")
    if np.isposinf(arr).any():
        raise InvalidInputError("log-domain input contains +inf")
    return arr


def log_sum_exp(values, axis=None):
    """Stable ``log(sum(exp(values)))``; all ``-inf`` input gives ``-inf``.

    Works on arrays of any shape when ``axis`` is given, reducing along it.
    """
    arr = _as_log_array(values)
    if arr.size == 0:
        return -np.inf if axis is None else np.full(np.delete(arr.shape, axis), -np.inf)
    m = np.max(arr, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(arr - m_safe), axis=axis, keepdims=True)) + m_safe
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def _lse_unchecked(arr, axis=-1):
    # Hot-path variant without the NaN scan; callers guarantee clean input.
    m = np.max(arr, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(arr - m_safe), axis=axis, keepdims=True)) + m_safe
    return np.squeeze(out, axis=axis)


@dataclass(frozen=True)
class WeightSequence:
    """Finitely supported nonnegative sequence ``varpi_k`` with ``varpi_0 > 0``.

    ``values[i]`` holds ``varpi_{offset + i}``.
    """

    offset: int
    values: tuple
    omega: float = field(init=False)

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if len(vals) == 0:
            raise InvalidInputError("weight sequence must be nonempty")
        if any(not np.isfinite(v) or v < 0 for v in vals):
            raise InvalidInputError("weights must be finite and nonnegative")
        idx0 = -self.offset
        if not 0 <= idx0 < len(vals) or vals[idx0] <= 0:
            raise InvalidInputError("varpi_0 must be strictly positive")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "offset", int(self.offset))
        object.__setattr__(self, "omega", float(sum(vals)))

    @property
    def k_min(self):
        return self.offset

    @property
    def k_max(self):
        return self.offset + len(self.values) - 1

    @property
    def support(self):
        """Integer indices ``k_min .. k_max`` (inclusive) as an array."""
        return np.arange(self.k_min, self.k_max + 1)

    @property
    def log_values(self):
        with np.errstate(divide="ignore"):
            return np.log(np.asarray(self.values))

    def __getitem__(self, k):
        i = k - self.offset
        if 0 <= i < len(self.values):
            return self.values[i]
        return 0.0

    @property
    def span(self):
        """Orbit indices ``(lo, hi)`` needed by the weight denominators."""
        width = self.k_max - self.k_min
        return -width, width

    @property
    def is_point_mass(self):
        return len(self.values) == 1


def uniform_window_weights(k_max):
    """``varpi_k = 1`` on ``[0, k_max]``, zero elsewhere."""
    if int(k_max) != k_max or k_max < 0:
        raise InvalidInputError(f"k_max must be a nonnegative integer, got {k_max}")
    return WeightSequence(0, (1.0,) * (int(k_max) + 1))


def point_mass_weights():
    return uniform_window_weights(0)


class RngStream:
    """Seeded random stream identified by ``(seed, stream_id)``.

    Backed by numpy's PCG64 seeded through ``SeedSequence(seed, spawn_key=(stream_id,))``,
    so every draw is a function of the pair and the draw index. Distinct
    stream ids give independent streams.
    """

    def __init__(self, seed, stream_id=0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def spawn(self, stream_id):
        """A new stream with the same seed and a different id."""
        return RngStream(self.seed, stream_id)

    # thin forwarding so callers can use the stream like a Generator
    def random(self, size=None):
        return self.generator.random(size)

    def standard_normal(self, size=None):
        return self.generator.standard_normal(size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def standard_cauchy(self, size=None):
        return self.generator.standard_cauchy(size)


def _relative_weights(log_weights):
    lw = _as_log_array(log_weights)
    if lw.ndim != 1 or lw.size == 0:
        raise InvalidInputError("log_weights must be a nonempty 1D array")
    if not np.isfinite(lw).any():
        raise DegenerateError("all weights are zero")
    return np.exp(lw - lw.max())


def normalized_probabilities(log_weights):
    p = _relative_weights(log_weights)
    return p / p.sum()


def categorical_from_uniform(log_weights, u):
    """Inverse-CDF selection for a given uniform ``u`` in ``[0, 1)``.

    Returns the lowest index whose cumulative probability exceeds ``u``.
    Zero-probability entries are never selected.
    """
    p = _relative_weights(log_weights)
    cdf = np.cumsum(p)
    i = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    # guard against rounding pushing past the last positive entry
    last = int(np.flatnonzero(p > 0)[-1])
    return min(i, last)


def categorical_draw(log_weights, rng):
    """Draw an index with probability proportional to ``exp(log_weights)``."""
    return categorical_from_uniform(log_weights, rng.random())


def categorical_rows(log_weights, u):
    """Row-wise inverse-CDF draws for a 2D array of log-weights.

    Rows must each have at least one finite entry.
    """
    lw = np.asarray(log_weights, dtype=float)
    m = np.max(lw, axis=1, keepdims=True)
    if not np.isfinite(m).all():
        raise DegenerateError("a row of weights carries no mass")
    p = np.exp(lw - m)
    cdf = np.cumsum(p, axis=1)
    target = np.asarray(u)[:, None] * cdf[:, -1:]
    idx = np.sum(cdf <= target, axis=1)
    last = lw.shape[1] - 1 - np.argmax(p[:, ::-1] > 0, axis=1)
    return np.minimum(idx, last)
