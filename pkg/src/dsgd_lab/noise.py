"""Stochastic-gradient noise models and their counter-based random streams.

Two models:

* AdditiveGaussian: block k receives N(0, C_k) independent of the iterate,
* Minibatch: block k is the gradient of a uniformly-without-replacement
  subsample of size b minus the full local gradient (logistic objectives
  only; the ridge term cancels).

Randomness is keyed, not stateful: the draw consumed at step t by client k
of replicate r is a pure function of (seed, replicate, t, k). Streams are
backed by the Philox counter-based generator keyed from those coordinates,
with normals produced by Box-Muller on the raw 64-bit words. This makes
replicated runs reproducible under any scheduling, allows random access by
step, and gives shared-noise couplings for free (two chains reading the same
stream see identical draws).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.random import Philox

from .errors import (
    InvalidParamError,
    NotPositiveSemidefiniteError,
    ShapeMismatchError,
    UnsupportedCombinationError,
)
from .objectives import LogisticObjectives, ObjectiveSet, QuadraticObjectives, _sigmoid
from .stacked import StackedPoint

__all__ = [
    "NoiseStream",
    "AdditiveGaussian",
    "Minibatch",
    "TauEstimate",
    "sample_noise",
    "covariance_at",
    "estimate_tau",
    "smoothness_constant",
]

_MASK = (1 << 64) - 1
_TWO_NEG53 = 2.0**-53
_TWO_PI = 2.0 * np.pi


def _mix64(x: int) -> int:
    """SplitMix64 finalizer; scrambles stream coordinates into key words."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


class NoiseStream:
    """Counter-based random stream for one replicate of one run.

    Draws are organized in blocks of ``block_size`` consecutive steps; the
    block for (purpose, width, block_index) is generated by one Philox call
    keyed on (seed, replicate, purpose, width, block_index) and cached, so
    sequential access costs one generator call per block while random access
    by step stays exact.
    """

    PURPOSE_GAUSS = 1
    PURPOSE_SUBSET = 2

    def __init__(self, seed: int, replicate: int = 0, block_size: int = 512):
        if block_size < 1:
            raise InvalidParamError(f"block_size must be >= 1, got {block_size}")
        self.seed = int(seed)
        self.replicate = int(replicate)
        self.block_size = int(block_size)
        self.step = 0
        self._cache: dict = {}

    def _key(self, purpose: int, width: int, block: int) -> np.ndarray:
        # chain the coordinates through the finalizer instead of xor-folding
        # them: xor is commutative, and (seed, replicate) pairs must not
        # collide under transposition
        k0 = _mix64(_mix64(_mix64(self.seed & _MASK)) ^ _mix64(self.replicate & _MASK))
        k1 = _mix64(_mix64(_mix64(purpose) + width) + block)
        return np.array([k0, k1], dtype=np.uint64)

    def raw_block(self, block: int, width: int) -> np.ndarray:
        """(block_size, width) uint64 words for the subset-selection lane."""
        cache_key = (self.PURPOSE_SUBSET, width, block)
        hit = self._cache.get(cache_key)
        if hit is not None:
            return hit
        ph = Philox(key=self._key(self.PURPOSE_SUBSET, width, block))
        out = ph.random_raw(self.block_size * width).reshape(self.block_size, width)
        self._trim_cache()
        self._cache[cache_key] = out
        return out

    def normals_block(self, block: int, width: int) -> np.ndarray:
        """(block_size, width) standard normals for the Gaussian lane."""
        cache_key = (self.PURPOSE_GAUSS, width, block)
        hit = self._cache.get(cache_key)
        if hit is not None:
            return hit
        pairs = (width + 1) // 2
        ph = Philox(key=self._key(self.PURPOSE_GAUSS, width, block))
        raw = ph.random_raw(self.block_size * pairs * 2).reshape(
            self.block_size, pairs, 2
        )
        # Box-Muller; u1 in (0, 1] so the log stays finite.
        u1 = ((raw[..., 0] >> np.uint64(11)) + np.uint64(1)) * _TWO_NEG53
        u2 = (raw[..., 1] >> np.uint64(11)) * _TWO_NEG53
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty((self.block_size, 2 * pairs))
        z[:, 0::2] = r * np.cos(_TWO_PI * u2)
        z[:, 1::2] = r * np.sin(_TWO_PI * u2)
        out = z[:, :width]
        self._trim_cache()
        self._cache[cache_key] = out
        return out

    def _trim_cache(self) -> None:
        if len(self._cache) >= 8:
            self._cache.pop(next(iter(self._cache)))

    def normals_at(self, t: int, width: int) -> np.ndarray:
        block, row = divmod(t, self.block_size)
        return self.normals_block(block, width)[row]

    def raw_at(self, t: int, width: int) -> np.ndarray:
        block, row = divmod(t, self.block_size)
        return self.raw_block(block, width)[row]

    def seek(self, t: int) -> None:
        self.step = int(t)

    def advance(self) -> int:
        t = self.step
        self.step += 1
        return t


@dataclass(frozen=True)
class AdditiveGaussian:
    """State-independent additive noise: block k is N(0, C_k)."""

    C: np.ndarray  # (m, d, d), per-client PSD covariances

    def __post_init__(self):
        C = np.array(self.C, dtype=float)
        if C.ndim != 3 or C.shape[1] != C.shape[2]:
            raise ShapeMismatchError(f"C must be (m, d, d), got {C.shape}")
        for k in range(C.shape[0]):
            Ck = C[k]
            if np.max(np.abs(Ck - Ck.T)) > 1e-9 * max(np.max(np.abs(Ck)), 1.0):
                raise NotPositiveSemidefiniteError(f"C_{k} is not symmetric")
            w = np.linalg.eigvalsh(0.5 * (Ck + Ck.T))
            if w[0] < -1e-10 * max(abs(w[-1]), 1.0):
                raise NotPositiveSemidefiniteError(
                    f"C_{k} must be PSD; min eigenvalue {w[0]:.3e}"
                )
        C.setflags(write=False)
        object.__setattr__(self, "C", C)

    @classmethod
    def isotropic(cls, m: int, d: int, sigma2: float) -> "AdditiveGaussian":
        if sigma2 < 0.0:
            raise InvalidParamError(f"sigma2 must be >= 0, got {sigma2}")
        return cls(C=np.tile(sigma2 * np.eye(d), (m, 1, 1)))

    @property
    def m(self) -> int:
        return self.C.shape[0]

    @property
    def d(self) -> int:
        return self.C.shape[2]

    @cached_property
    def factors(self) -> np.ndarray:
        """Symmetric square roots S_k with S_k S_k^T = C_k."""
        S = np.empty_like(self.C)
        for k in range(self.m):
            w, V = np.linalg.eigh(0.5 * (self.C[k] + self.C[k].T))
            S[k] = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
        S.setflags(write=False)
        return S


@dataclass(frozen=True)
class Minibatch:
    """Subsample-gradient noise: size-b draws without replacement per client."""

    batch_size: int

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidParamError(f"batch_size must be >= 1, got {self.batch_size}")


NoiseModel = AdditiveGaussian | Minibatch


def _check_model(model, obj: ObjectiveSet) -> None:
    if isinstance(model, AdditiveGaussian):
        if model.m != obj.m or model.d != obj.d:
            raise ShapeMismatchError(
                f"noise model is ({model.m},{model.d}), objective is ({obj.m},{obj.d})"
            )
    elif isinstance(model, Minibatch):
        if isinstance(obj, QuadraticObjectives) or not isinstance(obj, LogisticObjectives):
            raise UnsupportedCombinationError(
                "minibatch noise is defined only for logistic objectives"
            )
        if model.batch_size > obj.n:
            raise InvalidParamError(
                f"batch_size {model.batch_size} exceeds samples per client {obj.n}"
            )
    else:
        raise UnsupportedCombinationError(f"unknown noise model {type(model).__name__}")


def _persample_grads(obj: LogisticObjectives, k: int, theta: np.ndarray) -> np.ndarray:
    """Per-sample gradients of the data term: sigma(<theta, x_i>) x_i, (n, d)."""
    X = obj.data[k]
    return _sigmoid(X @ theta)[:, None] * X


def _minibatch_eps(obj: LogisticObjectives, b: int, Theta: np.ndarray,
                   keys: np.ndarray) -> np.ndarray:
    """Stacked minibatch noise at one step from the subset-selection words."""
    m, d = Theta.shape
    eps = np.empty((m, d))
    for k in range(m):
        G = _persample_grads(obj, k, Theta[k])
        idx = np.argsort(keys[k * obj.n : (k + 1) * obj.n])[:b]
        eps[k] = G[idx].mean(axis=0) - G.mean(axis=0)
    return eps


def sample_noise(model, obj: ObjectiveSet, Theta: StackedPoint,
                 stream: NoiseStream) -> StackedPoint:
    """One draw of the stacked noise E(Theta) at the stream's current step.

    Advances the stream cursor by one step. Use ``stream.seek`` to rewind,
    e.g. to evaluate the same noise realization at two different points.
    """
    _check_model(model, obj)
    if Theta.m != obj.m or Theta.d != obj.d:
        raise ShapeMismatchError(
            f"stacked point ({Theta.m},{Theta.d}) does not match objective "
            f"({obj.m},{obj.d})"
        )
    t = stream.advance()
    if isinstance(model, AdditiveGaussian):
        z = stream.normals_at(t, obj.m * obj.d).reshape(obj.m, obj.d)
        eps = np.einsum("kij,kj->ki", model.factors, z)
    else:
        keys = stream.raw_at(t, obj.m * obj.n)
        eps = _minibatch_eps(obj, model.batch_size, Theta.data, keys)
    return StackedPoint(obj.m, obj.d, eps)


def covariance_at(model, obj: ObjectiveSet, theta) -> np.ndarray:
    """Averaged covariance Cbar(theta) = (1/m) sum_k Cov[eps_k(theta)], exact.

    AdditiveGaussian: (1/m) sum_k C_k independent of theta. Minibatch: the
    finite-population covariance of a without-replacement mean,
    (1 - b/n)/b times the per-sample gradient scatter, averaged over clients.
    """
    _check_model(model, obj)
    if isinstance(model, AdditiveGaussian):
        return model.C.mean(axis=0)
    theta = np.asarray(theta, dtype=float)
    b, n = model.batch_size, obj.n
    factor = (1.0 - b / n) / b
    out = np.zeros((obj.d, obj.d))
    if factor == 0.0:
        return out
    for k in range(obj.m):
        G = _persample_grads(obj, k, theta)
        D = G - G.mean(axis=0)
        out += factor * (D.T @ D) / (n - 1)
    return out / obj.m


@dataclass(frozen=True)
class TauEstimate:
    """Monte-Carlo estimate of a noise moment tau_p, with standard error.

    ``exact`` is filled for the additive Gaussian model, where closed forms
    exist; None otherwise.
    """

    p: int
    value: float
    std_error: float
    exact: float | None = None


def estimate_tau(model, obj: ObjectiveSet, Theta_star: StackedPoint, p: int,
                 n_draws: int = 100_000, seed: int = 0) -> TauEstimate:
    """Estimate tau_p = E[||E(Theta*)||^p]^(1/p) for p in {2, 4}.

    The same seed gives the same draws for p=2 and p=4, so the estimated
    pair always satisfies the Jensen ordering tau_2 <= tau_4. Standard
    errors are delta-method transforms of the mean's standard error.
    """
    if p not in (2, 4):
        raise InvalidParamError(f"p must be 2 or 4, got {p}")
    _check_model(model, obj)
    m, d = obj.m, obj.d
    stream = NoiseStream(seed=seed, replicate=0)
    sq_norms = np.empty(n_draws)
    if isinstance(model, AdditiveGaussian):
        width = m * d
        factors = model.factors
        for start in range(0, n_draws, stream.block_size):
            stop = min(start + stream.block_size, n_draws)
            blk = stream.normals_block(start // stream.block_size, width)
            z = blk[: stop - start].reshape(-1, m, d)
            eps = np.einsum("kij,rkj->rki", factors, z)
            sq_norms[start:stop] = np.sum(eps**2, axis=(1, 2))
    else:
        b, n = model.batch_size, obj.n
        width = m * n
        persample = np.stack(
            [_persample_grads(obj, k, Theta_star.block(k)) for k in range(m)]
        )
        full = persample.mean(axis=1)
        for start in range(0, n_draws, stream.block_size):
            stop = min(start + stream.block_size, n_draws)
            blk = stream.raw_block(start // stream.block_size, width)
            keys = blk[: stop - start].reshape(-1, m, n)
            idx = np.argsort(keys, axis=2)[:, :, :b]
            picked = np.take_along_axis(
                persample[None, :, :, :],
                idx[:, :, :, None],
                axis=2,
            )
            eps = picked.mean(axis=2) - full
            sq_norms[start:stop] = np.sum(eps**2, axis=(1, 2))
    moment = sq_norms if p == 2 else sq_norms**2
    mean = float(np.mean(moment))
    se_mean = float(np.std(moment, ddof=1) / np.sqrt(n_draws))
    value = mean ** (1.0 / p)
    if mean > 0.0:
        std_error = se_mean / (p * mean ** (1.0 - 1.0 / p))
    else:
        std_error = 0.0
    exact = None
    if isinstance(model, AdditiveGaussian):
        traces = np.trace(model.C, axis1=1, axis2=2)
        if p == 2:
            exact = float(np.sqrt(np.sum(traces)))
        else:
            tr = float(np.sum(traces))
            tr_sq = float(sum(np.sum(model.C[k] * model.C[k]) for k in range(m)))
            exact = float((tr**2 + 2.0 * tr_sq) ** 0.25)
    return TauEstimate(p=p, value=value, std_error=std_error, exact=exact)


def smoothness_constant(model, obj: ObjectiveSet) -> float:
    """Smoothness constant of the stochastic gradient map grad F + E.

    The additive model shifts the gradient by a constant, so the objective's
    own L applies. For minibatch noise every subsample-gradient map is
    lambda + max_i ||x_i||^2 / 4 smooth, uniformly over subsets.
    """
    _check_model(model, obj)
    if isinstance(model, AdditiveGaussian):
        return obj.L
    norms = np.linalg.norm(obj.data, axis=2)
    return obj.lambda_reg + 0.25 * float(np.max(norms) ** 2)
