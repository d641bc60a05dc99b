"""Iteration engines: DGD, DSGD, fixed points, couplings, extrapolated runs.

The update is Adapt-then-Combine: every client takes a local (stochastic)
gradient step, then the network averages with W. In stacked form

    Theta_{t+1} = W (Theta_t - gamma (grad F(Theta_t) + E_{t+1}(Theta_t))),

with E = 0 for the deterministic variant. Replicates are vectorized on a
leading axis, and W acts blockwise through batched matmul; no Kronecker
products are materialized. All randomness flows through keyed NoiseStream
objects, so a run is a pure function of its configuration and seed: the
trajectory of replicate r does not depend on how many other replicates are
batched alongside it or on any thread scheduling.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InvalidParamError,
    InvalidStepError,
    NoConvergenceError,
    ShapeMismatchError,
)
from .noise import (
    AdditiveGaussian,
    Minibatch,
    NoiseStream,
    _check_model,
    sample_noise,
    smoothness_constant,
)
from .objectives import LogisticObjectives, ObjectiveSet, _sigmoid
from .stacked import StackedPoint
from .topology import CommMatrix

__all__ = [
    "ALGORITHMS",
    "RunConfig",
    "RunRecord",
    "FixedPointResult",
    "dgd_step",
    "dsgd_step",
    "fixed_point",
    "run",
    "coupled_run",
    "rr_run",
    "default_burn_in",
]

ALGORITHMS = ("dgd", "dsgd", "rr_dgd", "rr_dsgd")
COUPLINGS = ("shared", "independent")


def default_burn_in(gamma: float, mu: float, T: int) -> int:
    """Steps until the deterministic transient is below 1e-6, capped by T."""
    rate = gamma * mu
    if rate >= 1.0:
        burn = 1
    else:
        burn = int(math.ceil(math.log(1e-6) / math.log(1.0 - rate)))
    return min(burn, max(T - 1, 0))


@dataclass(frozen=True)
class RunConfig:
    """Configuration of a simulation run."""

    algorithm: str = "dsgd"
    gamma: float = 1e-3
    T: int = 1000
    seed: int = 0
    replicates: int = 1
    burn_in: int | None = None
    record_every: int = 1
    coupling: str = "shared"

    def __post_init__(self):
        alg = self.algorithm.lower().replace("-", "_")
        object.__setattr__(self, "algorithm", alg)
        if alg not in ALGORITHMS:
            raise InvalidParamError(
                f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}"
            )
        coup = self.coupling.lower()
        object.__setattr__(self, "coupling", coup)
        if coup not in COUPLINGS:
            raise InvalidParamError(
                f"coupling must be one of {COUPLINGS}, got {self.coupling!r}"
            )
        if not (self.gamma > 0.0):
            raise InvalidStepError(f"gamma must be positive, got {self.gamma}")
        if self.T < 0:
            raise InvalidParamError(f"T must be >= 0, got {self.T}")
        if self.replicates < 1:
            raise InvalidParamError(f"replicates must be >= 1, got {self.replicates}")
        if self.record_every < 1:
            raise InvalidParamError(f"record_every must be >= 1, got {self.record_every}")
        if self.burn_in is not None:
            if self.burn_in < 0:
                raise InvalidParamError(f"burn_in must be >= 0, got {self.burn_in}")
            if self.T > 0 and self.burn_in >= self.T:
                raise InvalidParamError(
                    f"burn_in {self.burn_in} must be < T = {self.T}"
                )
            if self.T == 0 and self.burn_in != 0:
                raise InvalidParamError("T = 0 admits only burn_in = 0")

    def resolved_burn_in(self, mu: float) -> int:
        if self.burn_in is not None:
            return self.burn_in
        return default_burn_in(self.gamma, mu, self.T)


@dataclass
class RunRecord:
    """Recorded trajectory statistics of one run (all replicates).

    Per recorded step t (rows) and replicate (columns):
    dist_opt = ||Theta_t - Theta*||, dist_det = ||Theta_t - Theta_det|| when a
    deterministic fixed point was supplied, consensus_err = ||P Theta_t - Theta*||,
    disagreement_norm = ||Q Theta_t||, avg_client_dist = (1/m) sum_i
    ||theta_i^t - theta*|| (the client-averaged metric used for aggregate
    reporting). Stationary sufficient statistics (first and second moments of
    the stacked iterate past burn-in) are accumulated every step, not just at
    recorded ones.
    """

    config: RunConfig
    m: int
    d: int
    theta_star: np.ndarray
    theta_det: np.ndarray | None
    times: np.ndarray
    dist_opt: np.ndarray
    dist_det: np.ndarray | None
    consensus_err: np.ndarray
    disagreement_norm: np.ndarray
    avg_client_dist: np.ndarray
    final: np.ndarray
    stat_count: int
    stat_sum: np.ndarray = field(repr=False)
    stat_outer: np.ndarray = field(repr=False)

    @property
    def replicates(self) -> int:
        return self.final.shape[0]

    def replicate_means(self) -> np.ndarray:
        """(R, m, d) per-replicate time averages past burn-in."""
        if self.stat_count == 0:
            raise InvalidParamError("no stationary samples accumulated (T <= burn_in)")
        return self.stat_sum / self.stat_count

    def replicate_second_moments(self) -> np.ndarray:
        """(R, m*d, m*d) per-replicate time-averaged outer products."""
        if self.stat_count == 0:
            raise InvalidParamError("no stationary samples accumulated (T <= burn_in)")
        return self.stat_outer / self.stat_count

    def to_csv(self, dest) -> None:
        """Write the per-step records: t,replicate,dist_opt,dist_det,consensus_err,disagreement_norm."""
        if isinstance(dest, (str, bytes)):
            fh = open(dest, "w", encoding="utf-8", newline="")
            close = True
        else:
            fh, close = dest, False
        try:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(
                ["t", "replicate", "dist_opt", "dist_det", "consensus_err", "disagreement_norm"]
            )
            R = self.replicates
            for i, t in enumerate(self.times):
                for r in range(R):
                    dd = self.dist_det[i, r] if self.dist_det is not None else float("nan")
                    writer.writerow(
                        [
                            int(t),
                            r,
                            format(self.dist_opt[i, r], ".17g"),
                            format(dd, ".17g"),
                            format(self.consensus_err[i, r], ".17g"),
                            format(self.disagreement_norm[i, r], ".17g"),
                        ]
                    )
        finally:
            if close:
                fh.close()


@dataclass(frozen=True)
class FixedPointResult:
    """Fixed point of the deterministic recursion plus its certificate."""

    point: StackedPoint
    residual: float
    iterations: int


def _warn_large_step(gamma: float, L: float) -> None:
    if gamma > 1.0 / L:
        warnings.warn(
            f"step size gamma={gamma:.3g} exceeds 1/L={1.0 / L:.3g}; "
            "monotone contraction to the fixed point is not guaranteed",
            UserWarning,
            stacklevel=3,
        )


def dgd_step(W: CommMatrix, obj: ObjectiveSet, gamma: float,
             Theta: StackedPoint) -> StackedPoint:
    """One deterministic Adapt-then-Combine update."""
    if not (gamma > 0.0):
        raise InvalidStepError(f"gamma must be positive, got {gamma}")
    _warn_large_step(gamma, obj.L)
    G = obj.grad_stacked(Theta)
    return StackedPoint(Theta.m, Theta.d, W.entries @ (Theta.data - gamma * G.data))


def dsgd_step(W: CommMatrix, obj: ObjectiveSet, noise, gamma: float,
              Theta: StackedPoint, stream: NoiseStream) -> StackedPoint:
    """One stochastic update: local noisy gradient step, then mixing."""
    if not (gamma > 0.0):
        raise InvalidStepError(f"gamma must be positive, got {gamma}")
    _warn_large_step(gamma, obj.L)
    G = obj.grad_stacked(Theta)
    eps = sample_noise(noise, obj, Theta, stream)
    return StackedPoint(
        Theta.m, Theta.d, W.entries @ (Theta.data - gamma * (G.data + eps.data))
    )


def fixed_point(W: CommMatrix, obj: ObjectiveSet, gamma: float,
                tol: float = 1e-10, max_iter: int | None = None) -> FixedPointResult:
    """Iterate the deterministic recursion to its fixed point Theta_det.

    Stops once the per-step displacement is below tol * gamma * mu, which
    pins the fixed-point residual ||(I-W) Theta + gamma W grad F(Theta)|| (equal
    to the displacement) well below tol and makes the reported point's
    accuracy uniform in gamma. The contraction rate is (1 - gamma mu), so the
    default iteration cap scales like 1/(gamma mu).
    """
    if not (gamma > 0.0):
        raise InvalidStepError(f"gamma must be positive, got {gamma}")
    _warn_large_step(gamma, obj.L)
    rate = gamma * obj.mu
    if max_iter is None:
        max_iter = max(1000, int(math.ceil(45.0 / min(rate, 1.0))))
    Th = obj.theta_star_stacked.data.copy()
    thresh = tol * rate
    W_entries = W.entries
    for it in range(1, max_iter + 1):
        G = obj._grad_batch(Th[None])[0]
        nxt = W_entries @ (Th - gamma * G)
        delta = float(np.linalg.norm(nxt - Th))
        Th = nxt
        if delta <= thresh:
            G = obj._grad_batch(Th[None])[0]
            residual = float(np.linalg.norm((Th - W_entries @ (Th - gamma * G))))
            return FixedPointResult(
                point=StackedPoint(obj.m, obj.d, Th), residual=residual, iterations=it
            )
    raise NoConvergenceError(
        f"fixed-point iteration did not reach tol={tol:.1e} within {max_iter} steps "
        f"(last displacement {delta:.3e})"
    )


class _GaussianDraws:
    """Block-prefetched standard-normal draws for a batch of replicates."""

    def __init__(self, streams, width):
        self.streams = streams
        self.width = width
        self.block = -1
        self.buf = None

    def at(self, t: int) -> np.ndarray:
        b, row = divmod(t, self.streams[0].block_size)
        if b != self.block:
            self.buf = np.stack([s.normals_block(b, self.width) for s in self.streams])
            self.block = b
        return self.buf[:, row, :]


class _SubsetDraws:
    """Block-prefetched subset-selection words for a batch of replicates."""

    def __init__(self, streams, width):
        self.streams = streams
        self.width = width
        self.block = -1
        self.buf = None

    def at(self, t: int) -> np.ndarray:
        b, row = divmod(t, self.streams[0].block_size)
        if b != self.block:
            self.buf = np.stack([s.raw_block(b, self.width) for s in self.streams])
            self.block = b
        return self.buf[:, row, :]


class _Chain:
    """One batched chain of the stacked recursion at a fixed step size."""

    def __init__(self, W: CommMatrix, obj: ObjectiveSet, noise, gamma: float,
                 Theta0: np.ndarray, R: int):
        self.W = W.entries
        self.obj = obj
        self.noise = noise
        self.gamma = gamma
        self.Th = np.tile(Theta0[None, :, :], (R, 1, 1))
        if isinstance(noise, Minibatch):
            if not isinstance(obj, LogisticObjectives):
                raise InvalidParamError("minibatch chains need a logistic objective")
            self.X = obj.data
        elif isinstance(noise, AdditiveGaussian):
            self.factors = noise.factors

    def step(self, draw: np.ndarray | None) -> None:
        obj = self.obj
        if self.noise is None:
            G = obj._grad_batch(self.Th)
            drift = G
        elif isinstance(self.noise, AdditiveGaussian):
            G = obj._grad_batch(self.Th)
            z = draw.reshape(draw.shape[0], obj.m, obj.d)
            eps = np.einsum("kij,rkj->rki", self.factors, z)
            drift = G + eps
        else:
            # minibatch: per-sample gradients serve both the mean and the noise
            b = self.noise.batch_size
            z = np.einsum("rkd,knd->rkn", self.Th, self.X)
            s = _sigmoid(z)
            persample = s[..., None] * self.X[None, :, :, :]
            full = persample.mean(axis=2)
            keys = draw.reshape(draw.shape[0], obj.m, obj.n)
            idx = np.argsort(keys, axis=2)[:, :, :b]
            picked = np.take_along_axis(persample, idx[..., None], axis=2)
            sub = picked.mean(axis=2)
            # grad = full + ridge; eps = sub - full; drift = sub + ridge
            drift = sub + obj.lambda_reg * self.Th
        self.Th = np.matmul(self.W, self.Th - self.gamma * drift)


def _make_draws(noise, obj, streams):
    if noise is None:
        return None
    if isinstance(noise, AdditiveGaussian):
        return _GaussianDraws(streams, obj.m * obj.d)
    return _SubsetDraws(streams, obj.m * obj.n)


def _record_metrics(P: np.ndarray, theta_star: np.ndarray,
                    Theta_det: np.ndarray | None):
    """Vectorized distance metrics for a (R, m, d) batch."""
    diff = P - theta_star[None, None, :]
    dist_opt = np.sqrt(np.sum(diff**2, axis=(1, 2)))
    avg = P.mean(axis=1)
    m = P.shape[1]
    consensus = np.sqrt(m * np.sum((avg - theta_star[None, :]) ** 2, axis=1))
    disagree = np.sqrt(np.sum((P - avg[:, None, :]) ** 2, axis=(1, 2)))
    client_avg = np.mean(np.sqrt(np.sum(diff**2, axis=2)), axis=1)
    if Theta_det is None:
        dist_det = None
    else:
        dist_det = np.sqrt(np.sum((P - Theta_det[None, :, :]) ** 2, axis=(1, 2)))
    return dist_opt, dist_det, consensus, disagree, client_avg


def run(W: CommMatrix, obj: ObjectiveSet, noise, config: RunConfig,
        Theta0: StackedPoint, Theta_det: StackedPoint | None = None) -> RunRecord:
    """Execute the configured algorithm for all replicates.

    noise may be None for the deterministic variants. Theta_det, when given,
    adds the distance-to-fixed-point column to the records. Deterministic
    given the configuration: replicate r's draws are keyed by (seed, r, t, k)
    and do not depend on batching or thread count.
    """
    if config.algorithm in ("rr_dgd", "rr_dsgd"):
        return rr_run(W, obj, noise, config, Theta0, Theta_det)
    if config.algorithm == "dsgd" and noise is None:
        raise InvalidParamError("dsgd requires a noise model; use algorithm='dgd' instead")
    if config.algorithm == "dgd":
        noise = None
    if noise is not None:
        _check_model(noise, obj)
    if Theta0.m != obj.m or Theta0.d != obj.d:
        raise ShapeMismatchError(
            f"Theta0 is ({Theta0.m},{Theta0.d}), objective needs ({obj.m},{obj.d})"
        )
    if W.m != obj.m:
        raise ShapeMismatchError(f"W has m={W.m}, objective has m={obj.m}")
    _warn_large_step(config.gamma, obj.L)

    R = config.replicates
    streams = [NoiseStream(config.seed, r) for r in range(R)]
    chain = _Chain(W, obj, noise, config.gamma, Theta0.data, R)
    draws = _make_draws(noise, obj, streams)
    return _drive(
        chains=[chain],
        draw_sources=[draws],
        combine=lambda pts: pts[0],
        obj=obj,
        config=config,
        Theta_det=Theta_det,
    )


def rr_run(W: CommMatrix, obj: ObjectiveSet, noise, config: RunConfig,
           Theta0: StackedPoint, Theta_det: StackedPoint | None = None) -> RunRecord:
    """Two-step-size extrapolated run: records 2 Theta^{gamma/2} - Theta^{gamma}.

    Both chains start from Theta0. With shared coupling (the default) the
    gamma and gamma/2 chains consume the same draws at every step; with
    independent coupling each chain owns disjoint streams.
    """
    if config.algorithm in ("dgd", "dsgd"):
        raise InvalidParamError("rr_run requires an rr_dgd or rr_dsgd configuration")
    if config.algorithm == "rr_dsgd" and noise is None:
        raise InvalidParamError("rr_dsgd requires a noise model")
    if config.algorithm == "rr_dgd":
        noise = None
    if noise is not None:
        _check_model(noise, obj)
    if Theta0.m != obj.m or Theta0.d != obj.d:
        raise ShapeMismatchError(
            f"Theta0 is ({Theta0.m},{Theta0.d}), objective needs ({obj.m},{obj.d})"
        )
    _warn_large_step(config.gamma, obj.L)

    R = config.replicates
    chain_full = _Chain(W, obj, noise, config.gamma, Theta0.data, R)
    chain_half = _Chain(W, obj, noise, config.gamma / 2.0, Theta0.data, R)
    if noise is None:
        sources = [None, None]
    elif config.coupling == "shared":
        streams = [NoiseStream(config.seed, r) for r in range(R)]
        shared = _make_draws(noise, obj, streams)
        sources = [shared, shared]
    else:
        streams_a = [NoiseStream(config.seed, 2 * r) for r in range(R)]
        streams_b = [NoiseStream(config.seed, 2 * r + 1) for r in range(R)]
        sources = [_make_draws(noise, obj, streams_a), _make_draws(noise, obj, streams_b)]
    return _drive(
        chains=[chain_full, chain_half],
        draw_sources=sources,
        combine=lambda pts: 2.0 * pts[1] - pts[0],
        obj=obj,
        config=config,
        Theta_det=Theta_det,
    )


def _drive(chains, draw_sources, combine, obj: ObjectiveSet, config: RunConfig,
           Theta_det: StackedPoint | None) -> RunRecord:
    """Shared driver: advances the chains, records metrics, accumulates moments."""
    theta_star = obj.theta_star
    det_data = Theta_det.data if Theta_det is not None else None
    burn = config.resolved_burn_in(obj.mu)
    T, stride = config.T, config.record_every
    R = config.replicates
    m, d = obj.m, obj.d

    times = []
    rec = {k: [] for k in ("opt", "det", "cons", "dis", "client")}
    stat_sum = np.zeros((R, m, d))
    stat_outer = np.zeros((R, m * d, m * d))
    stat_count = 0

    def record(t, P):
        dist_opt, dist_det, cons, dis, client = _record_metrics(P, theta_star, det_data)
        times.append(t)
        rec["opt"].append(dist_opt)
        rec["det"].append(dist_det)
        rec["cons"].append(cons)
        rec["dis"].append(dis)
        rec["client"].append(client)

    current = combine([c.Th for c in chains])
    record(0, current)
    for t in range(T):
        for c, src in zip(chains, draw_sources):
            c.step(src.at(t) if src is not None else None)
        current = combine([c.Th for c in chains])
        step_idx = t + 1
        if step_idx > burn:
            stat_sum += current
            flat = current.reshape(R, m * d)
            stat_outer += np.einsum("ri,rj->rij", flat, flat)
            stat_count += 1
        if step_idx % stride == 0 or step_idx == T:
            record(step_idx, current)

    dist_det = None
    if det_data is not None:
        dist_det = np.stack(rec["det"])
    return RunRecord(
        config=config,
        m=m,
        d=d,
        theta_star=theta_star.copy(),
        theta_det=det_data.copy() if det_data is not None else None,
        times=np.asarray(times, dtype=int),
        dist_opt=np.stack(rec["opt"]),
        dist_det=dist_det,
        consensus_err=np.stack(rec["cons"]),
        disagreement_norm=np.stack(rec["dis"]),
        avg_client_dist=np.stack(rec["client"]),
        final=current.copy(),
        stat_count=stat_count,
        stat_sum=stat_sum,
        stat_outer=stat_outer,
    )


def coupled_run(W: CommMatrix, obj: ObjectiveSet, noise, gamma: float, T: int,
                Theta0_a: StackedPoint, Theta0_b: StackedPoint, seed: int = 0,
                replicates: int = 1) -> np.ndarray:
    """Synchronously coupled pair of DSGD chains; returns E-hat||A_t - B_t||^2.

    Both chains consume identical noise draws at every step. Requires
    gamma < 2/L for the noise model's own smoothness constant (the coupling
    contraction argument breaks beyond it). The returned array has length
    T + 1 (squared distances averaged over replicates, starting at t=0).
    """
    if noise is None:
        raise InvalidParamError("coupled_run couples stochastic chains; supply a noise model")
    _check_model(noise, obj)
    L = smoothness_constant(noise, obj)
    if not (gamma < 2.0 / L):
        raise InvalidStepError(
            f"coupling requires gamma < 2/L = {2.0 / L:.6g}, got gamma = {gamma:.6g}"
        )
    if Theta0_a.m != obj.m or Theta0_b.m != obj.m:
        raise ShapeMismatchError("initial points must match the objective's client count")
    R = replicates
    streams = [NoiseStream(seed, r) for r in range(R)]
    chain_a = _Chain(W, obj, noise, gamma, Theta0_a.data, R)
    chain_b = _Chain(W, obj, noise, gamma, Theta0_b.data, R)
    draws = _make_draws(noise, obj, streams)
    out = np.empty(T + 1)
    out[0] = float(np.mean(np.sum((chain_a.Th - chain_b.Th) ** 2, axis=(1, 2))))
    for t in range(T):
        draw = draws.at(t)
        chain_a.step(draw)
        chain_b.step(draw)
        out[t + 1] = float(np.mean(np.sum((chain_a.Th - chain_b.Th) ** 2, axis=(1, 2))))
    return out
