"""Local objectives, their derivatives, and regularity constants.

Two families are supported:

* quadratic: f_k(theta) = 1/2 ||A_k^(1/2) (theta - theta_k*)||^2 with SPD A_k,
* logistic (label-free, ridge-regularized):
  f_k(theta) = (1/n) sum_i log(1 + exp(<theta, x_ki>)) + (lambda/2) ||theta||^2.

Each objective set caches the global optimum theta* of f = (1/m) sum_k f_k,
the strong-convexity and smoothness constants mu and L, the third-derivative
bound K3, and the heterogeneity zeta*^2 = sum_k ||grad f_k(theta*)||^2.

The logistic constants are conservative analytic bounds (mu = lambda, L and
K3 from data norms), not tight estimates: the closed-form predictions consume
upper bounds, and conservative values keep every inequality valid.
"""

from __future__ import annotations

import csv
from functools import cached_property

import numpy as np

from .errors import (
    InvalidParamError,
    NoConvergenceError,
    NotPositiveDefiniteError,
    ShapeMismatchError,
)
from .stacked import StackedPoint

__all__ = [
    "ObjectiveSet",
    "QuadraticObjectives",
    "LogisticObjectives",
    "generate_logistic_problem",
    "export_dataset",
    "load_dataset",
]

#: max |sigma''| for the logistic sigmoid, attained at sigma = (3 +- sqrt3)/6.
SIGMOID_THIRD_BOUND = 1.0 / (6.0 * np.sqrt(3.0))


def _sigmoid(z):
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class ObjectiveSet:
    """Common interface for a set of m local objectives in dimension d.

    Subclasses implement the derivative evaluations; everything here is
    immutable after construction, including the cached global optimum.
    """

    m: int
    d: int
    kind: str

    # subclasses provide: grad_local, hess_local, third_contract_local,
    # _grad_batch, mu, L, K3, and _solve_optimum.

    def _check_client(self, k: int) -> None:
        if not (0 <= k < self.m):
            raise IndexError(f"client index {k} out of range [0, {self.m})")

    def grad_stacked(self, Theta: StackedPoint) -> StackedPoint:
        """Stacked gradient: block k is grad f_k(theta_k)."""
        if Theta.m != self.m or Theta.d != self.d:
            raise ShapeMismatchError(
                f"stacked point ({Theta.m},{Theta.d}) does not match objective "
                f"({self.m},{self.d})"
            )
        G = self._grad_batch(Theta.data[None, :, :])[0]
        return StackedPoint(self.m, self.d, G)

    def solve_global_optimum(self, tol: float = 1e-12) -> np.ndarray:
        """theta* minimizing f = (1/m) sum_k f_k, to gradient norm <= tol."""
        return self._solve_optimum(tol)

    @cached_property
    def theta_star(self) -> np.ndarray:
        theta = self.solve_global_optimum()
        theta.setflags(write=False)
        return theta

    @cached_property
    def theta_star_stacked(self) -> StackedPoint:
        return StackedPoint.replicate(self.theta_star, self.m)

    def mean_hessian(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        H = np.zeros((self.d, self.d))
        for k in range(self.m):
            H += self.hess_local(k, theta)
        return H / self.m

    def heterogeneity(self) -> float:
        """zeta*^2 = sum_k ||grad f_k(theta*)||^2."""
        G = self.grad_stacked(self.theta_star_stacked)
        return float(np.sum(G.data**2))

    @cached_property
    def zeta_star(self) -> float:
        return float(np.sqrt(self.heterogeneity()))


class QuadraticObjectives(ObjectiveSet):
    """f_k(theta) = 1/2 (theta - theta_k*)^T A_k (theta - theta_k*), A_k SPD."""

    kind = "quadratic"

    def __init__(self, A, theta_loc_star):
        A = np.array(A, dtype=float)
        loc = np.array(theta_loc_star, dtype=float)
        if A.ndim != 3 or A.shape[1] != A.shape[2]:
            raise ShapeMismatchError(f"A must be (m, d, d), got {A.shape}")
        if loc.shape != A.shape[:2]:
            raise ShapeMismatchError(
                f"theta_loc_star must be (m, d) = {A.shape[:2]}, got {loc.shape}"
            )
        self.m, self.d = loc.shape
        lam_min = np.empty(self.m)
        lam_max = np.empty(self.m)
        for k in range(self.m):
            Ak = A[k]
            if np.max(np.abs(Ak - Ak.T)) > 1e-9 * max(np.max(np.abs(Ak)), 1.0):
                raise NotPositiveDefiniteError(f"A_{k} is not symmetric")
            w = np.linalg.eigvalsh(0.5 * (Ak + Ak.T))
            lam_min[k], lam_max[k] = w[0], w[-1]
            if w[0] <= 0.0:
                raise NotPositiveDefiniteError(
                    f"A_{k} must be SPD; min eigenvalue {w[0]:.3e}"
                )
        A.setflags(write=False)
        loc.setflags(write=False)
        self.A = A
        self.theta_loc_star = loc
        self.mu = float(np.min(lam_min))
        self.L = float(np.max(lam_max))
        self.K3 = 0.0

    @cached_property
    def Abar(self) -> np.ndarray:
        M = self.A.mean(axis=0)
        M.setflags(write=False)
        return M

    @property
    def theta_loc_star_stacked(self) -> StackedPoint:
        return StackedPoint(self.m, self.d, self.theta_loc_star)

    def grad_local(self, k: int, theta) -> np.ndarray:
        self._check_client(k)
        theta = np.asarray(theta, dtype=float)
        return self.A[k] @ (theta - self.theta_loc_star[k])

    def hess_local(self, k: int, theta=None) -> np.ndarray:
        self._check_client(k)
        return self.A[k].copy()

    def third_contract_local(self, k: int, theta, u) -> np.ndarray:
        self._check_client(k)
        return np.zeros(self.d)

    def value_local(self, k: int, theta) -> float:
        diff = np.asarray(theta, dtype=float) - self.theta_loc_star[k]
        return 0.5 * float(diff @ self.A[k] @ diff)

    def _grad_batch(self, Th: np.ndarray) -> np.ndarray:
        return np.einsum("kij,rkj->rki", self.A, Th - self.theta_loc_star)

    def _solve_optimum(self, tol: float) -> np.ndarray:
        rhs = np.einsum("kij,kj->i", self.A, self.theta_loc_star) / self.m
        return np.linalg.solve(self.Abar, rhs)


class LogisticObjectives(ObjectiveSet):
    """Label-free logistic losses over per-client data with ridge weight lambda."""

    kind = "logistic"

    #: iteration cap for the damped Newton solver
    NEWTON_MAX_ITER = 200

    def __init__(self, data, lambda_reg: float):
        data = np.array(data, dtype=float)
        if data.ndim != 3:
            raise ShapeMismatchError(f"data must be (m, n, d), got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InvalidParamError("data contains non-finite entries")
        if not (lambda_reg > 0.0):
            raise InvalidParamError(f"lambda_reg must be positive, got {lambda_reg}")
        self.m, self.n, self.d = data.shape
        data.setflags(write=False)
        self.data = data
        self.lambda_reg = float(lambda_reg)
        self.mu = float(lambda_reg)
        second_moment_max = 0.0
        for k in range(self.m):
            X = data[k]
            w = np.linalg.eigvalsh(X.T @ X / self.n)
            second_moment_max = max(second_moment_max, float(w[-1]))
        self.L = self.mu + 0.25 * second_moment_max
        norms = np.linalg.norm(data, axis=2)
        self.K3 = float(SIGMOID_THIRD_BOUND * np.max(norms) ** 3)

    def grad_local(self, k: int, theta) -> np.ndarray:
        self._check_client(k)
        theta = np.asarray(theta, dtype=float)
        X = self.data[k]
        s = _sigmoid(X @ theta)
        return X.T @ s / self.n + self.lambda_reg * theta

    def hess_local(self, k: int, theta) -> np.ndarray:
        self._check_client(k)
        theta = np.asarray(theta, dtype=float)
        X = self.data[k]
        s = _sigmoid(X @ theta)
        w = s * (1.0 - s)
        return (X.T * w) @ X / self.n + self.lambda_reg * np.eye(self.d)

    def third_contract_local(self, k: int, theta, u) -> np.ndarray:
        """grad^3 f_k(theta) applied to u (x) u (ridge term contributes 0)."""
        self._check_client(k)
        theta = np.asarray(theta, dtype=float)
        u = np.asarray(u, dtype=float)
        X = self.data[k]
        s = _sigmoid(X @ theta)
        curv = s * (1.0 - s) * (1.0 - 2.0 * s)  # sigma''
        proj = X @ u
        return X.T @ (curv * proj**2) / self.n

    def value_local(self, k: int, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        z = self.data[k] @ theta
        return float(np.mean(np.logaddexp(0.0, z))) + 0.5 * self.lambda_reg * float(
            theta @ theta
        )

    def _grad_batch(self, Th: np.ndarray) -> np.ndarray:
        z = np.einsum("rkd,knd->rkn", Th, self.data)
        s = _sigmoid(z)
        return (
            np.einsum("rkn,knd->rkd", s, self.data) / self.n
            + self.lambda_reg * Th
        )

    def _mean_value(self, theta: np.ndarray) -> float:
        z = np.einsum("d,knd->kn", theta, self.data)
        return float(np.mean(np.logaddexp(0.0, z))) + 0.5 * self.lambda_reg * float(
            theta @ theta
        )

    def _mean_grad(self, theta: np.ndarray) -> np.ndarray:
        z = np.einsum("d,knd->kn", theta, self.data)
        s = _sigmoid(z)
        return (
            np.einsum("kn,knd->d", s, self.data) / (self.m * self.n)
            + self.lambda_reg * theta
        )

    def _solve_optimum(self, tol: float) -> np.ndarray:
        theta = np.zeros(self.d)
        fval = self._mean_value(theta)
        for _ in range(self.NEWTON_MAX_ITER):
            g = self._mean_grad(theta)
            if np.linalg.norm(g) <= tol:
                return theta
            H = self.mean_hessian(theta)
            step = np.linalg.solve(H, g)
            slope = float(g @ step)
            t = 1.0
            while t > 2.0**-40:
                cand = theta - t * step
                cand_val = self._mean_value(cand)
                if cand_val <= fval - 1e-4 * t * slope:
                    theta, fval = cand, cand_val
                    break
                t *= 0.5
            else:
                raise NoConvergenceError("Newton line search stalled")
        g = self._mean_grad(theta)
        if np.linalg.norm(g) <= tol:
            return theta
        raise NoConvergenceError(
            f"Newton did not reach tol={tol:.1e} in {self.NEWTON_MAX_ITER} iterations "
            f"(grad norm {np.linalg.norm(g):.3e})"
        )


def generate_logistic_problem(
    m: int,
    n: int = 50,
    d: int = 2,
    heterogeneity_spread: float = 2.0,
    lambda_reg: float = 0.1,
    seed: int = 0,
) -> LogisticObjectives:
    """Synthetic logistic problem with client-specific data distributions.

    Client k draws n points i.i.d. Gaussian with identity covariance and mean
    spread * (cos(2 pi k / m), sin(2 pi k / m), 0, ...). spread = 0 makes all
    clients statistically identical; growing it separates the local optima.
    Deterministic for a given seed.

    The defaults (n=50, lambda=0.1, spread=2) are this package's choices; the
    experimental setup they mimic leaves them unspecified.
    """
    if m < 1 or n < 1 or d < 1:
        raise InvalidParamError(f"need m, n, d >= 1, got m={m}, n={n}, d={d}")
    if not (lambda_reg > 0.0):
        raise InvalidParamError(f"lambda_reg must be positive, got {lambda_reg}")
    if not np.isfinite(heterogeneity_spread) or heterogeneity_spread < 0.0:
        raise InvalidParamError(
            f"heterogeneity_spread must be finite and >= 0, got {heterogeneity_spread}"
        )
    rng = np.random.default_rng(seed)
    angles = 2.0 * np.pi * np.arange(m) / m
    means = np.zeros((m, d))
    means[:, 0] = np.cos(angles)
    if d >= 2:
        means[:, 1] = np.sin(angles)
    means *= heterogeneity_spread
    data = means[:, None, :] + rng.standard_normal((m, n, d))
    return LogisticObjectives(data=data, lambda_reg=lambda_reg)


def export_dataset(obj: LogisticObjectives, dest) -> None:
    """Write logistic data as CSV: client,index,x_0..x_{d-1} (17 sig digits)."""
    if isinstance(dest, (str, bytes)):
        fh = open(dest, "w", encoding="utf-8", newline="")
        close = True
    else:
        fh, close = dest, False
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["client", "index"] + [f"x_{j}" for j in range(obj.d)])
        for k in range(obj.m):
            for i in range(obj.n):
                writer.writerow(
                    [k, i] + [format(v, ".17g") for v in obj.data[k, i]]
                )
    finally:
        if close:
            fh.close()


def load_dataset(source, lambda_reg: float) -> LogisticObjectives:
    """Read a dataset written by export_dataset back into an objective set."""
    if isinstance(source, (str, bytes)):
        fh = open(source, "r", encoding="utf-8", newline="")
        close = True
    else:
        fh, close = source, False
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["client", "index"]:
            raise InvalidParamError("dataset CSV must start with client,index,x_0,...")
        d = len(header) - 2
        rows = {}
        for row in reader:
            if not row:
                continue
            k, i = int(row[0]), int(row[1])
            rows[(k, i)] = [float(v) for v in row[2:]]
        if not rows:
            raise InvalidParamError("dataset CSV contains no rows")
        m = max(k for k, _ in rows) + 1
        n = max(i for _, i in rows) + 1
        data = np.zeros((m, n, d))
        for (k, i), vec in rows.items():
            if len(vec) != d:
                raise InvalidParamError(f"row ({k},{i}) has {len(vec)} coordinates, expected {d}")
            data[k, i] = vec
        return LogisticObjectives(data=data, lambda_reg=lambda_reg)
    finally:
        if close:
            fh.close()
