"""Closed-form predictions and explicit error bounds for decentralized (S)GD.

The deterministic fixed point of gossip descent has an exact expression for
quadratic objectives and a first-order expansion in the step size for general
smooth strongly convex ones.  This module evaluates those predictions, the
explicit bounds controlling their accuracy, the first-order stationary
variance and stochastic bias, the term-by-term diagnostics of the
non-asymptotic convergence bound, and step-size/horizon recommendations.

All block operators act on stacked (m, d) arrays and are applied blockwise;
nothing of size (m*d)^2 is materialized.  The only dense inverses are d x d:
the consensus-averaging operator has rank d, so the md-dimensional resolvent
reduces to a d x d core via the Woodbury identity, and the remaining resolvent
is summed as a Neumann series (geometric within the admissible step range).
"""

import csv
import math
from dataclasses import dataclass, fields
from typing import NamedTuple, Optional

import numpy as np

from .errors import (
    InvalidParamError,
    InvalidStepError,
    SingularMatrixError,
    StepTooLargeError,
    UnsupportedCombinationError,
)
from .matops import sylvester_solve
from .noise import covariance_at, estimate_tau
from .objectives import ObjectiveSet
from .stacked import StackedPoint
from .topology import CommMatrix, gossip_operator

_NEUMANN_MAX_ITER = 400
_NEUMANN_RTOL = 1e-15


def _require_positive_step(gamma: float) -> None:
    if not (gamma > 0.0):
        raise InvalidStepError(f"step size must be positive, got {gamma!r}")


def _require_step_at_most(gamma: float, limit: float, inequality: str) -> None:
    _require_positive_step(gamma)
    if gamma > limit:
        raise StepTooLargeError(
            f"gamma = {gamma:g} violates {inequality} = {limit:g}"
        )


def _standard_limit(L: float, Lambda: float, frac: float = 1.0) -> float:
    """min(1/(Lambda L), frac/L); the Lambda term drops out when Lambda = 0."""
    lim = frac / L
    if Lambda > 0.0:
        lim = min(lim, 1.0 / (Lambda * L))
    return lim


def _resolve_m(obj: ObjectiveSet, m) -> int:
    if m is None:
        return obj.m
    m = int(m)
    if m < 1:
        raise InvalidParamError(f"client count must be >= 1, got {m}")
    return m


class _BlockOps:
    """Blockwise actions of the operators built from W and Hessians at theta*.

    G is the m x m gossip operator applied to client blocks; A multiplies
    block k by the k-th Hessian; h is the d-dimensional core of the
    consensus-averaging operator H (H X replicates h(X) to every block).
    """

    def __init__(self, W: CommMatrix, hessians: np.ndarray, mean_hessian,
                 gamma: float):
        self.G = gossip_operator(W)
        self.A = hessians
        self.Abar = np.asarray(mean_hessian, dtype=float)
        self.gamma = gamma
        self.m, self.d = hessians.shape[:2]

    def apply_GA(self, X: np.ndarray) -> np.ndarray:
        return self.G @ np.einsum("kij,kj->ki", self.A, X)

    def apply_B(self, v: np.ndarray) -> np.ndarray:
        """(I + gamma G A)^{-1} G A v via the Neumann series.

        Within the admissible step range ||gamma G A|| < 1/2, so the series
        converges geometrically.
        """
        z = self.apply_GA(v)
        acc = z.copy()
        term = z
        if not np.any(z):
            return acc
        for _ in range(_NEUMANN_MAX_ITER):
            term = -self.gamma * self.apply_GA(term)
            acc += term
            if np.linalg.norm(term) <= _NEUMANN_RTOL * max(
                np.linalg.norm(acc), 1e-300
            ):
                return acc
        raise SingularMatrixError(
            "resolvent series for (I + gamma G A) did not converge; the step "
            "size is too close to the invertibility limit"
        )

    def h(self, X: np.ndarray) -> np.ndarray:
        """Core of H: solve Abar y = mean_k A_k x_k."""
        rhs = np.einsum("kij,kj->ki", self.A, X).mean(axis=0)
        try:
            return np.linalg.solve(self.Abar, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularMatrixError("mean Hessian is singular") from exc

    def lift(self, y: np.ndarray) -> np.ndarray:
        return np.tile(y, (self.m, 1))


class QuadFixedPoint(NamedTuple):
    theta_det: StackedPoint
    consensus_part: StackedPoint
    disagreement_part: StackedPoint


def quad_exact_fixed_point(W: CommMatrix, quad, gamma: float) -> QuadFixedPoint:
    """Exact fixed point of deterministic gossip descent on quadratics.

    Evaluates Theta_det = Theta* + gamma (I - H)(I - gamma B H)^{-1} B
    (Theta*_loc - Theta*), together with its consensus and disagreement
    parts, where H replicates the Hessian-weighted block average, G is the
    gossip operator, and B = (I + gamma G A)^{-1} G A.  Since H has rank d,
    the md-dimensional resolvent reduces to a d x d solve.
    """
    if getattr(quad, "kind", None) != "quadratic":
        raise UnsupportedCombinationError(
            "exact fixed point requires quadratic objectives; use "
            "det_bias_expansion for general smooth objectives"
        )
    _require_positive_step(gamma)
    prof = W.spectral
    L, mu = quad.L, quad.mu
    star_stacked = quad.theta_star_stacked
    if prof.Lambda == 0.0:
        # fully connected: G = 0 hence B = 0 and the fixed point is theta*
        return QuadFixedPoint(
            star_stacked, star_stacked, StackedPoint.zeros(quad.m, quad.d)
        )
    limit = 2.0 / ((1.0 + L / mu) * L * prof.Lambda)
    if gamma >= limit:
        raise StepTooLargeError(
            f"gamma = {gamma:g} violates gamma < 2/((1 + L/mu) L Lambda) "
            f"= {limit:g}"
        )
    ops = _BlockOps(W, quad.A, quad.Abar, gamma)
    v = quad.theta_loc_star - quad.theta_star[None, :]
    x = ops.apply_B(v)
    # rank-d correction: S[:, j] = gamma h(B(U e_j)) over the basis of the
    # consensus subspace, then (I - gamma B H)^{-1} x = x + gamma B U
    # (I - S)^{-1} h(x)
    basis_img = np.empty((quad.d, quad.m, quad.d))
    S = np.empty((quad.d, quad.d))
    for j in range(quad.d):
        e = np.zeros(quad.d)
        e[j] = 1.0
        w = ops.apply_B(ops.lift(e))
        basis_img[j] = w
        S[:, j] = gamma * ops.h(w)
    try:
        core = np.linalg.solve(np.eye(quad.d) - S, ops.h(x))
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(
            "(I - gamma B H) is numerically singular"
        ) from exc
    ft = x + gamma * np.tensordot(core, basis_img, axes=(0, 0))
    lifted = ops.lift(ops.h(ft))
    theta_det = star_stacked.data + gamma * (ft - lifted)
    consensus = star_stacked.data - gamma * lifted
    disagreement = gamma * ft
    return QuadFixedPoint(
        StackedPoint(quad.m, quad.d, theta_det),
        StackedPoint(quad.m, quad.d, consensus),
        StackedPoint(quad.m, quad.d, disagreement),
    )


class BiasExpansion(NamedTuple):
    prediction: StackedPoint
    residual_bound: float


def det_bias_expansion(W: CommMatrix, obj: ObjectiveSet,
                       gamma: float) -> BiasExpansion:
    """First-order prediction of the deterministic fixed point.

    prediction = Theta* - gamma (I - H) G grad F(Theta*), with H and G built
    from the Hessians at theta*.  The returned residual bound controls
    ||Theta_det - prediction|| for gamma <= min(1/(Lambda L), 1/L).
    """
    prof = W.spectral
    L, mu = obj.L, obj.mu
    _require_step_at_most(
        gamma, _standard_limit(L, prof.Lambda),
        "gamma <= min(1/(Lambda*L), 1/L)",
    )
    star = obj.theta_star
    hess = np.stack([obj.hess_local(k, star) for k in range(obj.m)])
    Abar = hess.mean(axis=0)
    g = obj.grad_stacked(obj.theta_star_stacked).data
    Gg = gossip_operator(W) @ g
    rhs = np.einsum("kij,kj->ki", hess, Gg).mean(axis=0)
    try:
        h = np.linalg.solve(Abar, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(
            "mean Hessian at the optimum is singular"
        ) from exc
    data = star[None, :] - gamma * (Gg - h[None, :])
    zeta = obj.zeta_star
    bound = (
        gamma**2 * (L**2 / (2.0 * mu**2)) * prof.Lambda**2
        * (obj.K3 * zeta**2 / (mu * math.sqrt(obj.m)) + L * zeta)
    )
    return BiasExpansion(StackedPoint(obj.m, obj.d, data), float(bound))


def lemma3_bound(obj: ObjectiveSet, W: CommMatrix, gamma: float) -> float:
    """Upper bound gamma L Lambda zeta* / mu on ||Theta_det - Theta*||."""
    prof = W.spectral
    _require_step_at_most(
        gamma, _standard_limit(obj.L, prof.Lambda),
        "gamma <= min(1/(Lambda*L), 1/L)",
    )
    return float(gamma * obj.L * prof.Lambda * obj.zeta_star / obj.mu)


def variance_first_order(obj: ObjectiveSet, noise, gamma: float,
                         m=None) -> np.ndarray:
    """Predicted common block of the stationary covariance, (gamma/m) J C(theta*).

    J inverts X -> Abar X + X Abar, so the block solves the Lyapunov equation
    Abar X + X Abar = C(theta*) and is scaled by gamma/m.  This is the
    first-order block for EVERY client pair (k, l); topology enters only at
    higher order.
    """
    _require_positive_step(gamma)
    m_eff = _resolve_m(obj, m)
    if noise is None:
        return np.zeros((obj.d, obj.d))
    Cbar = covariance_at(noise, obj, obj.theta_star)
    Abar = obj.mean_hessian(obj.theta_star)
    X = sylvester_solve(Abar, Cbar)
    out = (gamma / m_eff) * X
    return 0.5 * (out + out.T)


def mean_third_contraction(obj: ObjectiveSet, theta, V: np.ndarray,
                           method: str = "auto") -> np.ndarray:
    """Contract the averaged third derivative at theta against symmetric V.

    Returns T with T_a = sum_{b,c} (mean_k grad^3 f_k(theta))_{a,b,c} V_{b,c},
    computed through the eigendecomposition of V.  The analytic per-client
    contraction is used when the objective provides one; otherwise central
    differences of the mean Hessian with step eps**(1/3) * scale are used.
    ``method`` forces a path ("analytic" or "fd") for cross-validation.
    """
    theta = np.asarray(theta, dtype=float)
    V = np.asarray(V, dtype=float)
    if V.shape != (obj.d, obj.d):
        raise InvalidParamError(
            f"contraction target must be ({obj.d}, {obj.d}), got {V.shape}"
        )
    if method not in ("auto", "analytic", "fd"):
        raise InvalidParamError(f"unknown contraction method {method!r}")
    if method == "auto":
        method = (
            "analytic" if hasattr(obj, "third_contract_local") else "fd"
        )
    vals, vecs = np.linalg.eigh(0.5 * (V + V.T))
    T = np.zeros(obj.d)
    step = np.finfo(float).eps ** (1.0 / 3.0) * max(
        1.0, float(np.linalg.norm(theta))
    )
    for lam, u in zip(vals, vecs.T):
        if lam == 0.0:
            continue
        if method == "analytic":
            contrib = np.zeros(obj.d)
            for k in range(obj.m):
                contrib += obj.third_contract_local(k, theta, u)
            contrib /= obj.m
        else:
            M = (
                obj.mean_hessian(theta + step * u)
                - obj.mean_hessian(theta - step * u)
            ) / (2.0 * step)
            contrib = M @ u
        T += lam * contrib
    return T


def stochastic_bias_first_order(obj: ObjectiveSet, noise, gamma: float,
                                m=None, method: str = "auto") -> np.ndarray:
    """First-order shift of the stationary mean away from Theta_det.

    Evaluates -(gamma / 2m) Abar^{-1} T where T contracts the averaged third
    derivative at theta* against J C(theta*).  Identical for every client at
    this order; exactly zero for quadratic objectives.
    """
    _require_positive_step(gamma)
    m_eff = _resolve_m(obj, m)
    if noise is None or obj.kind == "quadratic":
        return np.zeros(obj.d)
    star = obj.theta_star
    Cbar = covariance_at(noise, obj, star)
    if not np.any(Cbar):
        return np.zeros(obj.d)
    Abar = obj.mean_hessian(star)
    V = sylvester_solve(Abar, Cbar)
    T = mean_third_contraction(obj, star, V, method=method)
    try:
        corr = np.linalg.solve(Abar, T)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(
            "mean Hessian at the optimum is singular"
        ) from exc
    return -(gamma / (2.0 * m_eff)) * corr


def rr_bias_bound(obj: ObjectiveSet, W: CommMatrix, gamma: float,
                  m=None) -> float:
    """Bound on the error of the extrapolated deterministic limit.

    gamma^2 (L^2/mu^2) Lambda^2 (K3 zeta*^2 / (mu sqrt(m)) + L zeta*): one
    order of gamma better than the single-step fixed point.
    """
    prof = W.spectral
    _require_step_at_most(
        gamma, _standard_limit(obj.L, prof.Lambda),
        "gamma <= min(1/(Lambda*L), 1/L)",
    )
    m_eff = _resolve_m(obj, m)
    zeta = obj.zeta_star
    return float(
        gamma**2 * (obj.L**2 / obj.mu**2) * prof.Lambda**2
        * (obj.K3 * zeta**2 / (obj.mu * math.sqrt(m_eff)) + obj.L * zeta)
    )


def _tau_squares(obj: ObjectiveSet, noise, n_draws: int,
                 seed: int) -> tuple:
    if noise is None:
        return 0.0, 0.0
    t2 = estimate_tau(noise, obj, obj.theta_star_stacked, 2,
                      n_draws=n_draws, seed=seed)
    t4 = estimate_tau(noise, obj, obj.theta_star_stacked, 4,
                      n_draws=n_draws, seed=seed)
    tau2 = t2.exact if t2.exact is not None else t2.value
    tau4 = t4.exact if t4.exact is not None else t4.value
    return float(tau2) ** 2, float(tau4) ** 2


def _scaled(coeff: float, term: float) -> float:
    # avoid inf * 0 -> nan when a topology ratio blows up but its
    # coefficient vanishes
    return 0.0 if term == 0.0 else coeff * term


@dataclass(frozen=True)
class BoundDiagnostics:
    """Term-by-term breakdown of the stationary-variance and convergence bounds.

    All terms are reported individually because the source bounds hold up to
    absolute constants; only nonnegativity and the step-size scaling of each
    term are contractual.
    """

    gamma: float
    m: int
    tau2_sq: float
    tau4_sq: float
    B: float
    C: float
    psi0: float
    contraction_rate: float
    term_gamma: float
    term_gamma_3_2: float
    term_gamma_2: float
    term_gamma_5_2: float
    var_leading: float
    var_topology: float

    def as_rows(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]


def bound_diagnostics(obj: ObjectiveSet, W: CommMatrix, noise, gamma: float,
                      m=None, Theta0: Optional[StackedPoint] = None,
                      tau_draws: int = 20000, seed: int = 0) -> BoundDiagnostics:
    """Evaluate every named term of the variance and convergence bounds.

    B = (tau4^2 + gamma^2 (L^4/mu^2) Lambda^2 zeta*^2) / mu bounds fourth
    moments at stationarity; C is the topology-correction factor of the
    variance bound; psi0 is the initial-condition constant of the
    convergence bound (evaluated at Theta0, or the origin when omitted).
    """
    prof = W.spectral
    L, mu, K3 = obj.L, obj.mu, obj.K3
    zeta = obj.zeta_star
    _require_step_at_most(
        gamma, _standard_limit(L, prof.Lambda, frac=0.1),
        "gamma <= min(1/(Lambda*L), 1/(10*L))",
    )
    m_eff = _resolve_m(obj, m)
    tau2_sq, tau4_sq = _tau_squares(obj, noise, tau_draws, seed)
    lam2 = prof.Lambda**2
    B = (tau4_sq + gamma**2 * (L**4 / mu**2) * lam2 * zeta**2) / mu
    c_numer = (
        L * B + K3 * B**1.5 * math.sqrt(gamma)
        + 0.5 * gamma**2 * K3**2 * B**2 + tau2_sq
    )
    C = c_numer / tau2_sq if tau2_sq > 0.0 else math.inf
    if Theta0 is None:
        avg0 = np.zeros(obj.d)
    else:
        avg0 = Theta0.block_average()
    psi0 = (
        float(np.sum((avg0 - obj.theta_star) ** 2))
        + gamma**2 * (L**2 / mu**2) * lam2 * zeta**2
        + (gamma / mu)
        * (tau2_sq + gamma**2 * (4.0 * L**4 / mu**2) * lam2 * zeta**2)
    )
    rho = prof.rho
    topo = rho**2 / (1.0 - rho**2) if rho < 1.0 else math.inf
    return BoundDiagnostics(
        gamma=gamma,
        m=m_eff,
        tau2_sq=tau2_sq,
        tau4_sq=tau4_sq,
        B=B,
        C=C,
        psi0=psi0,
        contraction_rate=1.0 - gamma * mu,
        term_gamma=gamma * tau2_sq / (mu * m_eff),
        term_gamma_3_2=gamma**1.5 * K3 * B**1.5 / (mu * m_eff),
        term_gamma_2=gamma**2 * (
            (L**2 / mu**2) * lam2 * zeta**2
            + _scaled(topo, L * B) + _scaled(topo, tau2_sq)
        ),
        term_gamma_5_2=gamma**2.5 * _scaled(
            topo, K3 * B**1.5 + gamma**1.5 * K3**2 * B**2
        ),
        var_leading=(gamma * tau2_sq + gamma**1.5 * K3 * B**1.5)
        / (mu * m_eff),
        var_topology=gamma**2 * _scaled(topo, c_numer),
    )


def recommend_schedule(obj: ObjectiveSet, W: CommMatrix, noise, m=None,
                       epsilon: float = 1e-2, variant: str = "dsgd",
                       tau_draws: int = 20000, seed: int = 0):
    """Step size and horizon reaching accuracy epsilon, up to absolute constants.

    ``variant`` selects plain averaging ("dsgd") or two-step-size
    extrapolation ("rr"); the latter relaxes the heterogeneity-limited terms
    from 1/epsilon to 1/sqrt(epsilon).  All unspecified absolute constants
    are taken as 1; the horizon carries the log(psi0/epsilon) factor with
    the start at the origin.
    """
    variant = str(variant).strip().lower().replace("-", "_")
    if variant not in ("dsgd", "rr"):
        raise InvalidParamError(
            f"variant must be 'dsgd' or 'rr', got {variant!r}"
        )
    if not (epsilon > 0.0):
        raise InvalidParamError(f"epsilon must be positive, got {epsilon!r}")
    prof = W.spectral
    L, mu = obj.L, obj.mu
    zeta = obj.zeta_star
    Lambda, rho = prof.Lambda, prof.rho
    if rho >= 1.0:
        raise InvalidParamError(
            "schedule recommendation requires rho < 1"
        )
    m_eff = _resolve_m(obj, m)
    tau2_sq, tau4_sq = _tau_squares(obj, noise, tau_draws, seed)

    def div(a, b):
        return a / b if b > 0.0 else math.inf

    het_eps = epsilon if variant == "dsgd" else math.sqrt(epsilon)
    gam = min(
        1.0 / L,
        div(mu, L**2 * Lambda * zeta),
        div(mu * m_eff * epsilon**2, tau2_sq),
        div(mu * het_eps, L * Lambda * zeta),
    )
    B = (tau4_sq + gam**2 * (L**4 / mu**2) * Lambda**2 * zeta**2) / mu
    topo = rho**2 / (1.0 - rho**2)
    if topo > 0.0:
        gam = min(
            gam,
            epsilon * math.sqrt(div(1.0, L * B * topo)),
            epsilon * math.sqrt(div(1.0, tau2_sq * topo)),
        )
    T_core = max(
        L / mu,
        L**2 * Lambda * zeta / mu**2,
        div(tau2_sq, mu**2 * m_eff * epsilon**2),
        div(L * Lambda * zeta, mu**2 * het_eps),
        div(math.sqrt(tau2_sq), mu * epsilon) * math.sqrt(topo),
    )
    psi0 = (
        float(np.sum(obj.theta_star**2))
        + gam**2 * (L**2 / mu**2) * Lambda**2 * zeta**2
        + (gam / mu)
        * (tau2_sq + gam**2 * (4.0 * L**4 / mu**2) * Lambda**2 * zeta**2)
    )
    log_factor = max(1.0, math.log(psi0 / epsilon)) if psi0 > 0.0 else 1.0
    return float(gam), int(math.ceil(T_core * log_factor))


@dataclass(frozen=True)
class TheoryReport:
    """Every closed-form prediction and bound for one configuration."""

    theta_det_pred: StackedPoint
    bias_first_order: StackedPoint
    det_residual_bound: float
    lemma3_bound: float
    variance_first_order: np.ndarray
    stochastic_bias_first_order: np.ndarray
    rr_bias_bound: float
    # None when gamma sits outside the (stricter) diagnostics gate while the
    # fixed-point and expansion gates still hold; rows() then reports NaN
    diagnostics: Optional[BoundDiagnostics]

    def rows(self):
        out = []
        for k in range(self.theta_det_pred.m):
            for j in range(self.theta_det_pred.d):
                out.append((f"theta_det_pred[{k}][{j}]",
                            self.theta_det_pred.data[k, j]))
        for k in range(self.bias_first_order.m):
            for j in range(self.bias_first_order.d):
                out.append((f"bias_first_order[{k}][{j}]",
                            self.bias_first_order.data[k, j]))
        out.append(("det_residual_bound", self.det_residual_bound))
        out.append(("lemma3_bound", self.lemma3_bound))
        d = self.variance_first_order.shape[0]
        for i in range(d):
            for j in range(d):
                out.append((f"variance_first_order[{i}][{j}]",
                            self.variance_first_order[i, j]))
        for i in range(len(self.stochastic_bias_first_order)):
            out.append((f"stochastic_bias_first_order[{i}]",
                        self.stochastic_bias_first_order[i]))
        out.append(("rr_bias_bound", self.rr_bias_bound))
        if self.diagnostics is not None:
            for name, value in self.diagnostics.as_rows():
                out.append((f"diag_{name}", value))
        else:
            for f in fields(BoundDiagnostics):
                out.append((f"diag_{f.name}", float("nan")))
        return out

    def to_csv(self, f) -> None:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["quantity", "value"])
        for name, value in self.rows():
            writer.writerow([name, f"{float(value):.17g}"])


def theory_report(W: CommMatrix, obj: ObjectiveSet, noise, gamma: float,
                  Theta0: Optional[StackedPoint] = None,
                  tau_draws: int = 20000, seed: int = 0) -> TheoryReport:
    """Assemble the full report.

    The fixed-point and expansion gates are hard: a gamma outside them
    raises StepTooLargeError naming the violated inequality.  The
    non-asymptotic diagnostics use a stricter gate of their own; when only
    that one fails the report still carries the closed forms and the
    diagnostics come back as NaN.
    """
    # for quadratics the exact fixed point goes first: its step-size gate
    # gamma < 2/((1+L/mu) L Lambda) is the tighter one and should be the
    # inequality named on failure
    if obj.kind == "quadratic":
        pred = quad_exact_fixed_point(W, obj, gamma).theta_det
        expansion = det_bias_expansion(W, obj, gamma)
    else:
        expansion = det_bias_expansion(W, obj, gamma)
        pred = expansion.prediction
    try:
        diag = bound_diagnostics(obj, W, noise, gamma, Theta0=Theta0,
                                 tau_draws=tau_draws, seed=seed)
    except StepTooLargeError:
        diag = None
    bias = StackedPoint(
        obj.m, obj.d,
        expansion.prediction.data - obj.theta_star_stacked.data,
    )
    return TheoryReport(
        theta_det_pred=pred,
        bias_first_order=bias,
        det_residual_bound=expansion.residual_bound,
        lemma3_bound=lemma3_bound(obj, W, gamma),
        variance_first_order=variance_first_order(obj, noise, gamma),
        stochastic_bias_first_order=stochastic_bias_first_order(
            obj, noise, gamma
        ),
        rr_bias_bound=rr_bias_bound(obj, W, gamma),
        diagnostics=diag,
    )
