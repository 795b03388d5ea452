"""Maximum likelihood fitting and reference-value recovery for quantile models.

The log-likelihood of y under theta is the reference log density at the
solved reference value x(y, theta) minus the log Jacobian sum(log dq/dx).
Scores are analytic via implicit differentiation (exact for families affine
in x); Hessians come from central differences of the score.  Sigma-type
parameters (positive open domain) are iterated on the log scale internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize

from ._jsonio import encode_array
from .errors import (
    AncontourError,
    ConvergenceError,
    InvalidParameterError,
    ReferenceSolveError,
    SingularInformationError,
)
from .models import QuantileModel

__all__ = [
    "FitResult",
    "StandardizationRecord",
    "fitted_reference",
    "loglik",
    "score",
    "observed_information",
    "closed_form_mle",
    "fit_mle",
    "standardize",
]

_SCORE_TOL = 1e-8
_STEP_TOL = 1e-10
_MAX_ITER = 100


@dataclass(frozen=True)
class FitResult:
    """MLE output: estimate, fitted point, reference value, curvature, diagnostics."""

    theta_hat: np.ndarray
    y_fit: np.ndarray
    x_hat: np.ndarray
    obs_info: np.ndarray
    loglik: float
    converged: bool
    iterations: int
    score_norm: float

    def to_json_dict(self) -> dict:
        return {
            "theta_hat": [float(v) for v in self.theta_hat],
            "y_fit": [float(v) for v in self.y_fit],
            "x_hat": [float(v) for v in self.x_hat],
            "obs_info": encode_array(self.obs_info),
            "loglik": float(self.loglik),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "score_norm": float(self.score_norm),
        }


def fitted_reference(model: QuantileModel, y: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Solve y = q(x; theta) coordinate-wise for the reference value x.

    Families affine in x are solved in closed form; otherwise each coordinate
    is bracketed by doubling and solved with Brent's method.
    """
    y = model.check_point(y)
    theta = model.check_theta(theta)
    if model.affine_in_x:
        zero = np.zeros(model.n)
        a = model.quantile(zero, theta)
        b = model.dquantile_dx(zero, theta)
        if np.any(b <= 0.0):
            raise ReferenceSolveError("dquantile_dx not positive, solve undefined")
        return (y - a) / b

    x = np.empty(model.n)
    for i in range(model.n):
        def g(xi, i=i):
            probe = np.zeros(model.n)
            probe[i] = xi
            return model.quantile(probe, theta)[i] - y[i]

        lo, hi = -8.0, 8.0
        for _ in range(60):
            if g(lo) <= 0.0 <= g(hi):
                break
            lo *= 2.0
            hi *= 2.0
        else:
            raise ReferenceSolveError(
                f"coordinate {i}: root not bracketable within expanding bounds"
            )
        x[i] = brentq(g, lo, hi, xtol=1e-14, rtol=1e-15)
    return x


def loglik(model: QuantileModel, y: np.ndarray, theta: np.ndarray) -> float:
    """Exact log-likelihood via the reference density and the x-Jacobian."""
    x = fitted_reference(model, y, theta)
    jac = model.dquantile_dx(x, theta)
    return model.ref_log_density(x) - float(np.sum(np.log(jac)))


def score(model: QuantileModel, y: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Analytic score via implicit differentiation of the reference solve.

    dx/dtheta = -V / D coordinate-wise; for affine-in-x families the Jacobian
    term contributes exactly -sum(B / D).  Non-affine models fall back to
    central differences of the log-likelihood.
    """
    theta = model.check_theta(theta)
    if not model.affine_in_x:
        out = np.empty(model.p)
        for a in range(model.p):
            h = 1e-6 * max(1.0, abs(theta[a]))
            up = theta.copy()
            dn = theta.copy()
            up[a] += h
            dn[a] -= h
            out[a] = (loglik(model, y, up) - loglik(model, y, dn)) / (2.0 * h)
        return out

    x = fitted_reference(model, y, theta)
    d = model.dquantile_dx(x, theta)
    v = model.dquantile_dtheta(x, theta)
    b = model.cross_hessian(x, theta)
    lref = model.ref_score(x)
    dx_dtheta = -v / d[:, None]
    return dx_dtheta.T @ lref - (b / d[:, None]).sum(axis=0)


def observed_information(model: QuantileModel, y: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Negative Hessian of the log-likelihood by central differences of the score."""
    theta = model.check_theta(theta)
    p = model.p
    jac = np.empty((p, p))
    for a in range(p):
        h = 1e-6 * max(1.0, abs(theta[a]))
        lo, hi = model.param_domain[a]
        if theta[a] + h >= hi or theta[a] - h <= lo:
            h = 0.25 * min(hi - theta[a], theta[a] - lo)
        up = theta.copy()
        dn = theta.copy()
        up[a] += h
        dn[a] -= h
        jac[:, a] = (score(model, y, up) - score(model, y, dn)) / (2.0 * h)
    info = -0.5 * (jac + jac.T)
    return info


def _default_init(model: QuantileModel, y: np.ndarray) -> np.ndarray:
    family = model.family
    if family == "location-scale":
        mu = float(np.mean(y))
        sd = float(np.sqrt(np.mean((y - mu) ** 2)))
        return np.array([mu, max(sd, 1e-8)])
    if family in ("cauchy-location-scale", "inverted-cauchy"):
        mu = float(np.median(y))
        q75, q25 = np.percentile(y, [75.0, 25.0])
        scale = 0.5 * float(q75 - q25)
        return np.array([mu, max(scale, 1e-8)])
    if family in ("circle2d", "circleN"):
        return np.array([math.atan2(y[1], y[0])])
    if family == "nonlinreg-unknown-sigma":
        sub = _init_regression_part(model, y)
        resid = y - model.quantile(np.zeros(model.n), np.append(sub, 1.0))
        sd = float(np.sqrt(np.mean(resid ** 2)))
        return np.append(sub, max(sd, 1e-8))
    return _init_regression_part(model, y)


def _init_regression_part(model: QuantileModel, y: np.ndarray) -> np.ndarray:
    # coarse grid along each axis of a +-3 box, refined by the Newton pass later
    r = model.p - (1 if model.family == "nonlinreg-unknown-sigma" else 0)
    if r == 1:
        grid = np.linspace(-3.0, 3.0, 61)
        best, best_val = 0.0, -math.inf
        for t in grid:
            theta = np.array([t, 1.0]) if model.p > r else np.array([t])
            mu = model.quantile(np.zeros(model.n), theta)
            val = -float(np.sum((y - mu) ** 2))
            if val > best_val:
                best, best_val = t, val
        return np.array([best])
    return np.zeros(r)


def closed_form_mle(model: QuantileModel, y: np.ndarray) -> np.ndarray:
    """Closed-form estimates where they exist (Normal location-scale, circle angle)."""
    y = model.check_point(y)
    if model.family == "location-scale":
        mu = float(np.mean(y))
        sigma = float(np.sqrt(np.mean((y - mu) ** 2)))
        if sigma <= 0.0:
            raise SingularInformationError("degenerate sample, sigma_hat = 0")
        return np.array([mu, sigma])
    if model.family in ("circle2d", "circleN"):
        if math.hypot(y[0], y[1]) == 0.0:
            raise SingularInformationError("data at the circle center, angle undefined")
        return np.array([math.atan2(y[1], y[0])])
    raise InvalidParameterError(f"no closed form for family {model.family!r}")


def _to_internal(model, theta):
    z = np.array(theta, dtype=float)
    for j, (lo, hi) in enumerate(model.param_domain):
        if lo == 0.0 and math.isinf(hi):
            z[j] = math.log(theta[j])
    return z


def _from_internal(model, z):
    theta = np.array(z, dtype=float)
    for j, (lo, hi) in enumerate(model.param_domain):
        if lo == 0.0 and math.isinf(hi):
            theta[j] = math.exp(z[j])
    return theta


def _internal_score(model, y, z):
    theta = _from_internal(model, z)
    s = score(model, y, theta)
    for j, (lo, hi) in enumerate(model.param_domain):
        if lo == 0.0 and math.isinf(hi):
            s[j] *= theta[j]
    return s, theta


def _golden_section(model, y, center, half_width=1.6, tol=1e-12):
    # derivative-free fallback for scalar parameters (circle angle)
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = center - half_width, center + half_width
    f = lambda t: -loglik(model, y, _from_internal(model, np.array([t])))
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return np.array([0.5 * (a + b)])


def fit_mle(
    model: QuantileModel,
    y: np.ndarray,
    init: np.ndarray | None = None,
    method: str = "auto",
    max_iterations: int = _MAX_ITER,
    score_tol: float = _SCORE_TOL,
    step_tol: float = _STEP_TOL,
) -> FitResult:
    """Fit by Newton iteration with backtracking line search.

    Parameters
    ----------
    model, y : family and observed data point.
    init : starting value; family-specific default when omitted
        (moments for location-scale, atan2 for the circle angle, coarse grid
        for scalar regression).
    method : "auto" starts Newton from the closed form when one exists;
        "closed" returns the closed form directly; "newton" forces iteration
        from the default or given init.

    Returns a FitResult; the score norm at the estimate is below score_tol
    and the observed information is symmetric positive definite.
    """
    y = model.check_point(y)
    if method not in ("auto", "newton", "closed"):
        raise InvalidParameterError(f"unknown method {method!r}")

    if method == "closed":
        theta = closed_form_mle(model, y)
        return _finalize(model, y, theta, iterations=0)

    if init is None:
        if method == "auto" and model.family in ("location-scale", "circle2d", "circleN"):
            init = closed_form_mle(model, y)
        else:
            init = _default_init(model, y)
    init = model.check_theta(np.asarray(init, dtype=float))

    z = _to_internal(model, init)
    trace = []
    s, theta = _internal_score(model, y, z)
    current = loglik(model, y, theta)
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        if float(np.linalg.norm(score(model, y, theta))) < score_tol:
            return _finalize(model, y, theta, iterations - 1)
        info = _internal_information(model, y, z)
        try:
            cond = np.linalg.cond(info)
        except np.linalg.LinAlgError:
            cond = math.inf
        if not math.isfinite(cond) or cond > 1e14:
            raise SingularInformationError(
                f"Hessian singular at iterate {iterations} (cond {cond:.2e})"
            )
        step = np.linalg.solve(info, s)
        # backtracking: accept the first step that does not reduce the log-likelihood
        scale = 1.0
        for _ in range(40):
            z_new = z + scale * step
            try:
                theta_new = _from_internal(model, z_new)
                model.check_theta(theta_new)
                value = loglik(model, y, theta_new)
            except (InvalidParameterError, ReferenceSolveError, FloatingPointError):
                scale *= 0.5
                continue
            if value >= current - 1e-12 * (1.0 + abs(current)):
                break
            scale *= 0.5
        else:
            # line search failed; record the stuck iterate for diagnostics
            trace.append({"iter": iterations, "theta": theta.tolist(), "loglik": current})
            break
        trace.append({"iter": iterations, "theta": theta.tolist(), "loglik": current})
        moved = float(np.linalg.norm(z_new - z))
        z, theta, current = z_new, theta_new, value
        s, theta = _internal_score(model, y, z)
        if moved < step_tol:
            break

    if float(np.linalg.norm(score(model, y, theta))) < score_tol:
        return _finalize(model, y, theta, iterations)

    if model.p == 1:
        z = _golden_section(model, y, z[0])
        theta = _from_internal(model, z)
        if float(np.linalg.norm(score(model, y, theta))) < math.sqrt(score_tol):
            # polish the derivative-free bracket with a couple of Newton steps
            for _ in range(8):
                s, theta = _internal_score(model, y, z)
                info = _internal_information(model, y, z)
                z = z + np.linalg.solve(info, s)
                theta = _from_internal(model, z)
            if float(np.linalg.norm(score(model, y, theta))) < score_tol:
                return _finalize(model, y, theta, iterations)
    elif method == "auto":
        # Newton stalled away from a stationary point (Cauchy likelihoods are
        # not concave); quasi-Newton in the unconstrained internal coordinates
        # is robust there, followed by the usual Newton polish
        try:
            res = minimize(
                lambda zv: -loglik(model, y, _from_internal(model, zv)),
                z,
                jac=lambda zv: -_internal_score(model, y, zv)[0],
                method="BFGS",
                options={"gtol": 1e-12, "maxiter": 500},
            )
            z = np.asarray(res.x, dtype=float)
            for _ in range(8):
                s, theta = _internal_score(model, y, z)
                info = _internal_information(model, y, z)
                z = z + np.linalg.solve(info, s)
            theta = _from_internal(model, z)
            if float(np.linalg.norm(score(model, y, theta))) < score_tol:
                return _finalize(model, y, theta, iterations)
        except (AncontourError, np.linalg.LinAlgError, FloatingPointError):
            pass

    raise ConvergenceError(
        f"no convergence after {iterations} iterations "
        f"(score norm {float(np.linalg.norm(score(model, y, theta))):.3e})",
        trace=trace,
    )


def _internal_information(model, y, z):
    p = model.p
    jac = np.empty((p, p))
    for a in range(p):
        h = 1e-6 * max(1.0, abs(z[a]))
        up = z.copy()
        dn = z.copy()
        up[a] += h
        dn[a] -= h
        su, _ = _internal_score(model, y, up)
        sd, _ = _internal_score(model, y, dn)
        jac[:, a] = (su - sd) / (2.0 * h)
    return -0.5 * (jac + jac.T)


def _finalize(model, y, theta, iterations) -> FitResult:
    s = score(model, y, theta)
    info = observed_information(model, y, theta)
    eigs = np.linalg.eigvalsh(info)
    if eigs[0] <= 0.0:
        raise SingularInformationError(
            f"observed information not positive definite (min eig {eigs[0]:.3e})"
        )
    x_hat = fitted_reference(model, y, theta)
    y_fit = model.quantile(np.zeros(model.n), theta)
    return FitResult(
        theta_hat=theta,
        y_fit=y_fit,
        x_hat=x_hat,
        obs_info=info,
        loglik=loglik(model, y, theta),
        converged=True,
        iterations=iterations,
        score_norm=float(np.linalg.norm(s)),
    )


@dataclass(frozen=True)
class StandardizationRecord:
    """Information standardization at the fit.

    chol is the lower Cholesky factor L of the observed information; scales
    is L^{-T}, so theta = theta_hat + scales @ t has identity observed
    information in t.  sqrt_n carries the moderate-deviation bookkeeping
    factor n^{1/2} for callers that track it explicitly.
    """

    chol: np.ndarray
    scales: np.ndarray
    sqrt_n: float

    def map_offsets(self, t_std: np.ndarray) -> np.ndarray:
        """Map standardized offsets (rows) to raw parameter offsets."""
        t_std = np.atleast_2d(np.asarray(t_std, dtype=float))
        return t_std @ self.scales.T


def standardize(obs_info: np.ndarray, n: int) -> StandardizationRecord:
    """Cholesky-standardize an observed information matrix (must be SPD)."""
    obs_info = np.asarray(obs_info, dtype=float)
    try:
        chol = np.linalg.cholesky(obs_info)
    except np.linalg.LinAlgError as exc:
        raise SingularInformationError(f"information not SPD: {exc}") from exc
    scales = np.linalg.inv(chol).T
    return StandardizationRecord(chol=chol, scales=scales, sqrt_n=math.sqrt(n))
