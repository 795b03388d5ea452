"""Taylor frames for parameter trajectories of a quantile model.

At a fitted reference value the map t -> q(x_ref; theta_hat + t) is a
p-dimensional surface in sample space.  The frame records its velocity and
acceleration arrays, the induced metric (gram), the tangent projector, and
the split of the acceleration into tangential mixing plus the normal
component (the second fundamental form).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._jsonio import encode_array
from .errors import DegenerateTangentError, InvalidDimensionError, InvalidParameterError
from .models import QuantileModel

__all__ = [
    "TaylorFrame",
    "ReexpressionRecord",
    "build_frame",
    "orthogonalize",
    "quadratic_point",
    "expansion_residual",
    "reparameterize",
    "rescale_frame",
    "scalar_expansion_arrays",
    "reexpress_scalar",
]

_RANK_TOL = 1e-10


@dataclass(frozen=True)
class TaylorFrame:
    """Second-order expansion of a parameter trajectory at a base point.

    velocity is n x p, acceleration n x p x p (symmetric trailing axes).
    gram = V'V is the induced metric, projector the orthogonal projection
    onto the tangent span, mixing the tangential regression coefficients of
    the acceleration columns (p x p x p, leading axis indexes the tangent
    coordinate), and normal_acceleration the residual after removing the
    tangential part: acceleration = normal + velocity . mixing.
    """

    base_point: np.ndarray
    x_ref: np.ndarray
    theta: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    gram: np.ndarray
    projector: np.ndarray
    mixing: np.ndarray
    normal_acceleration: np.ndarray

    @property
    def n(self) -> int:
        return self.velocity.shape[0]

    @property
    def p(self) -> int:
        return self.velocity.shape[1]

    def to_json_dict(self) -> dict:
        return {
            "n": self.n,
            "p": self.p,
            "base_point": [float(v) for v in self.base_point],
            "x_ref": [float(v) for v in self.x_ref],
            "theta": [float(v) for v in self.theta],
            "velocity": encode_array(self.velocity),
            "acceleration": encode_array(self.acceleration),
            "gram": encode_array(self.gram),
            "projector": encode_array(self.projector),
            "mixing": encode_array(self.mixing),
            "normal_acceleration": encode_array(self.normal_acceleration),
        }


def _check_arrays(velocity: np.ndarray, acceleration: np.ndarray):
    velocity = np.asarray(velocity, dtype=float)
    acceleration = np.asarray(acceleration, dtype=float)
    if velocity.ndim != 2:
        raise InvalidDimensionError("velocity must be n x p")
    n, p = velocity.shape
    if acceleration.shape != (n, p, p):
        raise InvalidDimensionError(
            f"acceleration shape {acceleration.shape}, expected {(n, p, p)}"
        )
    asym = np.max(np.abs(acceleration - np.swapaxes(acceleration, 1, 2)))
    if asym > 1e-8 * (1.0 + np.max(np.abs(acceleration))):
        raise InvalidParameterError(
            f"acceleration not symmetric in trailing axes (gap {asym:.3e})"
        )
    return velocity, 0.5 * (acceleration + np.swapaxes(acceleration, 1, 2))


def orthogonalize(velocity: np.ndarray, acceleration: np.ndarray):
    """Split the acceleration into tangential mixing and a normal part.

    Returns (gram, projector, mixing, normal) with
    acceleration = normal + einsum('nk,kab->nab', velocity, mixing) and
    velocity' normal = 0.
    """
    velocity, acceleration = _check_arrays(velocity, acceleration)
    n, p = velocity.shape
    svals = np.linalg.svd(velocity, compute_uv=False)
    if svals[-1] <= _RANK_TOL * svals[0]:
        raise DegenerateTangentError(
            f"velocity rank deficient (singular values {svals})"
        )
    gram = velocity.T @ velocity
    gram_inv = np.linalg.inv(gram)
    projector = velocity @ gram_inv @ velocity.T
    # regression coefficients of each acceleration column on the velocity span
    mixing = np.einsum("kl,nl,nab->kab", gram_inv, velocity, acceleration)
    normal = acceleration - np.einsum("nk,kab->nab", velocity, mixing)
    return gram, projector, mixing, normal


def build_frame(model: QuantileModel, x_ref: np.ndarray, theta: np.ndarray) -> TaylorFrame:
    """Assemble the Taylor frame of t -> q(x_ref; theta + t) at t = 0."""
    x_ref = model.check_point(x_ref, name="x_ref")
    theta = model.check_theta(theta)
    base = model.quantile(x_ref, theta)
    velocity = np.asarray(model.dquantile_dtheta(x_ref, theta), dtype=float)
    acceleration = np.asarray(model.d2quantile_dtheta2(x_ref, theta), dtype=float)
    gram, projector, mixing, normal = orthogonalize(velocity, acceleration)
    return TaylorFrame(
        base_point=base,
        x_ref=x_ref,
        theta=theta,
        velocity=velocity,
        acceleration=0.5 * (acceleration + np.swapaxes(acceleration, 1, 2)),
        gram=gram,
        projector=projector,
        mixing=mixing,
        normal_acceleration=normal,
    )


def quadratic_point(frame: TaylorFrame, t: np.ndarray) -> np.ndarray:
    """Second-order predicted point y0 + V t + t'W t / 2."""
    t = np.asarray(t, dtype=float)
    if t.shape != (frame.p,):
        raise InvalidDimensionError(f"t has shape {t.shape}, expected ({frame.p},)")
    quad = 0.5 * np.einsum("nab,a,b->n", frame.acceleration, t, t)
    return frame.base_point + frame.velocity @ t + quad


def expansion_residual(model: QuantileModel, frame: TaylorFrame, t: np.ndarray) -> float:
    """Distance between the exact trajectory point and the quadratic prediction."""
    exact = model.quantile(frame.x_ref, frame.theta + np.asarray(t, dtype=float))
    return float(np.linalg.norm(exact - quadratic_point(frame, t)))


def reparameterize(frame: TaylorFrame, t: np.ndarray, n_scale: float = 1.0) -> np.ndarray:
    """Tilted coordinate t~ = t + t' mixing t / (2 n_scale).

    With n_scale = 1 the substitution absorbs the tangential part exactly:
    y0 + V t~ + t' normal t / 2 reproduces the full quadratic prediction.
    Pass the moderate-deviation factor n^{1/2} as n_scale for standardized
    bookkeeping.
    """
    if n_scale <= 0.0:
        raise InvalidParameterError("n_scale must be positive")
    t = np.asarray(t, dtype=float)
    if t.shape != (frame.p,):
        raise InvalidDimensionError(f"t has shape {t.shape}, expected ({frame.p},)")
    bend = np.einsum("kab,a,b->k", frame.mixing, t, t)
    return t + 0.5 * bend / n_scale


def rescale_frame(frame: TaylorFrame, scales: np.ndarray) -> TaylorFrame:
    """Frame of the reparameterized trajectory theta(t) = theta + scales @ t.

    Composes with information standardization: passing the Cholesky-based
    scales matrix yields a frame whose gram is the identity metric up to the
    accuracy of the observed information.
    """
    scales = np.asarray(scales, dtype=float)
    if scales.shape != (frame.p, frame.p):
        raise InvalidDimensionError("scales must be p x p")
    velocity = frame.velocity @ scales
    acceleration = np.einsum("nab,aA,bB->nAB", frame.acceleration, scales, scales)
    gram, projector, mixing, normal = orthogonalize(velocity, acceleration)
    return TaylorFrame(
        base_point=frame.base_point,
        x_ref=frame.x_ref,
        theta=frame.theta,
        velocity=velocity,
        acceleration=acceleration,
        gram=gram,
        projector=projector,
        mixing=mixing,
        normal_acceleration=normal,
    )


def scalar_expansion_arrays(model: QuantileModel, x_ref: np.ndarray, theta: np.ndarray):
    """Per-coordinate (v, b, w) arrays of a scalar-parameter expansion.

    v is the velocity, b the cross derivative d2 y / dx dtheta, w the
    acceleration, all evaluated at (x_ref, theta).
    """
    if model.p != 1:
        raise InvalidDimensionError("scalar expansion needs p = 1")
    x_ref = model.check_point(x_ref, name="x_ref")
    theta = model.check_theta(theta)
    v = np.asarray(model.dquantile_dtheta(x_ref, theta), dtype=float)[:, 0]
    b = np.asarray(model.cross_hessian(x_ref, theta), dtype=float)[:, 0]
    w = np.asarray(model.d2quantile_dtheta2(x_ref, theta), dtype=float)[:, 0, 0]
    return v, b, w


@dataclass(frozen=True)
class ReexpressionRecord:
    """Coordinate re-expressions removing the cross term of a scalar expansion.

    For each coordinate with velocity v != 0, the response re-expression
    coefficient c solves c v = b, the reference re-expression coefficient is
    a = -c (new x = x + a x^2 / (2 n^{1/2})), and the curvature is updated to
    w - b v.  Coordinates with |v| below the drop tolerance are left alone
    and recorded in dropped.  residual_cross_norm is the largest remaining
    second-order cross coefficient |b - c v| over the kept coordinates.
    """

    a: np.ndarray
    c: np.ndarray
    w_new: np.ndarray
    dropped: np.ndarray
    residual_cross_norm: float


def reexpress_scalar(v: np.ndarray, b: np.ndarray, w: np.ndarray,
                     drop_tol: float = 1e-12) -> ReexpressionRecord:
    """Absorb the cross-derivative term of a scalar-parameter expansion.

    Inputs are the per-coordinate arrays from scalar_expansion_arrays.
    Coordinates where the velocity vanishes cannot carry the re-expression
    and are flagged rather than transformed.
    """
    v = np.asarray(v, dtype=float)
    b = np.asarray(b, dtype=float)
    w = np.asarray(w, dtype=float)
    if not (v.shape == b.shape == w.shape) or v.ndim != 1:
        raise InvalidDimensionError("v, b, w must be equal-length vectors")
    scale = np.max(np.abs(v)) if v.size else 0.0
    keep = np.abs(v) > drop_tol * max(scale, 1.0)
    c = np.zeros_like(v)
    c[keep] = b[keep] / v[keep]
    w_new = w.copy()
    w_new[keep] = w[keep] - b[keep] * v[keep]
    residual = np.abs(b - c * v)
    return ReexpressionRecord(
        a=-c,
        c=c,
        w_new=w_new,
        dropped=np.flatnonzero(~keep),
        residual_cross_norm=float(np.max(residual[keep])) if keep.any() else 0.0,
    )
