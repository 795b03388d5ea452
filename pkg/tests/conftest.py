"""Shared helpers: finite-difference stencils and seeded family instances."""

import numpy as np
import pytest

from ancontour import (
    make_circle,
    make_location_scale,
    make_nonlinear_regression,
    make_synthetic_curved,
    eta_curved,
)

MASTER_SEED = 20260816


def central_difference(fun, x, h=1e-6):
    """Jacobian of fun at x by central differences, one column per coordinate."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(len(x)):
        up = x.copy()
        dn = x.copy()
        up[j] += h
        dn[j] -= h
        cols.append((np.asarray(fun(up)) - np.asarray(fun(dn))) / (2.0 * h))
    return np.stack(cols, axis=-1)


def five_point_derivative(fun, t0, h=1e-3):
    """Fourth-order first derivative of a vector-valued scalar function."""
    f = lambda t: np.asarray(fun(t), dtype=float)
    return (-f(t0 + 2 * h) + 8.0 * f(t0 + h) - 8.0 * f(t0 - h) + f(t0 - 2 * h)) / (12.0 * h)


def second_difference(fun, x, h=1e-4):
    """Hessian of a scalar function by central second differences."""
    x = np.asarray(x, dtype=float)
    k = len(x)
    out = np.empty((k, k))
    f0 = fun(x)
    for a in range(k):
        for b in range(k):
            pp = x.copy(); pp[a] += h; pp[b] += h
            pm = x.copy(); pm[a] += h; pm[b] -= h
            mp = x.copy(); mp[a] -= h; mp[b] += h
            mm = x.copy(); mm[a] -= h; mm[b] -= h
            out[a, b] = (fun(pp) - fun(pm) - fun(mp) + fun(mm)) / (4.0 * h * h)
    return 0.5 * (out + out.T)


FAMILY_NAMES = (
    "location-scale",
    "cauchy-location-scale",
    "circle2d",
    "circleN",
    "nonlinreg-known-sigma",
    "nonlinreg-unknown-sigma",
)


def make_instance(family: str, rng: np.random.Generator):
    """One random (model, theta, y) triple for the named family."""
    if family == "location-scale":
        model = make_location_scale(int(rng.integers(3, 12)))
        theta = np.array([rng.normal(0.0, 2.0), float(np.exp(rng.normal(0.0, 0.4)))])
    elif family == "cauchy-location-scale":
        model = make_location_scale(int(rng.integers(4, 10)), error_law="cauchy")
        theta = np.array([rng.normal(0.0, 1.0), float(np.exp(rng.normal(0.0, 0.3)))])
    elif family == "circle2d":
        model = make_circle(float(rng.uniform(0.5, 2.0)), n=2,
                            variance_scale=float(rng.uniform(0.05, 0.5)))
        theta = np.array([rng.uniform(-3.0, 3.0)])
    elif family == "circleN":
        model = make_circle(float(rng.uniform(0.8, 2.0)), n=int(rng.integers(3, 7)),
                            variance_scale=float(rng.uniform(0.02, 0.2)))
        theta = np.array([rng.uniform(-3.0, 3.0)])
    elif family == "nonlinreg-known-sigma":
        model = make_nonlinear_regression(eta_curved(int(rng.integers(6, 20))),
                                          sigma_mode=("known", float(rng.uniform(0.5, 1.5))))
        theta = np.array([rng.uniform(-1.0, 1.0)])
    elif family == "nonlinreg-unknown-sigma":
        model = make_nonlinear_regression(eta_curved(int(rng.integers(6, 20))),
                                          sigma_mode="unknown")
        theta = np.array([rng.uniform(-1.0, 1.0), float(rng.uniform(0.6, 1.6))])
    else:
        raise ValueError(family)
    x = model.ref_sampler(int(rng.integers(0, 2**32)), 1)[0]
    y = model.quantile(x, theta)
    return model, theta, y


def iter_instances(family: str, count: int, seed: int = MASTER_SEED):
    key = FAMILY_NAMES.index(family)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(key,)))
    for _ in range(count):
        yield make_instance(family, rng)
