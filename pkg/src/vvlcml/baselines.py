"""Curve-fit path-loss model families and goodness-of-fit metrics.

Four families are supported: piecewise Lambertian, linear, exponential with
a fixed extinction coefficient, and the two-term exponential. All fitting
happens in the dB domain; the Lambertian and exponential gains are
converted through -10*log10(gain) with transmit power normalized to 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

FAMILIES = ("lambertian", "linear", "exponential", "two_term")

# Receiver aperture: 1 mm diameter active area, as a fixed context constant.
DEFAULT_APERTURE_M2 = math.pi * (0.5e-3) ** 2
# Clear-weather atmospheric extinction, 1/m; fixed, never fitted.
CLEAR_WEATHER_EXTINCTION = 1.5e-5


def lambertian_order(half_power_angle_deg: float) -> float:
    """Directivity order n = -ln 2 / ln cos(half-power angle)."""
    if not 0.0 < half_power_angle_deg < 90.0:
        raise ValueError("half-power angle must be in (0, 90) degrees")
    return -math.log(2.0) / math.log(math.cos(math.radians(half_power_angle_deg)))


@dataclass(frozen=True)
class LambertianFit:
    n: float
    gamma: float
    aperture_a: float = DEFAULT_APERTURE_M2
    half_power_angle: float | None = None
    incidence_phi: float = 0.0
    irradiance_theta: float = 0.0

    family = "lambertian"

    def coefficients(self) -> dict:
        return {"n": self.n, "gamma": self.gamma, "aperture_a": self.aperture_a,
                "incidence_phi": self.incidence_phi,
                "irradiance_theta": self.irradiance_theta}


@dataclass(frozen=True)
class LinearFit:
    alpha: float
    beta: float

    family = "linear"

    def coefficients(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta}


@dataclass(frozen=True)
class ExponentialFit:
    a_geom: float
    b_decay: float
    c_ext: float = CLEAR_WEATHER_EXTINCTION

    family = "exponential"

    def coefficients(self) -> dict:
        return {"a_geom": self.a_geom, "b_decay": self.b_decay, "c_ext": self.c_ext}


@dataclass(frozen=True)
class TwoTermExpFit:
    a1: float
    a2: float
    a3: float
    a4: float

    family = "two_term"

    def coefficients(self) -> dict:
        return {"a1": self.a1, "a2": self.a2, "a3": self.a3, "a4": self.a4}


@dataclass(frozen=True)
class FitResult:
    """Fitted model plus optimizer diagnostics."""

    model: object
    converged: bool
    iterations: int
    sse: float
    sse_trace: tuple[float, ...]

    @property
    def family(self) -> str:
        return self.model.family


@dataclass(frozen=True)
class GoodnessOfFit:
    """RMSE, norm of residuals, and R^2 of a fitted curve on a sample set.

    ``r_squared`` is None when the targets have zero variance.
    """

    rmse: float
    nor: float
    r_squared: float | None
    n: int


def eval_fit(model, distance):
    """Closed-form dB path loss of a fitted family at the given distance."""
    d = np.asarray(distance, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    if isinstance(model, TwoTermExpFit):
        out = model.a1 * np.exp(model.a2 * d) + model.a3 * np.exp(model.a4 * d)
    elif isinstance(model, LinearFit):
        out = model.alpha * d + model.beta
    elif isinstance(model, LambertianFit):
        gain_const = ((model.n + 1.0) * model.aperture_a
                      * math.cos(math.radians(model.incidence_phi)) ** model.n
                      * math.cos(math.radians(model.irradiance_theta)) / (2.0 * math.pi))
        out = -10.0 * math.log10(gain_const) + 10.0 * model.gamma * np.log10(d)
    elif isinstance(model, ExponentialFit):
        out = (-10.0 * math.log10(model.a_geom)
               + 20.0 * model.b_decay * np.log10(d)
               + 10.0 * model.c_ext * d * math.log10(math.e))
    else:
        raise TypeError(f"unknown fit model {type(model).__name__}")
    return float(out) if np.isscalar(distance) and out.ndim == 0 else out


def _ols(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Slope and intercept of the least-squares line through (x, y)."""
    a = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    return float(coef[0]), float(coef[1])


def _levenberg_marquardt(residual_jac, theta0, max_iterations=500, rel_tol=1e-10):
    """Damped Gauss-Newton minimization of 0.5*||r(theta)||^2.

    Only improving steps are accepted, so the returned SSE trace is
    non-increasing. Returns best-so-far with converged=False when the
    iteration budget runs out or damping saturates.
    """
    theta = np.asarray(theta0, dtype=float)
    r, jac = residual_jac(theta)
    sse = float(r @ r)
    trace = [sse]
    lam = 1e-3
    converged = False
    iterations = 0
    while iterations < max_iterations:
        iterations += 1
        jtj = jac.T @ jac
        grad = jac.T @ r
        scale = np.clip(np.diag(jtj), 1e-12, None)
        accepted = False
        while lam <= 1e14:
            try:
                step = np.linalg.solve(jtj + lam * np.diag(scale), -grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            cand = theta + step
            r_new, jac_new = residual_jac(cand)
            sse_new = float(r_new @ r_new)
            if np.isfinite(sse_new) and sse_new <= sse:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            break
        rel_improvement = (sse - sse_new) / max(sse, np.finfo(float).tiny)
        theta, r, jac, sse = cand, r_new, jac_new, sse_new
        trace.append(sse)
        lam = max(lam * 0.3, 1e-12)
        if rel_improvement < rel_tol:
            converged = True
            break
    return theta, sse, converged, iterations, tuple(trace)


def _two_term_residual_jac(d: np.ndarray, y: np.ndarray):
    def fn(theta):
        a1, a2, a3, a4 = theta
        e2 = np.exp(np.clip(a2 * d, -700, 700))
        e4 = np.exp(np.clip(a4 * d, -700, 700))
        r = a1 * e2 + a3 * e4 - y
        jac = np.column_stack([e2, a1 * d * e2, e4, a3 * d * e4])
        return r, jac
    return fn


def _two_term_inits(y: np.ndarray, n_starts: int = 8):
    base = np.array([max(y.max(), 1e-6), 0.001, -max(y.max(), 1e-6) / 2.0, -0.05])
    rng = np.random.default_rng(1729)  # fixed: inits must not depend on callers
    inits = [base]
    for _ in range(n_starts - 1):
        inits.append(base * (1.0 + 0.25 * rng.standard_normal(4)))
    return inits


def fit_model(family: str, distances, path_loss_db, init=None) -> FitResult:
    """Least-squares fit of one model family to (distance, dB loss) pairs.

    The linear, Lambertian, and exponential families reduce to ordinary
    least squares (the latter two after a log-distance transform). The
    two-term exponential runs damped Gauss-Newton from eight jittered
    starting points and keeps the lowest-SSE result, unless an explicit
    ``init`` pins a single start.
    """
    d = np.asarray(distances, dtype=float)
    y = np.asarray(path_loss_db, dtype=float)
    if d.shape != y.shape or d.ndim != 1:
        raise ValueError("distances and path_loss_db must be 1-D and equal length")
    n_coef = {"lambertian": 2, "linear": 2, "exponential": 2, "two_term": 4}.get(family)
    if n_coef is None:
        raise ValueError(f"unknown family {family!r}")
    if np.unique(d).size < max(4, n_coef):
        raise ValueError(f"need at least {max(4, n_coef)} distinct distances")
    if np.any(d <= 0):
        raise ValueError("distances must be positive")

    if family == "linear":
        alpha, beta = _ols(d, y)
        sse = float(np.sum((alpha * d + beta - y) ** 2))
        return FitResult(LinearFit(alpha, beta), True, 0, sse, (sse,))

    if family == "lambertian":
        slope, intercept = _ols(10.0 * np.log10(d), y)
        # intercept = -10*log10((n+1)*A/(2*pi)) at zero incidence/irradiance
        n = 2.0 * math.pi * 10.0 ** (-intercept / 10.0) / DEFAULT_APERTURE_M2 - 1.0
        model = LambertianFit(n=n, gamma=slope)
        sse = float(np.sum((eval_fit(model, d) - y) ** 2))
        return FitResult(model, True, 0, sse, (sse,))

    if family == "exponential":
        c = CLEAR_WEATHER_EXTINCTION
        adj = y - 10.0 * c * d * math.log10(math.e)
        slope, intercept = _ols(np.log10(d), adj)
        model = ExponentialFit(a_geom=10.0 ** (-intercept / 10.0), b_decay=slope / 20.0)
        sse = float(np.sum((eval_fit(model, d) - y) ** 2))
        return FitResult(model, True, 0, sse, (sse,))

    # two_term
    residual_jac = _two_term_residual_jac(d, y)
    inits = [np.asarray(init, dtype=float)] if init is not None else _two_term_inits(y)
    best = None
    for idx, theta0 in enumerate(inits):
        theta, sse, converged, iterations, trace = _levenberg_marquardt(residual_jac, theta0)
        if best is None or sse < best[0]:
            best = (sse, idx, theta, converged, iterations, trace)
    sse, _, theta, converged, iterations, trace = best
    model = TwoTermExpFit(*[float(v) for v in theta])
    return FitResult(model, converged, iterations, sse, trace)


def goodness(model, distances, path_loss_db) -> GoodnessOfFit:
    """RMSE, residual norm, and R^2 of a model on labeled samples."""
    d = np.asarray(distances, dtype=float)
    y = np.asarray(path_loss_db, dtype=float)
    if y.size == 0:
        raise ValueError("goodness requires at least one sample")
    residuals = eval_fit(model, d) - y
    sse = float(residuals @ residuals)
    rmse = math.sqrt(sse / y.size)
    nor = math.sqrt(sse)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r_squared = None if ss_tot == 0.0 else 1.0 - sse / ss_tot
    return GoodnessOfFit(rmse=rmse, nor=nor, r_squared=r_squared, n=y.size)


def fit_report(result: FitResult, gof: GoodnessOfFit) -> dict:
    """JSON-ready summary of a fit in the canonical report schema."""
    return {
        "family": result.family,
        "coefficients": result.model.coefficients(),
        "rmse_db": gof.rmse,
        "nor": gof.nor,
        "r_squared": gof.r_squared,
        "converged": result.converged,
        "iterations": result.iterations,
    }
