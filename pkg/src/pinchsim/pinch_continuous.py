"""Continuous PA placement for fixed powers.

The box constraint is removed by a tanh reparameterization, the rate
floors and spacing constraints become smoothed hinge penalties, and the
resulting unconstrained objective is maximized by gradient ascent with
Armijo backtracking inside a penalty-continuation outer loop.

Latent layouts are plain (K, N) float arrays; ``reparam_to_box`` decodes
them into positions inside [0, L].
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np
from scipy.special import expit

from .scene import (
    Deployment,
    PinchingLayout,
    SystemConfig,
    _gain_terms,
    _positions,
    _powers,
    rates_from_gains,
    user_rates,
)

LN2 = np.log(2.0)
ATANH_CLAMP = 1e-6


@dataclass
class GaaParams:
    beta0: float = 1e-4
    rho0: float = 1.0
    omega_beta: float = 10.0
    omega_rho: float = 0.1
    tau_init: float = 10.0
    omega_tau: float = 0.5
    armijo: float = 1e-4
    tolerance: float = 1e-6
    inner_max: int = 500
    outer_max: int = 8
    max_shrinks: int = 60
    spacing_form: str = "latent"  # latent | box

    def __post_init__(self):
        if not (0 < self.armijo < 1 and 0 < self.omega_tau < 1):
            raise ValueError("need armijo and omega_tau in (0, 1)")
        if not (self.omega_beta > 1 and 0 < self.omega_rho < 1):
            raise ValueError("need omega_beta > 1 and omega_rho in (0, 1)")


@dataclass
class PenaltyResult:
    layout: PinchingLayout
    latent: np.ndarray
    q_trace: list
    stage_lengths: list
    feasible: bool
    stalled: bool


def reparam_to_box(latent, config: SystemConfig) -> np.ndarray:
    """Map latent coordinates into the open deployment interval (0, L)."""
    return config.strip_length / 2.0 * (1.0 + np.tanh(np.asarray(latent, dtype=float)))


def reparam_from_box(positions, config: SystemConfig) -> np.ndarray:
    """Inverse map for initialization; boundary values are clamped inward."""
    x = _positions(positions)
    scaled = np.clip(2.0 * x / config.strip_length - 1.0,
                     -1.0 + ATANH_CLAMP, 1.0 - ATANH_CLAMP)
    return np.arctanh(scaled)


def _softplus(z, rho):
    """Smoothed hinge rho*ln(1+exp(z/rho)), overflow-safe."""
    return rho * np.logaddexp(0.0, np.asarray(z) / rho)


def _spacing_slack(latent, X, config: SystemConfig, form: str) -> np.ndarray:
    """Violation margin of each adjacent PA pair (positive = violated)."""
    if form == "latent":
        t = np.tanh(latent)
        return 2.0 * config.spacing / config.strip_length - (t[:, 1:] - t[:, :-1])
    if form == "box":
        return config.spacing - (X[:, 1:] - X[:, :-1])
    raise ValueError(f"unknown spacing form {form!r}")


def smoothed_penalties(latent, p, deployment: Deployment, config: SystemConfig,
                       rho: float, spacing_form: str = "latent"):
    """Smoothed rate-floor and spacing hinge terms, one per user / PA pair."""
    latent = np.asarray(latent, dtype=float)
    X = reparam_to_box(latent, config)
    rates = user_rates(X, p, deployment, config)
    kappa1 = _softplus(config.min_rates - rates, rho)
    kappa2 = _softplus(_spacing_slack(latent, X, config, spacing_form), rho)
    return kappa1, kappa2


def penalized_objective(latent, p, deployment: Deployment, config: SystemConfig,
                        beta: float, rho: float,
                        spacing_form: str = "latent") -> float:
    """Sum rate minus weighted smoothed constraint penalties."""
    latent = np.asarray(latent, dtype=float)
    X = reparam_to_box(latent, config)
    rates = user_rates(X, p, deployment, config)
    kappa1 = _softplus(config.min_rates - rates, rho)
    kappa2 = _softplus(_spacing_slack(latent, X, config, spacing_form), rho)
    return float(rates.sum() - beta * (kappa1.sum() + kappa2.sum()))


def _rate_gradient_parts(X, p, deployment: Deployment, config: SystemConfig):
    """Per-user rates plus the tensor dR[k]/dx[i, j] indexed as (i, k, j)."""
    p = _powers(p)
    terms, dist, phase = _gain_terms(X, deployment, config)
    alpha = terms.sum(axis=2)
    amp2 = np.abs(alpha) ** 2
    noise = config.effective_noise
    received = p @ amp2
    signal = p * np.diag(amp2)
    denom = received - signal + noise          # interference plus noise, per user
    total = denom + signal
    rates = np.log2(1.0 + signal / denom)

    eta = config.ref_gain
    lam, lam_g = config.wavelength, config.guided_wavelength
    dx = X[:, None, :] - deployment.user_positions[:, 0][None, :, None]
    # residual of the other PAs, rotated so its phase is relative to term j
    w = alpha[:, :, None] * np.exp(1j * phase) - eta / dist
    c2 = dist * dist
    dupsilon = (-2.0 * eta * eta * dx / (c2 * c2)
                - 2.0 * eta * w.real * dx / (c2 * dist)
                - (4.0 * np.pi / lam) * eta * w.imag * dx / c2
                - (4.0 * np.pi / lam_g) * eta * w.imag / dist)

    factor = (-p[:, None] * (p * np.diag(amp2))[None, :]
              / (LN2 * total * denom)[None, :])
    idx = np.arange(config.num_users)
    factor[idx, idx] = p / (LN2 * total)
    return rates, factor, dupsilon


def rate_position_gradient(k: int, i: int, j: int, layout, p,
                           deployment: Deployment, config: SystemConfig) -> float:
    """Derivative of user k's rate w.r.t. the x position of PA (i, j)."""
    X = _positions(layout)
    _, factor, dupsilon = _rate_gradient_parts(X, p, deployment, config)
    return float(factor[i, k] * dupsilon[i, k, j])


def objective_gradient(latent, p, deployment: Deployment, config: SystemConfig,
                       beta: float, rho: float,
                       spacing_form: str = "latent") -> np.ndarray:
    """Gradient of the penalized objective w.r.t. the latent coordinates."""
    latent = np.asarray(latent, dtype=float)
    X = reparam_to_box(latent, config)
    rates, factor, dupsilon = _rate_gradient_parts(X, p, deployment, config)

    # rate floors enter with weight 1 + beta*sigmoid(violation/rho) since
    # their hinge differentiates through -dR/dx
    weight = 1.0 + beta * expit((config.min_rates - rates) / rho)
    grad_box = np.einsum("ik,ikj->ij", factor * weight[None, :], dupsilon)

    if X.shape[1] > 1:
        slack = _spacing_slack(latent, X, config, spacing_form)
        scale = 2.0 / config.strip_length if spacing_form == "latent" else 1.0
        s2 = beta * scale * expit(slack / rho)
        grad_box[:, :-1] -= s2
        grad_box[:, 1:] += s2

    jac = config.strip_length / 2.0 * (1.0 - np.tanh(latent) ** 2)
    return grad_box * jac


class _Evaluator:
    """Fused objective/gradient for the inner loop.

    Same math as ``penalized_objective`` and ``objective_gradient`` with
    the per-scenario constants hoisted out of the call path; equivalence
    is pinned by tests.
    """

    def __init__(self, p, deployment: Deployment, config: SystemConfig,
                 beta: float, rho: float, spacing_form: str):
        self.p = _powers(p).astype(float)
        self.beta, self.rho = float(beta), float(rho)
        self.latent_form = spacing_form == "latent"
        if not self.latent_form and spacing_form != "box":
            raise ValueError(f"unknown spacing form {spacing_form!r}")
        self.L = config.strip_length
        self.delta = config.spacing
        self.lam = config.wavelength
        self.lam_g = config.guided_wavelength
        self.eta = config.ref_gain
        self.noise = config.effective_noise
        self.min_rates = config.min_rates
        self.x_users = deployment.user_positions[:, 0].copy()
        dy = deployment.user_positions[:, 1][None, :] - deployment.waveguide_y[:, None]
        # kept as separate addends so the fused path sums in the exact
        # order of the reference implementation (bitwise-equal results)
        self.dy2 = (dy * dy)[:, :, None]
        self.d2 = config.height ** 2

    def _channel(self, X):
        dx = X[:, None, :] - self.x_users[None, :, None]
        dist = np.sqrt(dx * dx + self.dy2 + self.d2)
        phase = (2 * np.pi / self.lam) * dist + (2 * np.pi / self.lam_g) * X[:, None, :]
        return dx, dist, phase, self.eta * np.exp(-1j * phase) / dist

    def _rates(self, amp2):
        received = self.p @ amp2
        signal = self.p * np.diagonal(amp2)
        denom = received - signal + self.noise
        return signal, denom, np.log2(1.0 + signal / denom)

    def _spacing_terms(self, t, X):
        if self.latent_form:
            return 2 * self.delta / self.L - (t[:, 1:] - t[:, :-1]), 2.0 / self.L
        return self.delta - (X[:, 1:] - X[:, :-1]), 1.0

    def objective(self, latent) -> float:
        t = np.tanh(latent)
        X = self.L / 2 * (1.0 + t)
        _, _, _, terms = self._channel(X)
        alpha = terms.sum(axis=2)
        _, _, rates = self._rates(np.abs(alpha) ** 2)
        kappa1 = self.rho * np.logaddexp(0.0, (self.min_rates - rates) / self.rho)
        total = rates.sum() - self.beta * kappa1.sum()
        if X.shape[1] > 1:
            slack, _ = self._spacing_terms(t, X)
            total -= self.beta * (self.rho * np.logaddexp(0.0, slack / self.rho)).sum()
        return float(total)

    def gradient(self, latent) -> np.ndarray:
        t = np.tanh(latent)
        X = self.L / 2 * (1.0 + t)
        dx, dist, phase, terms = self._channel(X)
        alpha = terms.sum(axis=2)
        amp2 = np.abs(alpha) ** 2
        signal, denom, rates = self._rates(amp2)
        total = denom + signal

        w = alpha[:, :, None] * np.exp(1j * phase) - self.eta / dist
        c2 = dist * dist
        dupsilon = (-2.0 * self.eta * self.eta * dx / (c2 * c2)
                    - 2.0 * self.eta * w.real * dx / (c2 * dist)
                    - (4.0 * np.pi / self.lam) * self.eta * w.imag * dx / c2
                    - (4.0 * np.pi / self.lam_g) * self.eta * w.imag / dist)
        factor = (-self.p[:, None] * (self.p * np.diagonal(amp2))[None, :]
                  / (LN2 * total * denom)[None, :])
        idx = np.arange(len(self.p))
        factor[idx, idx] = self.p / (LN2 * total)

        weight = 1.0 + self.beta * expit((self.min_rates - rates) / self.rho)
        grad_box = np.einsum("ik,ikj->ij", factor * weight[None, :], dupsilon)
        if X.shape[1] > 1:
            slack, scale = self._spacing_terms(t, X)
            s2 = self.beta * scale * expit(slack / self.rho)
            grad_box[:, :-1] -= s2
            grad_box[:, 1:] += s2
        return grad_box * (self.L / 2 * (1.0 - t * t))


def finite_difference_gradient(latent, p, deployment: Deployment,
                               config: SystemConfig, beta: float, rho: float,
                               spacing_form: str = "latent",
                               step: float = 1e-6) -> np.ndarray:
    """Central-difference check value for the analytic gradient.

    ``step`` is a length in meters; each latent coordinate moves by the
    equivalent latent amount so decoded positions shift by ~step even
    where the tanh map is nearly saturated.
    """
    latent = np.asarray(latent, dtype=float)
    jac = config.strip_length / 2.0 * (1.0 - np.tanh(latent) ** 2)
    steps = np.minimum(step / np.maximum(jac, 1e-12), 1.0)
    grad = np.zeros_like(latent)
    for idx in np.ndindex(latent.shape):
        up, down = latent.copy(), latent.copy()
        up[idx] += steps[idx]
        down[idx] -= steps[idx]
        grad[idx] = (penalized_objective(up, p, deployment, config, beta, rho, spacing_form)
                     - penalized_objective(down, p, deployment, config, beta, rho, spacing_form)
                     ) / (2.0 * steps[idx])
    return grad


def gradient_ascent(objective, gradient, x0, params: GaaParams,
                    upper_bound: float = np.inf):
    """Backtracked gradient ascent on an arbitrary smooth objective.

    Each step restarts the step size at tau_init and shrinks until the
    Armijo condition holds; a step that cannot be made productive within
    the shrink budget terminates the run with the stall flag. Step sizes
    whose required increase exceeds ``upper_bound`` (a proven cap on the
    objective) cannot pass the condition and are skipped unevaluated.
    """
    x = np.asarray(x0, dtype=float).copy()
    value = objective(x)
    trace = [value]
    stalled = False
    for _ in range(params.inner_max):
        g = gradient(x)
        gnorm2 = float((g * g).sum())
        if gnorm2 == 0.0:
            break
        tau = params.tau_init
        accepted = False
        for _ in range(params.max_shrinks):
            required = value + params.armijo * tau * gnorm2
            if required <= upper_bound:
                cand = x + tau * g
                cand_value = objective(cand)
                if cand_value >= required:
                    accepted = True
                    break
            tau *= params.omega_tau
        if not accepted:
            stalled = True
            break
        x, previous, value = cand, value, cand_value
        trace.append(value)
        if value - previous <= params.tolerance:
            break
    return x, trace, stalled


def gaa_inner(latent_init, p, deployment: Deployment, config: SystemConfig,
              params: GaaParams, beta: float | None = None,
              rho: float | None = None):
    """One penalty stage: ascend the smoothed objective at fixed beta, rho."""
    beta = params.beta0 if beta is None else beta
    rho = params.rho0 if rho is None else rho
    evaluator = _Evaluator(p, deployment, config, beta, rho, params.spacing_form)

    # penalties are non-negative, amplitudes at most N*eta/d, interference
    # at least zero: the objective can never exceed this cap
    peak = (config.pas_per_waveguide * config.ref_gain / config.height) ** 2
    cap = float(np.log2(1.0 + _powers(p) * peak / config.effective_noise).sum())
    return gradient_ascent(evaluator.objective, evaluator.gradient, latent_init,
                           params, upper_bound=cap)


def default_layout(config: SystemConfig) -> np.ndarray:
    """PAs uniformly spread over the deployment range, one row per waveguide."""
    n = np.arange(config.pas_per_waveguide) + 0.5
    row = n * config.strip_length / config.pas_per_waveguide
    return np.tile(row, (config.num_users, 1))


def project_spacing(X, config: SystemConfig) -> np.ndarray:
    """Snap residual spacing violations to exact feasibility.

    Rows are sorted, a left-to-right sweep enforces the minimum gap, and
    rows pushed past the right edge shift back in one piece (which fits
    because (N-1)*spacing <= L by config invariant).
    """
    X = np.sort(np.clip(_positions(X), 0.0, config.strip_length), axis=1)
    delta = config.spacing
    for row in X:
        for n in range(1, len(row)):
            if row[n] < row[n - 1] + delta:
                row[n] = row[n - 1] + delta
        if row[-1] > config.strip_length:
            row -= row[-1] - config.strip_length
    return X


def _constraints_met(X, p, deployment, config, rate_tol=1e-6, gap_tol=1e-9):
    rates = user_rates(X, p, deployment, config)
    if np.any(rates < config.min_rates - rate_tol):
        return False
    if X.shape[1] > 1:
        gaps = np.diff(np.sort(X, axis=1), axis=1)
        if np.any(gaps < config.spacing - gap_tol):
            return False
    return True


def penalty_outer(X_init, p, deployment: Deployment, config: SystemConfig,
                  params: GaaParams | None = None) -> PenaltyResult:
    """Penalty continuation: tighten beta and rho until constraints hold."""
    params = params or GaaParams()
    X = np.sort(np.clip(_positions(X_init), 0.0, config.strip_length), axis=1)
    latent = reparam_from_box(X, config)
    beta, rho = params.beta0, params.rho0
    q_trace: list = []
    stage_lengths: list = []
    stalled = False
    for _ in range(params.outer_max):
        latent, trace, stage_stalled = gaa_inner(latent, p, deployment, config,
                                                 params, beta, rho)
        stalled = stalled or stage_stalled
        q_trace.extend(trace)
        stage_lengths.append(len(trace))
        X = np.sort(reparam_to_box(latent, config), axis=1)
        latent = reparam_from_box(X, config)
        if _constraints_met(X, p, deployment, config):
            break
        beta *= params.omega_beta
        rho *= params.omega_rho
    X = project_spacing(X, config)
    feasible = _constraints_met(X, p, deployment, config)
    return PenaltyResult(layout=PinchingLayout(X, "continuous"),
                         latent=reparam_from_box(X, config),
                         q_trace=q_trace, stage_lengths=stage_lengths,
                         feasible=feasible, stalled=stalled)
