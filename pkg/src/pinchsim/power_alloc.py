"""Power allocation for fixed pinching beamforming.

Successively maximizes a concave lower bound of the sum rate (tangent at
the current iterate) over the power simplex with per-user minimum-rate
constraints. The convex inner problem is tiny (K variables), so it is
solved by a self-contained log-barrier interior-point method with damped
Newton steps.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from .scene import EffectiveGains, PowerAllocation, SystemConfig, rates_from_gains, _powers

LN2 = np.log(2.0)


class InfeasibleError(RuntimeError):
    """The minimum-rate constraints cannot be met within the power budget."""


@dataclass
class ScaParams:
    tolerance: float = 1e-6
    max_iters: int = 200
    barrier_init: float = 1.0
    barrier_shrink: float = 10.0
    duality_tol: float = 1e-8
    newton_tol: float = 1e-10
    newton_max: int = 50


@dataclass
class ScaTrace:
    objectives: list
    power: PowerAllocation
    converged: bool

    @property
    def iterations(self) -> int:
        return len(self.objectives) - 1


@dataclass
class AffineBound:
    """First-order expansion of the interference log term around a reference."""

    constant: float
    coeffs: np.ndarray
    reference: np.ndarray

    def __call__(self, p) -> float:
        p = _powers(p)
        return self.constant + float(self.coeffs @ (p - self.reference))


def _amp2(gains) -> np.ndarray:
    if isinstance(gains, EffectiveGains):
        return gains.amp2
    arr = np.atleast_2d(np.asarray(gains))
    if np.iscomplexobj(arr):
        return np.abs(arr) ** 2
    return arr.astype(float)


def taylor_upper_bound(k: int, p_ref, gains, config: SystemConfig) -> AffineBound:
    """Affine upper bound of the interference-plus-noise log at ``p_ref``."""
    G = _amp2(gains)
    p_ref = _powers(p_ref)
    noise = config.effective_noise[k]
    cross = G[:, k].copy()
    cross[k] = 0.0
    denom = cross @ p_ref + noise
    return AffineBound(constant=float(np.log2(denom)),
                       coeffs=cross / (LN2 * denom),
                       reference=p_ref.copy())


def concave_lower_bound(k: int, p, p_ref, gains, config: SystemConfig) -> float:
    """Tangent minorant of user k's rate; exact at ``p = p_ref``."""
    G = _amp2(gains)
    p = _powers(p)
    total = G[:, k] @ p + config.effective_noise[k]
    return float(np.log2(total)) - taylor_upper_bound(k, p_ref, gains, config)(p)


class _Subproblem:
    """Concave maximization of the summed rate minorants at a reference point."""

    def __init__(self, G, p_ref, config: SystemConfig, min_rates):
        K = config.num_users
        self.K = K
        self.A = G.T.copy()          # A[k] @ p + noise[k] = received power at user k
        self.noise = config.effective_noise.copy()
        self.pmax = config.max_power
        self.min_rates = np.asarray(min_rates, dtype=float)
        self.p_ref = p_ref.copy()
        cross = self.A.copy()
        cross[np.arange(K), np.arange(K)] = 0.0
        denom = cross @ p_ref + self.noise
        self.const = np.log2(denom)
        self.D = cross / (LN2 * denom[:, None])

    def lower_rates(self, p) -> np.ndarray:
        u = self.A @ p + self.noise
        return np.log2(u) - (self.const + self.D @ (p - self.p_ref))

    def objective(self, p) -> float:
        return float(self.lower_rates(p).sum())

    def slacks(self, p) -> np.ndarray:
        rate = self.lower_rates(p) - self.min_rates
        power = self.pmax - p.sum()
        return np.concatenate([rate, [power], p])

    def _barrier_value(self, p, mu) -> float:
        # box and budget checks come first: they keep the rate logs defined
        if np.any(p <= 0.0):
            return -np.inf
        power = self.pmax - p.sum()
        if power <= 0.0:
            return -np.inf
        rate = self.lower_rates(p) - self.min_rates
        if np.any(rate <= 0.0):
            return -np.inf
        return self.objective(p) + mu * (np.log(rate).sum() + np.log(power)
                                         + np.log(p).sum())

    def _barrier_derivs(self, p, mu):
        K = self.K
        u = self.A @ p + self.noise
        inv_u = 1.0 / (LN2 * u)
        grad_rate = self.A * inv_u[:, None] - self.D      # (K users, K powers)
        rate_slack = self.lower_rates(p) - self.min_rates
        power_slack = self.pmax - p.sum()

        grad = grad_rate.sum(axis=0)
        grad += mu * (grad_rate / rate_slack[:, None]).sum(axis=0)
        grad += -mu / power_slack + mu / p

        curve = 1.0 / (LN2 * u * u)
        weights = -(1.0 + mu / rate_slack) * curve
        hess = (self.A.T * weights) @ self.A
        scaled = grad_rate / rate_slack[:, None]
        hess -= mu * scaled.T @ scaled
        hess -= mu / power_slack ** 2
        hess -= mu * np.diag(1.0 / p ** 2)
        return grad, hess

    def maximize(self, p0, params: ScaParams) -> np.ndarray:
        p = p0.copy()
        mu = params.barrier_init
        n_constraints = 2 * self.K + 1
        while True:
            for _ in range(params.newton_max):
                grad, hess = self._barrier_derivs(p, mu)
                try:
                    step = np.linalg.solve(-hess, grad)
                except np.linalg.LinAlgError:
                    step = np.linalg.lstsq(-hess, grad, rcond=None)[0]
                decrement = float(grad @ step)
                if decrement <= 2 * params.newton_tol:
                    break
                base = self._barrier_value(p, mu)
                t = 1.0
                for _ in range(60):
                    cand = p + t * step
                    if self._barrier_value(cand, mu) >= base + 0.25 * t * decrement:
                        p = cand
                        break
                    t *= 0.5
                else:
                    break  # no productive step at this scale
            if n_constraints * mu < params.duality_tol:
                return p
            mu /= params.barrier_shrink


def _strictly_feasible_start(sub: _Subproblem, p_ref) -> np.ndarray | None:
    interior = np.full(sub.K, sub.pmax / (2 * sub.K))
    for eps in (0.0, 1e-12, 1e-9, 1e-6, 1e-3):
        cand = (1 - eps) * p_ref + eps * interior
        if np.all(sub.slacks(cand) > 0):
            return cand
    return None


def _phase1(sub: _Subproblem, params: ScaParams) -> np.ndarray:
    """Max-min-slack search for a strictly feasible point of the subproblem."""
    K = sub.K
    p = np.full(K, sub.pmax / (2 * K))
    w = float(np.min(sub.lower_rates(p) - sub.min_rates)) - 1.0
    mu = params.barrier_init
    best_w = -np.inf

    def value(p, w, mu):
        if np.any(p <= 0):
            return -np.inf
        power_slack = sub.pmax - p.sum()
        if power_slack <= 0:
            return -np.inf
        rate_slack = sub.lower_rates(p) - sub.min_rates - w
        if np.any(rate_slack <= 0):
            return -np.inf
        return w + mu * (np.log(rate_slack).sum() + np.log(power_slack)
                         + np.log(p).sum())

    while mu > 1e-10:
        for _ in range(params.newton_max):
            u = sub.A @ p + sub.noise
            inv_u = 1.0 / (LN2 * u)
            grad_rate = sub.A * inv_u[:, None] - sub.D
            rs = sub.lower_rates(p) - sub.min_rates - w
            ps = sub.pmax - p.sum()

            gp = mu * (grad_rate / rs[:, None]).sum(axis=0) - mu / ps + mu / p
            gw = 1.0 - mu * np.sum(1.0 / rs)
            grad = np.concatenate([gp, [gw]])

            curve = 1.0 / (LN2 * u * u)
            hpp = (sub.A.T * (-mu * curve / rs)) @ sub.A
            scaled = grad_rate / rs[:, None]
            hpp -= mu * scaled.T @ scaled
            hpp -= mu / ps ** 2
            hpp -= mu * np.diag(1.0 / p ** 2)
            hpw = mu * (grad_rate / (rs ** 2)[:, None]).sum(axis=0)
            hww = -mu * np.sum(1.0 / rs ** 2)
            hess = np.zeros((K + 1, K + 1))
            hess[:K, :K] = hpp
            hess[:K, K] = hpw
            hess[K, :K] = hpw
            hess[K, K] = hww

            try:
                step = np.linalg.solve(-hess, grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(-hess, grad, rcond=None)[0]
            decrement = float(grad @ step)
            if decrement <= 2 * params.newton_tol:
                break
            base = value(p, w, mu)
            t = 1.0
            for _ in range(60):
                cand_p = p + t * step[:K]
                cand_w = w + t * step[K]
                if value(cand_p, cand_w, mu) >= base + 0.25 * t * decrement:
                    p, w = cand_p, cand_w
                    break
                t *= 0.5
            else:
                break
            if np.all(sub.slacks(p) > 1e-10):
                return p
        best_w = max(best_w, w)
        mu /= params.barrier_shrink
    if np.all(sub.slacks(p) > 0):
        return p
    raise InfeasibleError(
        f"minimum rates unattainable for this layout (best slack {best_w:.3e})")


def solve_convex_subproblem(p_ref, gains, config: SystemConfig,
                            params: ScaParams | None = None,
                            min_rates=None) -> PowerAllocation:
    """Maximize the summed rate minorants over the convex feasible set."""
    params = params or ScaParams()
    p_ref = _powers(p_ref)
    if min_rates is None:
        min_rates = config.min_rates
    sub = _Subproblem(_amp2(gains), p_ref, config, min_rates)
    start = _strictly_feasible_start(sub, p_ref)
    if start is None:
        start = _phase1(sub, params)
    return PowerAllocation(sub.maximize(start, params))


def sca_power_allocation(p_init, gains, config: SystemConfig,
                         params: ScaParams | None = None,
                         relax_min_rates: bool = False) -> ScaTrace:
    """Iterate tangent-minorant maximizations until the sum rate stalls.

    The recorded objective is the true sum rate, which is non-decreasing
    across iterations; an iterate that would decrease it (inner-solver
    noise) terminates the loop instead of being applied.
    """
    params = params or ScaParams()
    G = _amp2(gains)
    noise = config.effective_noise
    min_rates = np.zeros(config.num_users) if relax_min_rates else config.min_rates

    p = _powers(p_init).copy()
    trace = [float(rates_from_gains(G, p, noise).sum())]
    feasible = bool(np.all(rates_from_gains(G, p, noise) >= min_rates - 1e-9))
    converged = False
    for _ in range(params.max_iters):
        p_new = solve_convex_subproblem(p, G, config, params, min_rates).powers
        new_value = float(rates_from_gains(G, p_new, noise).sum())
        if feasible and new_value < trace[-1]:
            converged = True
            break
        p = p_new
        feasible = True  # the subproblem enforces the rate constraints
        trace.append(new_value)
        if len(trace) >= 2 and trace[-1] - trace[-2] < params.tolerance:
            converged = True
            break
    return ScaTrace(objectives=trace, power=PowerAllocation(p), converged=converged)
