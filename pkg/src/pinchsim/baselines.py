"""Comparison schemes: fixed-position digital beamforming and two-stage
own-signal-maximizing (MRT-style) PA activation."""

from __future__ import annotations

from dataclasses import dataclass, replace
import numpy as np
from scipy.optimize import brentq

from .scene import (
    Deployment,
    EffectiveGains,
    InvalidConfigError,
    PinchingLayout,
    PowerAllocation,
    SystemConfig,
    rates_from_gains,
    _powers,
)
from .power_alloc import InfeasibleError, ScaParams, sca_power_allocation

ZF_CONDITION_LIMIT = 1e12


@dataclass
class ConventionalResult:
    gains: EffectiveGains
    power: PowerAllocation
    rates: np.ndarray
    sum_rate: float
    zf_fallback: bool
    feasible: bool


def _fixed_antenna_channels(deployment: Deployment, config: SystemConfig):
    """Per-user channel row vectors from the two centroid-mounted antennas."""
    L, delta, d = config.strip_length, config.spacing, config.height
    antennas = np.array([[(L - delta) / 2, 0.0, d],
                         [(L + delta) / 2, 0.0, d]])
    diff = deployment.user_positions[:, None, :] - antennas[None, :, :]
    dist = np.linalg.norm(diff, axis=2)
    k0 = 2.0 * np.pi / config.wavelength
    return config.ref_gain * np.exp(-1j * k0 * dist) / dist  # (user, antenna)


def conventional_fixed(deployment: Deployment, config: SystemConfig,
                       sca_params: ScaParams | None = None) -> ConventionalResult:
    """Fixed antennas above the area centroid with digital beamforming.

    Zero-forcing directions remove cross-talk; the per-stream powers are
    then optimized by the same power-allocation routine. A rank-deficient
    channel falls back to matched-filter directions, flagged.
    """
    if config.num_users != 2:
        raise InvalidConfigError("the fixed-antenna baseline is a two-user scheme")
    H = _fixed_antenna_channels(deployment, config)
    zf_fallback = np.linalg.cond(H) > ZF_CONDITION_LIMIT
    if not zf_fallback:
        inv = np.linalg.inv(H)
        directions = inv / np.linalg.norm(inv, axis=0, keepdims=True)
    else:
        directions = (H.conj() / np.linalg.norm(H, axis=1, keepdims=True)).T
    gains = EffectiveGains((H @ directions).T)  # [stream, user]

    # beamformer norms already carry the array split, so the noise term is
    # a single sigma^2 per user
    cfg = replace(config, pas_per_waveguide=1)
    p_init = np.full(2, cfg.max_power / 2)
    feasible = True
    try:
        trace = sca_power_allocation(p_init, gains, cfg, sca_params)
    except InfeasibleError:
        feasible = False
        trace = sca_power_allocation(p_init, gains, cfg, sca_params,
                                     relax_min_rates=True)
    rates = rates_from_gains(gains.amp2, trace.power.powers, cfg.effective_noise)
    return ConventionalResult(gains=gains, power=trace.power, rates=rates,
                              sum_rate=float(rates.sum()),
                              zf_fallback=zf_fallback, feasible=feasible)


def mrt_stage1(deployment: Deployment, config: SystemConfig) -> np.ndarray:
    """Minimum-spacing PA cluster centered on each served user (path-loss
    minimization), shifted as one piece to respect the deployment range."""
    N, L, delta = config.pas_per_waveguide, config.strip_length, config.spacing
    rows = []
    for k in range(config.num_users):
        lo = deployment.user_positions[k, 0] - (N - 1) * delta / 2
        lo = float(np.clip(lo, 0.0, L - (N - 1) * delta))
        rows.append(lo + delta * np.arange(N))
    return np.array(rows)


def _composite_phase(x, x_user, dy2, config: SystemConfig):
    dist = np.sqrt((x - x_user) ** 2 + dy2)
    return (2 * np.pi / config.wavelength) * dist \
        + (2 * np.pi / config.guided_wavelength) * x


def mrt_continuous(deployment: Deployment, config: SystemConfig,
                   p=None) -> PinchingLayout:
    """Two-stage activation: cluster at the user, then align each PA's
    composite phase to a common residue within half a wavelength.

    The refinement window is additionally capped so the spacing floor and
    the deployment range survive; a PA whose window holds no alignment
    root keeps its clamped position (coherence is then partial).
    """
    del p  # placement maximizes the served user's signal regardless of power
    X0 = mrt_stage1(deployment, config)
    lam, delta, L = config.wavelength, config.spacing, config.strip_length
    N = config.pas_per_waveguide
    X = np.empty_like(X0)
    for k in range(config.num_users):
        x_user = deployment.user_positions[k, 0]
        dy2 = (deployment.user_positions[k, 1] - deployment.waveguide_y[k]) ** 2 \
            + config.height ** 2
        prev = -np.inf
        for n in range(N):
            lo = max(X0[k, n] - lam / 2, prev + delta, 0.0)
            hi = min(X0[k, n] + lam / 2, L - (N - 1 - n) * delta)
            phi = lambda x: _composite_phase(x, x_user, dy2, config)
            m_lo = int(np.ceil(phi(lo) / (2 * np.pi)))
            m_hi = int(np.floor(phi(hi) / (2 * np.pi)))
            # take the leftmost root so later PAs keep room for their own
            # alignment roots under the spacing floor
            if m_lo <= m_hi:
                X[k, n] = brentq(lambda x: phi(x) - 2 * np.pi * m_lo, lo, hi)
            else:
                X[k, n] = np.clip(X0[k, n], lo, hi)
            prev = X[k, n]
    return PinchingLayout(X, "continuous")
