"""Simulator and optimizer for multi-user pinching-antenna systems."""

from .scene import (
    Deployment,
    EffectiveGains,
    GridSpec,
    InvalidConfigError,
    PinchingLayout,
    PowerAllocation,
    SystemConfig,
    channel_gain_map,
    derive_wavelengths,
    effective_gains,
    make_deployment,
    slot_positions,
    sum_rate,
    user_rate,
    user_rates,
)

__all__ = [
    "Deployment",
    "EffectiveGains",
    "GridSpec",
    "InvalidConfigError",
    "PinchingLayout",
    "PowerAllocation",
    "SystemConfig",
    "channel_gain_map",
    "derive_wavelengths",
    "effective_gains",
    "make_deployment",
    "slot_positions",
    "sum_rate",
    "user_rate",
    "user_rates",
]
