"""Scenario constants, geometry, channel models, and rate computations.

Everything here is a pure function of its inputs; the optimizer modules
build on these primitives. Units are SI throughout (watts, meters, Hz),
rates are in bits/s/Hz.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

LIGHT_SPEED = 299792458.0  # m/s


class InvalidConfigError(ValueError):
    """Scenario parameters violate their invariants."""


def _per_user(value, num_users: int) -> tuple:
    """Broadcast a scalar to a per-user tuple; pass sequences through."""
    if np.isscalar(value):
        return (float(value),) * num_users
    values = tuple(float(v) for v in value)
    if len(values) != num_users:
        raise InvalidConfigError(
            f"per-user value has length {len(values)}, expected {num_users}")
    return values


@dataclass(frozen=True)
class SystemConfig:
    """Physical and algorithmic constants of one scenario.

    ``noise_power`` and ``min_rate`` accept either a scalar (shared by
    all users) or one value per user. ``min_spacing=None`` resolves to
    half a free-space wavelength.
    """

    num_users: int = 2
    pas_per_waveguide: int = 4
    num_slots: int = 20
    carrier_freq: float = 28.0e9
    refractive_index: float = 1.4
    height: float = 3.0
    strip_width: float = 6.0
    strip_length: float = 10.0
    min_spacing: float | None = None
    max_power: float = 0.1
    noise_power: float | tuple = 1e-12
    min_rate: float | tuple = 2.0
    light_speed: float = LIGHT_SPEED

    def __post_init__(self):
        object.__setattr__(self, "noise_power",
                           _per_user(self.noise_power, self.num_users))
        object.__setattr__(self, "min_rate",
                           _per_user(self.min_rate, self.num_users))
        self._validate()

    def _validate(self):
        if self.num_users < 1:
            raise InvalidConfigError("need at least one user")
        if self.pas_per_waveguide < 1:
            raise InvalidConfigError("need at least one PA per waveguide")
        if self.num_slots < self.pas_per_waveguide:
            raise InvalidConfigError("fewer candidate slots than PAs")
        if self.carrier_freq <= 0:
            raise InvalidConfigError("carrier frequency must be positive")
        if self.refractive_index < 1:
            raise InvalidConfigError("refractive index below 1")
        if self.height <= 0 or self.strip_width <= 0 or self.strip_length <= 0:
            raise InvalidConfigError("geometry lengths must be positive")
        if self.max_power <= 0:
            raise InvalidConfigError("power budget must be positive")
        if any(s <= 0 for s in self.noise_power):
            raise InvalidConfigError("noise powers must be positive")
        if any(r < 0 for r in self.min_rate):
            raise InvalidConfigError("min rates must be non-negative")
        if self.min_spacing is not None and self.min_spacing < 0:
            raise InvalidConfigError("min spacing must be non-negative")
        if (self.pas_per_waveguide - 1) * self.spacing > self.strip_length:
            raise InvalidConfigError("PAs cannot fit at the minimum spacing")

    @cached_property
    def wavelength(self) -> float:
        return self.light_speed / self.carrier_freq

    @cached_property
    def guided_wavelength(self) -> float:
        return self.wavelength / self.refractive_index

    @cached_property
    def ref_gain(self) -> float:
        """Channel amplitude at 1 m reference distance."""
        return self.wavelength / (4.0 * np.pi)

    @cached_property
    def spacing(self) -> float:
        if self.min_spacing is None:
            return self.wavelength / 2.0
        return self.min_spacing

    @cached_property
    def noise_powers(self) -> np.ndarray:
        return np.asarray(self.noise_power, dtype=float)

    @cached_property
    def min_rates(self) -> np.ndarray:
        return np.asarray(self.min_rate, dtype=float)

    @cached_property
    def effective_noise(self) -> np.ndarray:
        """Per-user denominator noise N*sigma_k^2 (per-antenna power split)."""
        return self.pas_per_waveguide * self.noise_powers


def derive_wavelengths(config: SystemConfig) -> tuple[float, float]:
    """Free-space and guided wavelengths (meters) for the configured carrier."""
    if config.carrier_freq <= 0:
        raise InvalidConfigError("carrier frequency must be positive")
    lam = config.light_speed / config.carrier_freq
    return lam, lam / config.refractive_index


def waveguide_y_offsets(config: SystemConfig) -> np.ndarray:
    """Lateral waveguide positions: strip k is the width-W band centered on it."""
    k = np.arange(config.num_users, dtype=float)
    return (k - (config.num_users - 1) / 2.0) * config.strip_width


@dataclass(frozen=True)
class Deployment:
    """User positions (K,3) on the floor plus per-waveguide lateral offsets (K,)."""

    user_positions: np.ndarray
    waveguide_y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "user_positions",
                           np.atleast_2d(np.asarray(self.user_positions, dtype=float)))
        object.__setattr__(self, "waveguide_y",
                           np.atleast_1d(np.asarray(self.waveguide_y, dtype=float)))

    def feed_points(self, config: SystemConfig) -> np.ndarray:
        """Feed point of each waveguide: x=0 at height d."""
        pts = np.zeros((len(self.waveguide_y), 3))
        pts[:, 1] = self.waveguide_y
        pts[:, 2] = config.height
        return pts

    def validate(self, config: SystemConfig):
        if self.user_positions.shape != (config.num_users, 3):
            raise InvalidConfigError("user positions must be (K, 3)")
        if self.waveguide_y.shape != (config.num_users,):
            raise InvalidConfigError("waveguide offsets must be (K,)")
        if np.any(self.user_positions[:, 2] != 0.0):
            raise InvalidConfigError("users must lie on the floor (z = 0)")
        x = self.user_positions[:, 0]
        if np.any(x < 0) or np.any(x > config.strip_length):
            raise InvalidConfigError("user x outside the deployment range")
        dy = np.abs(self.user_positions[:, 1] - self.waveguide_y)
        if np.any(dy > config.strip_width / 2 + 1e-12):
            raise InvalidConfigError("user outside its serving strip")


def make_deployment(config: SystemConfig, user_xy) -> Deployment:
    """Deployment from per-user (x, y) floor coordinates, strips per config."""
    xy = np.atleast_2d(np.asarray(user_xy, dtype=float))
    users = np.zeros((config.num_users, 3))
    users[:, :2] = xy
    dep = Deployment(users, waveguide_y_offsets(config))
    dep.validate(config)
    return dep


def slot_positions(config: SystemConfig) -> np.ndarray:
    """Discrete candidate x positions: A points uniform on [0, L] inclusive."""
    if config.num_slots == 1:
        return np.zeros(1)
    return np.linspace(0.0, config.strip_length, config.num_slots)


@dataclass
class PinchingLayout:
    """PA x positions, one row per waveguide. ``mode`` is continuous|discrete."""

    positions: np.ndarray
    mode: str = "continuous"

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if self.mode not in ("continuous", "discrete"):
            raise InvalidConfigError(f"unknown layout mode {self.mode!r}")

    def sorted(self) -> "PinchingLayout":
        """Canonical form: each row ascending."""
        return PinchingLayout(np.sort(self.positions, axis=1), self.mode)

    def is_feasible(self, config: SystemConfig, tol: float = 1e-9) -> bool:
        if self.mode == "continuous":
            return feasible_continuous(self.positions, config, tol)
        return feasible_discrete(self.positions, config, tol)


def feasible_continuous(positions, config: SystemConfig, tol: float = 1e-9) -> bool:
    """Membership in the box-and-spacing feasible set, to tolerance ``tol``."""
    x = np.sort(np.atleast_2d(positions), axis=1)
    if np.any(x < -tol) or np.any(x > config.strip_length + tol):
        return False
    if x.shape[1] > 1 and np.any(np.diff(x, axis=1) < config.spacing - tol):
        return False
    return True


def feasible_discrete(positions, config: SystemConfig, tol: float = 1e-9) -> bool:
    """Each entry on the slot grid, entries distinct within a row."""
    x = np.atleast_2d(positions)
    grid = slot_positions(config)
    idx = np.abs(x[:, :, None] - grid[None, None, :]).argmin(axis=2)
    if np.any(np.abs(x - grid[idx]) > tol):
        return False
    for row in idx:
        if len(set(row.tolist())) != len(row):
            return False
    return True


@dataclass
class PowerAllocation:
    """Per-user transmit powers in watts."""

    powers: np.ndarray

    def __post_init__(self):
        self.powers = np.atleast_1d(np.asarray(self.powers, dtype=float))

    def validate(self, config: SystemConfig, tol: float = 1e-9):
        if self.powers.shape != (config.num_users,):
            raise InvalidConfigError("power vector must have one entry per user")
        if np.any(self.powers < -tol):
            raise InvalidConfigError("negative transmit power")
        if self.powers.sum() > config.max_power + tol:
            raise InvalidConfigError("power budget exceeded")


@dataclass
class EffectiveGains:
    """Complex effective amplitudes; ``gains[i, k]`` couples waveguide i to user k."""

    gains: np.ndarray

    @property
    def amp2(self) -> np.ndarray:
        """Squared magnitudes (the rate formula's channel powers)."""
        return np.abs(self.gains) ** 2


def _positions(layout) -> np.ndarray:
    return layout.positions if isinstance(layout, PinchingLayout) else np.atleast_2d(np.asarray(layout, dtype=float))


def _powers(p) -> np.ndarray:
    return p.powers if isinstance(p, PowerAllocation) else np.atleast_1d(np.asarray(p, dtype=float))


def user_pa_distance(user, pa) -> float:
    """Euclidean distance between a floor user and an elevated PA."""
    diff = np.asarray(pa, dtype=float) - np.asarray(user, dtype=float)
    return float(np.linalg.norm(diff))


def _distances(X, deployment: Deployment, config: SystemConfig) -> np.ndarray:
    """Distance tensor (K_wg, K_user, N) from PA (i, n) to user k."""
    xu = deployment.user_positions[:, 0]
    yu = deployment.user_positions[:, 1]
    dx = xu[None, :, None] - X[:, None, :]
    dy = yu[None, :, None] - deployment.waveguide_y[:, None, None]
    return np.sqrt(dx * dx + dy * dy + config.height ** 2)


def _gain_terms(X, deployment: Deployment, config: SystemConfig):
    """Per-PA complex contributions and geometry shared by rates and gradients.

    Returns (terms, dist, phase) with shape (K_wg, K_user, N); summing the
    terms over the last axis gives the effective gain matrix.
    """
    dist = _distances(X, deployment, config)
    lam, lam_g = config.wavelength, config.guided_wavelength
    phase = (2.0 * np.pi / lam) * dist + (2.0 * np.pi / lam_g) * X[:, None, :]
    terms = config.ref_gain * np.exp(-1j * phase) / dist
    return terms, dist, phase


def free_space_channel(user_index: int, waveguide_index: int, layout,
                       deployment: Deployment, config: SystemConfig) -> np.ndarray:
    """Free-space channel vector from one waveguide's PAs to one user."""
    X = _positions(layout)
    user = deployment.user_positions[user_index]
    pa = np.stack([X[waveguide_index],
                   np.full(X.shape[1], deployment.waveguide_y[waveguide_index]),
                   np.full(X.shape[1], config.height)], axis=1)
    dist = np.linalg.norm(pa - user[None, :], axis=1)
    k0 = 2.0 * np.pi / config.wavelength
    return config.ref_gain * np.exp(-1j * k0 * dist) / dist


def waveguide_channel(waveguide_index: int, layout, config: SystemConfig) -> np.ndarray:
    """In-guide propagation vector; unit magnitude, phase set by the feed distance."""
    X = _positions(layout)
    return np.exp(-2j * np.pi * X[waveguide_index] / config.guided_wavelength)


def effective_gains(layout, deployment: Deployment, config: SystemConfig) -> EffectiveGains:
    """Effective amplitude from each waveguide to each user (inner product h.g)."""
    terms, _, _ = _gain_terms(_positions(layout), deployment, config)
    return EffectiveGains(terms.sum(axis=2))


def amp2_matrix(layout, deployment: Deployment, config: SystemConfig) -> np.ndarray:
    X = _positions(layout)
    terms, _, _ = _gain_terms(X, deployment, config)
    alpha = terms.sum(axis=2)
    return np.abs(alpha) ** 2


def rates_from_gains(amp2: np.ndarray, p, noise_eff: np.ndarray) -> np.ndarray:
    """Per-user rates from channel powers ``amp2[i, k]`` and denominator noise."""
    p = _powers(p)
    received = p @ amp2
    signal = p * np.diag(amp2)
    interference = received - signal
    return np.log2(1.0 + signal / (interference + noise_eff))


def user_rates(layout, p, deployment: Deployment, config: SystemConfig) -> np.ndarray:
    return rates_from_gains(amp2_matrix(layout, deployment, config), p,
                            config.effective_noise)


def user_rate(k: int, layout, p, deployment: Deployment, config: SystemConfig) -> float:
    """Achievable rate of user k under interference from the other waveguides."""
    return float(user_rates(layout, p, deployment, config)[k])


def sum_rate(layout, p, deployment: Deployment, config: SystemConfig) -> float:
    return float(user_rates(layout, p, deployment, config).sum())


@dataclass(frozen=True)
class GridSpec:
    """Rectangular probe grid for channel-gain maps."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    nx: int
    ny: int

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        if self.nx < 1 or self.ny < 1:
            raise ValueError("channel-gain grid must contain at least one point")
        return (np.linspace(self.x_min, self.x_max, self.nx),
                np.linspace(self.y_min, self.y_max, self.ny))


def channel_gain_map(waveguide_index: int, layout, grid: GridSpec,
                     deployment: Deployment, config: SystemConfig) -> np.ndarray:
    """Channel power from one waveguide at every grid point, in dB.

    Normalized so the grid maximum sits at 0 dB. Returned array has shape
    (ny, nx) with [iy, ix] indexing.
    """
    X = _positions(layout)
    xs, ys = grid.points()
    gx, gy = np.meshgrid(xs, ys)  # (ny, nx)
    dx = gx[:, :, None] - X[waveguide_index][None, None, :]
    dy = gy[:, :, None] - deployment.waveguide_y[waveguide_index]
    dist = np.sqrt(dx * dx + dy * dy + config.height ** 2)
    lam, lam_g = config.wavelength, config.guided_wavelength
    phase = (2.0 * np.pi / lam) * dist + (2.0 * np.pi / lam_g) * X[waveguide_index][None, None, :]
    alpha = (config.ref_gain * np.exp(-1j * phase) / dist).sum(axis=2)
    gain = np.abs(alpha) ** 2
    return 10.0 * np.log10(gain / gain.max())
