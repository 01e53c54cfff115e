import numpy as np
import pytest

from pinchsim.scene import SystemConfig, make_deployment


@pytest.fixture
def table1_config():
    """The default two-user scenario used throughout the experiments."""
    return SystemConfig()


@pytest.fixture
def two_user_deployment(table1_config):
    return make_deployment(table1_config, [(3.0, -5.0), (7.0, 5.0)])


def random_deployment(config, rng):
    """Uniform user drop inside each waveguide's serving strip."""
    from pinchsim.scene import waveguide_y_offsets

    ys = waveguide_y_offsets(config)
    xy = []
    for k in range(config.num_users):
        x = rng.uniform(0.0, config.strip_length)
        y = rng.uniform(ys[k] - config.strip_width / 2, ys[k] + config.strip_width / 2)
        xy.append((x, y))
    return make_deployment(config, xy)


def random_layout(config, rng):
    """Random spacing-feasible continuous layout."""
    from pinchsim.scene import PinchingLayout

    K, N = config.num_users, config.pas_per_waveguide
    L, delta = config.strip_length, config.spacing
    rows = []
    for _ in range(K):
        slack = L - (N - 1) * delta
        bumps = np.sort(rng.uniform(0.0, slack, size=N))
        rows.append(bumps + delta * np.arange(N))
    return PinchingLayout(np.array(rows))


def random_powers(config, rng):
    p = rng.uniform(0.0, 1.0, size=config.num_users)
    return p * (config.max_power * rng.uniform(0.2, 1.0) / p.sum())
