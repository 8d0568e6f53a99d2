import numpy as np
import pytest

from spkfuse.network import NetworkConfig


def tiny_config(**overrides) -> NetworkConfig:
    """Smallest legal topology; float64 so exact oracles apply."""
    base = dict(
        feat_dim=5, channels=8, initial_kernel=3, block_kernels=(3, 3),
        block_dilations=(1, 2), res2_scale=2, se_bottleneck=4,
        encoder_layers=1, encoder_heads=2, encoder_ffn_dim=8,
        pre_pooling_dim=8, pooling_heads=2, pooling_bottleneck=4,
        embedding_dim=6, num_speakers=3,
    )
    base.update(overrides)
    return NetworkConfig(**base)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
