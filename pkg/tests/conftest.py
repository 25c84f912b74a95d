import pytest
import torch


@pytest.fixture(autouse=True, scope="session")
def _pinned_threads():
    torch.set_num_threads(1)


@pytest.fixture
def tiny_cfg():
    from coordup import UpsamplerConfig

    return UpsamplerConfig(channels=8, num_blocks=1, heads=1, pe_freqs=2, seed=0)
