import numpy as np
import pytest
import torch

from semgan.config import TrainConfig
from semgan.toyworld import ToyWorldCfg, generate_toy_domains

TINY = dict(crop_size=32, gen_res_blocks=1, gen_base_width=4, disc_layers=2, disc_base_width=4,
            seg_base_width=4, batch_size=2, pool_size=4, eval_every=1, sample_every=0)


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture(scope="session")
def toy_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    generate_toy_domains(ToyWorldCfg(image_size=32, counts=(4, 2, 2), seed=3), root, force=True)
    return root


@pytest.fixture
def tiny_cfg(toy_root):
    return TrainConfig(data_root=str(toy_root), epochs=1, **TINY)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
