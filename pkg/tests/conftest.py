import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from stegozoo import stegattack, tensorstore, zooforge  # noqa: E402


@pytest.fixture(scope="session")
def small_manifest():
    return zooforge.ZooManifest(zoo_id="t", count=24, seed=3)


@pytest.fixture(scope="session")
def small_zoo(small_manifest):
    return zooforge.generate_zoo(small_manifest)


@pytest.fixture(scope="session")
def payload():
    return stegattack.Payload.random(64, seed=11)


def random_record(rng, arch="3-5-2", hidden="tanh", output="identity", scale=1.0):
    a = tensorstore.Arch.parse(arch, hidden=hidden, output=output)
    tensors = [(scale * rng.standard_normal(shape)).astype(np.float32) for _, shape in a.tensor_specs()]
    return tensorstore.from_tensors(a, tensors, {"model_id": "r"})
