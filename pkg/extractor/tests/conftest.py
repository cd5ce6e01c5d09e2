import sys
from pathlib import Path

import numpy as np
import pytest
import torch
from PIL import Image

sys.path.insert(0, str(Path(__file__).parent))

from toymodels import toy_backbone  # noqa: E402


@pytest.fixture(scope="session")
def checkpoint(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "toy.pt"
    torch.save(toy_backbone(), path)
    return path


@pytest.fixture
def image_dir(tmp_path):
    rng = np.random.default_rng(99)
    d = tmp_path / "images"
    d.mkdir()
    for i in range(4):
        arr = rng.integers(0, 256, size=(160, 200, 3), dtype=np.uint8)
        Image.fromarray(arr).save(d / f"img{i}.png")
    gray = rng.integers(0, 256, size=(120, 120), dtype=np.uint8)
    Image.fromarray(gray, mode="L").save(d / "gray4.png")
    return d
