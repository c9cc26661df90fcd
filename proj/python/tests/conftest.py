# Copyright 2026 The maskedit Authors
# SPDX-License-Identifier: Apache-2.0

import os
from pathlib import Path

import numpy as np
import pytest

import maskedit


@pytest.fixture
def source_dir() -> Path:
    return Path(os.environ.get("MASKEDIT_SOURCE_DIR", Path(__file__).resolve().parents[2]))


@pytest.fixture
def scene():
    """16x16 toy-sized image with a square object and its mask."""
    rng = np.random.default_rng(3)
    yy, xx = np.mgrid[0:16, 0:16] / 15.0
    image = np.stack([0.2 + 0.5 * xx, 0.3 + 0.4 * yy, 0.5 * np.ones_like(xx)], axis=-1)
    mask = np.zeros((16, 16))
    mask[5:11, 4:10] = 1.0
    image[mask > 0] = [0.9, 0.2, 0.1]
    image += 0.02 * rng.standard_normal(image.shape)
    return maskedit.Image(np.clip(image, 0.0, 1.0)), maskedit.SpatialMask(mask)
