# Copyright 2026 The maskedit Authors
# SPDX-License-Identifier: Apache-2.0
"""Writes tests/fixtures/segment_phrase_response.json.

A /segment response in the service wire format: a 96x96 irregular blob (a
rotated ellipse joined to a smaller disk) for a 64x64 request image, so
replay also exercises the resize path of the client.
"""

import json
import pathlib

import numpy as np

SIZE = 96


def blob() -> np.ndarray:
    y, x = np.mgrid[0:SIZE, 0:SIZE].astype(float)
    a = np.deg2rad(25.0)
    u = (x - 44) * np.cos(a) + (y - 50) * np.sin(a)
    v = -(x - 44) * np.sin(a) + (y - 50) * np.cos(a)
    ellipse = (u / 26.0) ** 2 + (v / 15.0) ** 2 <= 1.0
    disk = (x - 66) ** 2 + (y - 30) ** 2 <= 11.0 ** 2
    return (ellipse | disk).astype(np.uint8)


def rle(bits: np.ndarray) -> list:
    flat = bits.reshape(-1)
    counts, current, run = [], 0, 0
    for b in flat:
        if b != current:
            counts.append(run)
            run, current = 0, b
        run += 1
    counts.append(run)
    return counts


def main() -> None:
    root = pathlib.Path(__file__).resolve().parents[1]
    out = root / "tests" / "fixtures" / "segment_phrase_response.json"
    body = {"mask": {"height": SIZE, "width": SIZE, "counts": [int(c) for c in rle(blob())]},
            "confidence": 0.91}
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(body) + "\n")
    print(out)


if __name__ == "__main__":
    main()
