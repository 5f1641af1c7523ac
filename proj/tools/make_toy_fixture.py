#!/usr/bin/env python3
# Copyright 2026 The Impersona Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Writes the toy vision fixture: 10 classes x 20 image vectors.

Each class description vector is the normalized centroid of its images, so
cosine-argmax classification of the fixture is exact.
"""

import pathlib
import re
import struct

import numpy as np

CLASSES = [
    "Red Finch", "Blue Heron", "Amber Owl", "Green Parrot", "Gray Wren",
    "Orange Oriole", "Snowy Egret", "Black Swift", "Indigo Bunting", "Yellow Warbler",
]
DIMS = 32
IMAGES_PER_CLASS = 20


def slug(name):
    return re.sub(r"_+", "_", re.sub(r"[^a-z0-9]", "_", name.lower())).strip("_")


def unit(v):
    return v / np.linalg.norm(v)


def main():
    root = pathlib.Path(__file__).resolve().parent.parent / "fixtures"
    rng = np.random.default_rng(20260101)
    records = []
    images = {}
    for name in CLASSES:
        anchor = unit(rng.standard_normal(DIMS))
        imgs = [unit(anchor + 0.15 * rng.standard_normal(DIMS)).astype(np.float32)
                for _ in range(IMAGES_PER_CLASS)]
        images[name] = imgs
        centroid = unit(np.mean(np.asarray(imgs, dtype=np.float64), axis=0))
        records.append((f"toy/{slug(name)}", centroid.astype(np.float32)))
    for name in CLASSES:
        for k, v in enumerate(images[name]):
            records.append((f"image:{slug(name)}/{k:02d}", v))

    centroids = np.stack([unit(r[1].astype(np.float64)) for r in records[:len(CLASSES)]])
    for c, name in enumerate(CLASSES):
        for v in images[name]:
            v = unit(v.astype(np.float64))
            assert int(np.argmax(centroids @ v)) == c, name

    with open(root / "toy.emb", "wb") as f:
        f.write(b"IMPEMB01")
        f.write(struct.pack("<II", DIMS, len(records)))
        for key, v in records:
            k = key.encode()
            f.write(struct.pack("<I", len(k)))
            f.write(k)
            f.write(np.asarray(v, dtype="<f4").tobytes())
    (root / "toy.txt").write_text("\n".join(CLASSES) + "\n")


if __name__ == "__main__":
    main()
