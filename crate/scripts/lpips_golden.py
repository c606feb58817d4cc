#!/usr/bin/env python3
"""Independent LPIPS reference for the committed test backbone.

Reads crates/core/assets/lpips_test_backbone.json, evaluates the two fixed
test images in float64 with plain numpy and writes
crates/core/tests/data/lpips_golden.json.
"""
import json
import pathlib

import numpy as np

ROOT = pathlib.Path(__file__).resolve().parent.parent
WEIGHTS = ROOT / "crates/core/assets/lpips_test_backbone.json"
OUT = ROOT / "crates/core/tests/data/lpips_golden.json"
SIZE = 32


def image(kind):
    c, y, x = np.meshgrid(np.arange(3), np.arange(SIZE), np.arange(SIZE), indexing="ij")
    if kind == "a":
        k = (x * 7 + y * 13 + c * 29) % 64
    else:
        k = (x * 5 + y * 3 + c * 11 + (x * y) % 7) % 64
    unit = (k.astype(np.float32) / np.float32(63.0)).astype(np.float32)
    return (unit * np.float32(2.0) - np.float32(1.0)).astype(np.float64)


def conv3x3(x, weight, bias, stride):
    cin, h, w = x.shape
    cout = bias.shape[0]
    wt = np.asarray(weight, dtype=np.float64).reshape(cout, cin, 3, 3)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    oh = (h + 2 - 3) // stride + 1
    ow = (w + 2 - 3) // stride + 1
    out = np.zeros((cout, oh, ow))
    for i in range(3):
        for j in range(3):
            patch = xp[:, i : i + stride * (oh - 1) + 1 : stride, j : j + stride * (ow - 1) + 1 : stride]
            out += np.einsum("oc,chw->ohw", wt[:, :, i, j], patch)
    return out + np.asarray(bias, dtype=np.float64)[:, None, None]


def features(x, layers):
    feats = []
    for layer in layers:
        x = np.maximum(conv3x3(x, layer["weight"], np.asarray(layer["bias"]), layer["stride"]), 0.0)
        feats.append(x)
    return feats


def lpips(a, b, layers):
    total = 0.0
    for fa, fb, layer in zip(features(a, layers), features(b, layers), layers):
        na = fa / (np.sqrt((fa**2).sum(axis=0, keepdims=True)) + 1e-10)
        nb = fb / (np.sqrt((fb**2).sum(axis=0, keepdims=True)) + 1e-10)
        lin = np.asarray(layer["lin"], dtype=np.float64)[:, None, None]
        total += (lin * (na - nb) ** 2).sum(axis=0).mean()
    return float(total)


def main():
    layers = json.loads(WEIGHTS.read_text())["layers"]
    value = lpips(image("a"), image("b"), layers)
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps({"size": SIZE, "lpips": value}, indent=2) + "\n")
    print(f"lpips(a, b) = {value!r} -> {OUT}")


if __name__ == "__main__":
    main()
