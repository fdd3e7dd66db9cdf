#!/usr/bin/env python3
"""Regenerate the bundled fixture networks and dataset.

Dev tool, not part of the library contract: trains small float networks on a
synthetic 10-class problem with plain numpy, quantizes them to 8-bit weights,
calibrates the per-layer requantization shifts, checks the integer-pipeline
accuracy, and writes the JSON fixtures the test suite and CLI demos load.

Run from the repository root:

    python3 tools/make_fixtures.py [--out src/xbarsec/fixtures]
"""

import argparse
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from xbarsec.network import Dataset, NetworkModel, evaluate_reference, infer_reference
from xbarsec.tensors import LayerSpec, QuantTensor, quantize

SEED = 20240811
FEATURES = 64          # flat view of an 8x8 single-channel image
CLASSES = 10
TRAIN_PER_CLASS = 600
EVAL_PER_CLASS = 60
NOISE_SIGMA = 36.0


def synth_split(rng, prototypes, per_class):
    xs, ys = [], []
    for cls in range(CLASSES):
        noise = rng.normal(0.0, NOISE_SIGMA, (per_class, FEATURES))
        xs.append(np.clip(np.rint(prototypes[cls] + noise), 0, 255).astype(np.int64))
        ys.append(np.full(per_class, cls, dtype=np.int64))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    order = rng.permutation(len(y))
    return x[order], y[order]


def softmax_xent_grad(logits, labels):
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    loss = -np.log(p[np.arange(len(labels)), labels] + 1e-12).mean()
    p[np.arange(len(labels)), labels] -= 1.0
    return loss, p / len(labels)


class Adam:
    def __init__(self, params, lr=1e-3):
        self.params = params
        self.lr = lr
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1, b2, eps = 0.9, 0.999, 1e-8
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m[:] = b1 * m + (1 - b1) * g
            v[:] = b2 * v + (1 - b2) * g * g
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            p -= self.lr * mhat / (np.sqrt(vhat) + eps)


def train_mlp(rng, x, y, dims, epochs=50, batch=128):
    ws = []
    for m, n in zip(dims, dims[1:]):
        ws.append(rng.normal(0.0, np.sqrt(2.0 / m), (m, n)))
    opt = Adam(ws, lr=2e-3)
    xf = x / 255.0
    n_train = len(y)
    for epoch in range(epochs):
        order = rng.permutation(n_train)
        for start in range(0, n_train, batch):
            idx = order[start:start + batch]
            a = xf[idx]
            acts = [a]
            for w in ws[:-1]:
                a = np.maximum(a @ w, 0.0)
                acts.append(a)
            logits = a @ ws[-1]
            _, dlogits = softmax_xent_grad(logits, y[idx])
            grads = [None] * len(ws)
            grads[-1] = acts[-1].T @ dlogits
            da = dlogits @ ws[-1].T
            for li in range(len(ws) - 2, -1, -1):
                da = da * (acts[li + 1] > 0)
                grads[li] = acts[li].T @ da
                if li:
                    da = da @ ws[li].T
            opt.step(grads)
    return ws


def float_mlp_accuracy(ws, x, y):
    a = x / 255.0
    for w in ws[:-1]:
        a = np.maximum(a @ w, 0.0)
    return float(((a @ ws[-1]).argmax(axis=1) == y).mean())


def calibrate_shifts(layers, num_classes, input_bits, x_cal):
    """Smallest per-layer shifts that keep integer activations in range."""
    shifts = []
    acts = x_cal
    for li, layer in enumerate(layers):
        model = NetworkModel(
            layers=[layer.with_weight(layer.weight)], num_classes=layer.out_features,
            input_bits=input_bits)
        pre = infer_reference(
            NetworkModel(layers=[LayerSpec(kind=layer.kind, weight=layer.weight,
                                           in_shape=layer.in_shape,
                                           out_channels=layer.out_channels,
                                           kernel=layer.kernel, stride=layer.stride,
                                           padding=layer.padding, relu=False)],
                         num_classes=layer.out_features, input_bits=input_bits),
            acts)
        if not layer.relu:
            shifts.append(0)
            break
        peak = int(np.maximum(pre, 0).max())
        shift = max(0, int(np.ceil(np.log2(max(peak, 1) / 255.0))))
        shifts.append(shift)
        acts = np.minimum(np.maximum(pre, 0) >> shift, 255)
    return shifts


def assemble(layers_raw, shifts, num_classes, input_bits=8):
    layers = []
    for (layer, _), shift in zip(layers_raw, shifts):
        layers.append(LayerSpec(
            kind=layer.kind, weight=layer.weight, in_shape=layer.in_shape,
            out_channels=layer.out_channels, kernel=layer.kernel,
            stride=layer.stride, padding=layer.padding,
            out_shift=shift, relu=layer.relu))
    return NetworkModel(layers=layers, num_classes=num_classes, input_bits=input_bits)


def build_mlp(rng, x_train, y_train, x_eval, y_eval):
    dims = (FEATURES, 32, 16, CLASSES)
    ws = train_mlp(rng, x_train, y_train, dims, epochs=60)
    print(f"  float eval accuracy: {float_mlp_accuracy(ws, x_eval / 255.0 * 255, y_eval):.4f}")
    raw = []
    for i, w in enumerate(ws):
        last = i == len(ws) - 1
        qw = quantize(w, 8, True)
        raw.append((LayerSpec(kind="fc", weight=qw, relu=not last), None))
    shifts = calibrate_shifts([l for l, _ in raw], CLASSES, 8, x_train[:1000])
    shifts += [0] * (len(raw) - len(shifts))
    model = assemble(raw, shifts, CLASSES)
    return model


def train_cnn(rng, x_train, y_train, epochs=50, batch=128):
    """Conv 3x3 (1->4 channels) + FC, trained via the im2col view."""
    kh = kw = 3
    oc = 4
    oh = ow = 6
    k = rng.normal(0.0, np.sqrt(2.0 / 9), (9, oc))          # (c*kh*kw, oc)
    wfc = rng.normal(0.0, np.sqrt(2.0 / (oc * oh * ow)), (oc * oh * ow, CLASSES))
    opt = Adam([k, wfc], lr=2e-3)
    xf = x_train / 255.0
    patch_idx = _patch_indices()
    for epoch in range(epochs):
        order = rng.permutation(len(y_train))
        for start in range(0, len(y_train), batch):
            idx = order[start:start + batch]
            imgs = xf[idx]                               # (b, 64)
            patches = imgs[:, patch_idx]                 # (b, 36, 9)
            pre = patches @ k                            # (b, 36, oc)
            h = np.maximum(pre, 0.0)
            hflat = np.transpose(h, (0, 2, 1)).reshape(len(idx), -1)
            logits = hflat @ wfc
            _, dlogits = softmax_xent_grad(logits, y_train[idx])
            dwfc = hflat.T @ dlogits
            dh = (dlogits @ wfc.T).reshape(len(idx), oc, oh * ow).transpose(0, 2, 1)
            dpre = dh * (pre > 0)
            dk = np.einsum("bpi,bpo->io", patches, dpre)
            opt.step([dk, dwfc])
    return k, wfc


def _patch_indices():
    """Flat-index gather table for 3x3 stride-1 patches of an 8x8 image."""
    idx = np.zeros((36, 9), dtype=np.int64)
    p = 0
    for i in range(6):
        for j in range(6):
            cell = 0
            for di in range(3):
                for dj in range(3):
                    idx[p, cell] = (i + di) * 8 + (j + dj)
                    cell += 1
            p += 1
    return idx


def build_cnn(rng, x_train, y_train):
    k, wfc = train_cnn(rng, x_train, y_train)
    qk = quantize(k.T.reshape(4, 1, 3, 3), 8, True)
    qfc = quantize(wfc, 8, True)
    conv = LayerSpec(kind="conv", weight=qk, in_shape=(1, 8, 8), out_channels=4,
                     kernel=(3, 3), stride=1, padding=0, relu=True)
    fc = LayerSpec(kind="fc", weight=qfc, relu=False)
    shifts = calibrate_shifts([conv, fc], CLASSES, 8, x_train[:1000])
    shifts += [0] * (2 - len(shifts))
    return assemble([(conv, None), (fc, None)], shifts, CLASSES)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=os.path.join("src", "xbarsec", "fixtures"))
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)

    rng = np.random.default_rng(SEED)
    prototypes = rng.integers(40, 216, (CLASSES, FEATURES)).astype(np.float64)
    x_train, y_train = synth_split(rng, prototypes, TRAIN_PER_CLASS)
    x_eval, y_eval = synth_split(rng, prototypes, EVAL_PER_CLASS)

    dataset = Dataset(
        inputs=QuantTensor.from_array(x_eval, bits=8, signed=False),
        labels=y_eval)
    dataset.save(os.path.join(args.out, "dataset.json"))
    print(f"dataset: {len(dataset)} samples, {CLASSES} balanced classes")

    print("training MLP fixture (64-32-16-10)")
    mlp = build_mlp(rng, x_train, y_train, x_eval, y_eval)
    acc = evaluate_reference(mlp, dataset)
    print(f"  integer pipeline accuracy: {acc:.4f} "
          f"(shifts {[l.out_shift for l in mlp.layers]})")
    if acc < 0.88:
        raise SystemExit("MLP fixture accuracy too low; adjust training")
    mlp.save(os.path.join(args.out, "mlp.json"))

    print("training CNN fixture (conv 3x3x4 + fc)")
    cnn = build_cnn(rng, x_train, y_train)
    acc = evaluate_reference(cnn, dataset)
    print(f"  integer pipeline accuracy: {acc:.4f} "
          f"(shifts {[l.out_shift for l in cnn.layers]})")
    cnn.save(os.path.join(args.out, "cnn.json"))

    print(f"fixtures written to {args.out}")


if __name__ == "__main__":
    main()
