"""Small fully-connected regressor trained with Adam, in plain numpy."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MODEL_MAGIC = b"DDNN"
MODEL_VERSION = 1
ACTIVATIONS = {"linear": 0, "leaky_relu": 1}
_ACT_NAMES = {v: k for k, v in ACTIVATIONS.items()}
LEAK = 0.01


class TrainingDiverged(RuntimeError):
    def __init__(self, msg, checkpoint):
        super().__init__(msg)
        self.checkpoint = checkpoint


@dataclass
class MlpModel:
    sizes: list
    activations: list
    weights: list
    biases: list
    in_mean: np.ndarray
    in_std: np.ndarray
    out_mean: float = 0.0
    out_std: float = 1.0
    log_target: bool = True
    history: dict = field(default_factory=dict, compare=False)

    @classmethod
    def init(cls, sizes, seed=0, activations=None, log_target=True):
        rng = np.random.default_rng(seed)
        if activations is None:
            activations = ["leaky_relu"] * (len(sizes) - 2) + ["linear"]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
            biases.append(np.zeros(fan_out))
        n_in = sizes[0]
        return cls(list(sizes), list(activations), weights, biases, np.zeros(n_in), np.ones(n_in),
                   log_target=log_target)

    # -- forward / backward ------------------------------------------------

    def _forward(self, z):
        acts = [z]
        for w, b, act in zip(self.weights, self.biases, self.activations):
            z = z @ w + b
            if act == "leaky_relu":
                z = np.where(z > 0, z, LEAK * z)
            acts.append(z)
        return acts

    def _backward(self, acts, grad_out):
        gw, gb = [], []
        g = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            if self.activations[i] == "leaky_relu":
                g = g * np.where(acts[i + 1] > 0, 1.0, LEAK)
            gw.append(acts[i].T @ g)
            gb.append(g.sum(axis=0))
            g = g @ self.weights[i].T
        return gw[::-1], gb[::-1]

    def predict_scaled(self, x):
        z = (np.asarray(x, dtype=float) - self.in_mean) / self.in_std
        return self._forward(z)[-1][:, 0]

    def predict(self, x) -> np.ndarray:
        """Destandardised outputs for feature rows ``x`` (n, n_in)."""
        y = self.predict_scaled(np.atleast_2d(x)) * self.out_std + self.out_mean
        return np.exp(y) if self.log_target else y

    def parameters(self):
        return self.weights + self.biases

    # -- serialisation -----------------------------------------------------

    def to_bytes(self) -> bytes:
        out = [MODEL_MAGIC, struct.pack("<II", MODEL_VERSION, len(self.sizes))]
        out.append(struct.pack(f"<{len(self.sizes)}I", *self.sizes))
        out.append(bytes(ACTIVATIONS[a] for a in self.activations))
        out.append(struct.pack("<B", int(self.log_target)))
        for w, b in zip(self.weights, self.biases):
            out.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
            out.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
        out.append(np.asarray(self.in_mean, dtype="<f8").tobytes())
        out.append(np.asarray(self.in_std, dtype="<f8").tobytes())
        out.append(struct.pack("<dd", self.out_mean, self.out_std))
        return b"".join(out)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "MlpModel":
        if raw[:4] != MODEL_MAGIC:
            raise ValueError("not a model file")
        version, n = struct.unpack_from("<II", raw, 4)
        if version != MODEL_VERSION:
            raise ValueError(f"unsupported model version {version}")
        pos = 12
        sizes = list(struct.unpack_from(f"<{n}I", raw, pos))
        pos += 4 * n
        acts = [_ACT_NAMES[c] for c in raw[pos : pos + n - 1]]
        pos += n - 1
        (log_target,) = struct.unpack_from("<B", raw, pos)
        pos += 1

        def take(count):
            nonlocal pos
            arr = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).astype(float)
            pos += 8 * count
            return arr

        weights, biases = [], []
        for fi, fo in zip(sizes[:-1], sizes[1:]):
            weights.append(take(fi * fo).reshape(fi, fo))
            biases.append(take(fo))
        in_mean, in_std = take(sizes[0]), take(sizes[0])
        out_mean, out_std = take(2)
        if pos != len(raw):
            raise ValueError("trailing bytes in model file")
        return cls(sizes, acts, weights, biases, in_mean, in_std, float(out_mean), float(out_std),
                   bool(log_target))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "MlpModel":
        return cls.from_bytes(Path(path).read_bytes())


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def fit(model: MlpModel, x, y, *, epochs=200, batch_size=128, lr=1e-3, lr_decay=0.99,
        perturb=None, x_val=None, y_val=None, seed=0, verbose=False) -> MlpModel:
    """Minimise MSE on standardised targets.

    ``perturb(x, rng)`` returns a noisy copy of the raw feature rows and is
    applied afresh every epoch. Standardisation constants come from the
    clean training set.
    """
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    t = np.log(y) if model.log_target else y
    model.in_mean = x.mean(axis=0)
    model.in_std = x.std(axis=0) + 1e-12
    model.out_mean = float(t.mean())
    model.out_std = float(t.std() + 1e-12)
    ts = (t - model.out_mean) / model.out_std
    opt = Adam(model.parameters(), lr)
    history = {"train": [], "val": []}
    last_good = [p.copy() for p in model.parameters()]
    for epoch in range(epochs):
        xe = perturb(x, rng) if perturb is not None else x
        ze = (xe - model.in_mean) / model.in_std
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), batch_size):
            idx = order[start : start + batch_size]
            acts = model._forward(ze[idx])
            err = acts[-1][:, 0] - ts[idx]
            total += float(err @ err)
            grad = (2.0 / len(idx)) * err[:, None]
            gw, gb = model._backward(acts, grad)
            opt.step(model.parameters(), gw + gb)
        loss = total / len(x)
        if not np.isfinite(loss):
            for p, good in zip(model.parameters(), last_good):
                p[...] = good
            raise TrainingDiverged(f"loss diverged at epoch {epoch}", model)
        last_good = [p.copy() for p in model.parameters()]
        history["train"].append(loss)
        if x_val is not None:
            tv = np.log(y_val) if model.log_target else np.asarray(y_val, dtype=float)
            pv = model.predict_scaled(x_val)
            history["val"].append(float(np.mean((pv - (tv - model.out_mean) / model.out_std) ** 2)))
        opt.lr *= lr_decay
        if verbose and epoch % 20 == 0:
            print(f"epoch {epoch}: train {loss:.5f}" + (f" val {history['val'][-1]:.5f}" if history["val"] else ""))
    model.history = history
    return model
