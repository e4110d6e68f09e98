"""Warm-start surrogate: POD encoder/decoder plus a small MLP on the latent space.

The encoder is the linear map ``z = Phi_l^T u`` and the decoder ``u = Phi_l z``.
An MLP ``theta -> z`` is trained on standardized inputs and targets with
Adam and a fixed hold-out split; the parameters of the best validation epoch
are kept.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pod import PodBasis

_ACTIVATIONS = {
    "tanh": (np.tanh, lambda a, h: 1.0 - h * h),
    "relu": (lambda a: np.maximum(a, 0.0), lambda a, h: (a > 0).astype(np.float64)),
}


class TrainingDivergedError(FloatingPointError):
    pass


def encode(u, basis: PodBasis) -> np.ndarray:
    return basis.phi.T @ np.asarray(u, dtype=np.float64)


def decode(z, basis: PodBasis) -> np.ndarray:
    return basis.phi @ np.asarray(z, dtype=np.float64)


def normalized_l2_error(u_pred, u_ref) -> float:
    """``|u_pred - u_ref| / |u_ref|``."""
    u_ref = np.asarray(u_ref, dtype=np.float64)
    ref = np.linalg.norm(u_ref)
    if ref == 0:
        raise ValueError("reference vector is zero")
    return float(np.linalg.norm(np.asarray(u_pred, dtype=np.float64) - u_ref) / ref)


@dataclass
class Mlp:
    """Fully connected network, identity output layer.

    ``weights[k]`` has shape ``(widths[k], widths[k+1])``; inputs are rows.
    """

    widths: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"

    @classmethod
    def init(cls, widths, seed=0, activation: str = "tanh") -> "Mlp":
        """Glorot-uniform weights, zero biases."""
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = np.random.default_rng(seed)
        ws, bs = [], []
        for a, b in zip(widths[:-1], widths[1:]):
            lim = np.sqrt(6.0 / (a + b))
            ws.append(rng.uniform(-lim, lim, size=(a, b)))
            bs.append(np.zeros(b))
        return cls(list(widths), ws, bs, activation)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for wb in zip(self.weights, self.biases) for p in wb])

    def set_flat(self, x) -> None:
        k = 0
        for w, b in zip(self.weights, self.biases):
            for p in (w, b):
                p[...] = np.reshape(x[k:k + p.size], p.shape)
                k += p.size

    def copy(self) -> "Mlp":
        return Mlp(list(self.widths), [w.copy() for w in self.weights],
                   [b.copy() for b in self.biases], self.activation)

    def _forward(self, x):
        act = _ACTIVATIONS[self.activation][0]
        pre, hs = [], [x]
        h = x
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = h @ w + b
            h = a if k == last else act(a)
            pre.append(a)
            hs.append(h)
        return pre, hs

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return self._forward(x)[1][-1]

    def loss_and_grad(self, x, y):
        """Mean over rows of the squared error and its gradient.

        Returns ``(loss, grads)`` with ``grads`` a flat vector ordered as
        :meth:`get_flat`.
        """
        dact = _ACTIVATIONS[self.activation][1]
        pre, hs = self._forward(x)
        n = x.shape[0]
        diff = hs[-1] - y
        loss = float(np.sum(diff * diff) / n)
        delta = 2.0 * diff / n
        gw, gb = [], []
        for k in range(len(self.weights) - 1, -1, -1):
            gw.append(hs[k].T @ delta)
            gb.append(delta.sum(axis=0))
            if k > 0:
                delta = (delta @ self.weights[k].T) * dact(pre[k - 1], hs[k])
        gw.reverse()
        gb.reverse()
        return loss, np.concatenate([p.ravel() for wb in zip(gw, gb) for p in wb])


class Adam:
    def __init__(self, n: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, params, grad) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x) -> "Standardizer":
        x = np.atleast_2d(x)
        std = x.std(axis=0)
        # constant columns pass through with unit scale
        std = np.where(std > 1e-12 * np.maximum(np.abs(x).max(axis=0), 1e-300), std, 1.0)
        return cls(x.mean(axis=0), std)

    def forward(self, x):
        return (x - self.mean) / self.std

    def inverse(self, x):
        return x * self.std + self.mean


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 3000
    batch_size: int = 20
    learning_rate: float = 1e-4
    validation_split: float = 0.3
    seed: int = 0
    hidden: tuple[int, ...] = (32, 32)
    activation: str = "tanh"

    def __post_init__(self):
        if not 0.0 < self.validation_split < 1.0:
            raise ValueError("validation_split must lie in (0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass
class FitResult:
    mlp: Mlp
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0
    train_idx: np.ndarray | None = None
    val_idx: np.ndarray | None = None


def holdout_split(n: int, config: TrainConfig):
    """Seeded ``(train_idx, val_idx)`` partition of ``range(n)``."""
    perm = np.random.default_rng([config.seed, 1]).permutation(n)
    n_val = max(1, int(round(config.validation_split * n)))
    if n_val >= n:
        raise ValueError("validation split leaves no training samples")
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def fit_mlp(x, y, config: TrainConfig = TrainConfig()) -> FitResult:
    """Train an MLP on already-normalized ``(x, y)`` rows."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    tr_idx, val_idx = holdout_split(x.shape[0], config)
    rng = np.random.default_rng(config.seed)
    mlp = Mlp.init([x.shape[1], *config.hidden, y.shape[1]], seed=config.seed,
                   activation=config.activation)
    opt = Adam(mlp.n_params, config.learning_rate)
    theta = mlp.get_flat()
    best = (np.inf, theta.copy(), 0)
    train_hist, val_hist = [], []
    xv, yv = x[val_idx], y[val_idx]
    for epoch in range(config.epochs):
        order = tr_idx[rng.permutation(len(tr_idx))]
        total = 0.0
        for s in range(0, len(order), config.batch_size):
            b = order[s:s + config.batch_size]
            loss, g = mlp.loss_and_grad(x[b], y[b])
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"training loss became {loss} at epoch {epoch}; try a smaller learning rate")
            theta = opt.step(theta, g)
            mlp.set_flat(theta)
            total += loss * len(b)
        train_hist.append(total / len(order))
        d = mlp(xv) - yv
        val = float(np.sum(d * d) / len(xv))
        val_hist.append(val)
        if val < best[0]:
            best = (val, theta.copy(), epoch)
    mlp.set_flat(best[1])
    return FitResult(mlp, train_hist, val_hist, best[2], tr_idx, val_idx)


@dataclass
class SurrogateModel:
    """``theta -> u_sur = Phi_l * denorm(mlp(norm(theta)))``."""

    basis: PodBasis
    mlp: Mlp
    theta_norm: Standardizer
    z_norm: Standardizer
    fit: FitResult | None = None

    def predict_latent(self, theta) -> np.ndarray:
        t = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        return self.z_norm.inverse(self.mlp(self.theta_norm.forward(t)))

    def predict(self, theta) -> np.ndarray:
        """One prediction per row of ``theta``; a 1-D input returns a vector."""
        theta = np.asarray(theta, dtype=np.float64)
        u = self.predict_latent(theta) @ self.basis.phi.T
        return u[0] if theta.ndim == 1 else u

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.basis.save(d / "basis")
        header = {
            "widths": self.mlp.widths,
            "activation": self.mlp.activation,
            "theta_mean": self.theta_norm.mean.tolist(),
            "theta_std": self.theta_norm.std.tolist(),
            "z_mean": self.z_norm.mean.tolist(),
            "z_std": self.z_norm.std.tolist(),
            "n_params": self.mlp.n_params,
        }
        if self.fit is not None:
            header["best_epoch"] = self.fit.best_epoch
            header["val_loss"] = self.fit.val_loss[self.fit.best_epoch]
        (d / "model.json").write_text(json.dumps(header, indent=2))
        self.mlp.get_flat().astype("<f8").tofile(d / "weights.bin")

    @classmethod
    def load(cls, directory) -> "SurrogateModel":
        d = Path(directory)
        h = json.loads((d / "model.json").read_text())
        mlp = Mlp.init(h["widths"], activation=h["activation"])
        flat = np.fromfile(d / "weights.bin", dtype="<f8")
        if flat.size != mlp.n_params:
            raise ValueError(f"weights file holds {flat.size} values, expected {mlp.n_params}")
        mlp.set_flat(flat)
        return cls(PodBasis.load(d / "basis"), mlp,
                   Standardizer(np.array(h["theta_mean"]), np.array(h["theta_std"])),
                   Standardizer(np.array(h["z_mean"]), np.array(h["z_std"])))


def train_mlp(snapshots, basis: PodBasis, config: TrainConfig = TrainConfig(),
              latent: int | None = None) -> SurrogateModel:
    """Fit the latent MLP on a ``SnapshotSet``.

    ``latent`` truncates ``basis`` first; by default the whole basis is used.
    """
    params = np.asarray(snapshots.params, dtype=np.float64)
    if len(params) < 20:
        raise ValueError(f"need at least 20 snapshots to train, got {len(params)}")
    if latent is not None:
        basis = basis.truncate(latent)
    z = snapshots.matrix.T @ basis.phi
    tr, _ = holdout_split(len(params), config)
    # normalizers see the training rows only
    tn, zn = Standardizer.fit(params[tr]), Standardizer.fit(z[tr])
    fit = fit_mlp(tn.forward(params), zn.forward(z), config)
    return SurrogateModel(basis, fit.mlp, tn, zn, fit)


def predict(model: SurrogateModel, theta) -> np.ndarray:
    return model.predict(theta)
