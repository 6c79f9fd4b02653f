"""Feed-forward binary classifier trained with weighted cross-entropy and Adam.

Everything is plain numpy: a stack of dense layers with ReLU activations,
optional batch normalization per hidden layer, optional dropout after one
hidden layer, and a single sigmoid output.  Training works in float32 for
speed; stored parameters and inference are float64.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .core_data import derive_seed

__all__ = [
    "MLPSpec",
    "TrainConfig",
    "TrainHistory",
    "MLPModel",
    "TrainingError",
    "init_mlp",
    "forward",
    "predict_logit",
    "gradient_of_loss",
    "weighted_bce",
    "train_classifier",
    "train_ensemble",
    "flatten_params",
    "unflatten_params",
    "save_models",
    "load_models",
]

PROB_EPS = 1e-6
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class TrainingError(RuntimeError):
    """Raised when optimization produces a non-finite loss."""


@dataclass(frozen=True)
class MLPSpec:
    """Architecture of a classifier.

    ``dropout_after`` is the zero-based index of the hidden layer whose
    activations are dropped out (1 = second hidden layer).
    """

    input_dim: int
    hidden: tuple[int, ...] = (50, 50, 50)
    activation: str = "relu"
    dropout_rate: float = 0.0
    dropout_after: int = 1
    batch_norm: tuple[bool, ...] | bool = False
    standardize: bool = True
    seed: int = 0

    def __post_init__(self):
        hidden = tuple(int(h) for h in self.hidden)
        object.__setattr__(self, "hidden", hidden)
        if int(self.input_dim) < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if any(h < 1 for h in hidden):
            raise ValueError(f"hidden widths must be >= 1, got {hidden}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.dropout_rate > 0 and not 0 <= self.dropout_after < len(hidden):
            raise ValueError(f"dropout_after={self.dropout_after} is not a hidden layer")
        bn = self.batch_norm
        if isinstance(bn, (bool, np.bool_)):
            bn = (bool(bn),) * len(hidden)
        bn = tuple(bool(b) for b in bn)
        if len(bn) != len(hidden):
            raise ValueError("batch_norm needs one flag per hidden layer")
        object.__setattr__(self, "batch_norm", bn)
        object.__setattr__(self, "input_dim", int(self.input_dim))

    @classmethod
    def step_classifier(cls, input_dim: int, seed: int = 0) -> "MLPSpec":
        """Three 50-wide ReLU layers, no normalization (unfolding steps)."""
        return cls(input_dim=input_dim, seed=seed)

    @classmethod
    def w_classifier(cls, input_dim: int, seed: int = 0) -> "MLPSpec":
        """Unfolding architecture plus batch norm per layer and dropout 0.1 after layer 2."""
        return cls(input_dim=input_dim, dropout_rate=0.1, dropout_after=1,
                   batch_norm=True, seed=seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["batch_norm"] = list(self.batch_norm)
        return d


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 10_000
    max_epochs: int = 20
    patience: int = 3
    validation_fraction: float = 0.2
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    dtype: str = "float32"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be positive")
        if self.patience < 0:
            raise ValueError("patience must be nonnegative")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    val_accuracy: float = float("nan")
    # rows of the stacked [class0; class1] arrays held out for validation
    val_index: np.ndarray | None = None
    n_class0: int = 0


@dataclass(eq=False)
class MLPModel:
    spec: MLPSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    gammas: list[np.ndarray | None]
    betas: list[np.ndarray | None]
    running_mean: list[np.ndarray | None]
    running_var: list[np.ndarray | None]
    input_shift: np.ndarray
    input_scale: np.ndarray
    history: TrainHistory | None = None

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def layer_shapes(self) -> list[tuple[int, int]]:
        return [w.shape for w in self.weights]

    def copy(self) -> "MLPModel":
        cp = lambda xs: [None if x is None else x.copy() for x in xs]  # noqa: E731
        return MLPModel(self.spec, cp(self.weights), cp(self.biases), cp(self.gammas),
                        cp(self.betas), cp(self.running_mean), cp(self.running_var),
                        self.input_shift.copy(), self.input_scale.copy(), self.history)

    def astype(self, dtype) -> "MLPModel":
        cv = lambda xs: [None if x is None else x.astype(dtype) for x in xs]  # noqa: E731
        return MLPModel(self.spec, cv(self.weights), cv(self.biases), cv(self.gammas),
                        cv(self.betas), cv(self.running_mean), cv(self.running_var),
                        self.input_shift.astype(dtype), self.input_scale.astype(dtype),
                        self.history)


def init_mlp(spec: MLPSpec) -> MLPModel:
    """He-normal weights, zero biases, identity batch-norm; deterministic in ``spec.seed``."""
    rng = np.random.default_rng(derive_seed(spec.seed, "init_mlp"))
    dims = [spec.input_dim, *spec.hidden, 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    gammas, betas, rmean, rvar = [], [], [], []
    for width, bn in zip(spec.hidden, spec.batch_norm):
        gammas.append(np.ones(width) if bn else None)
        betas.append(np.zeros(width) if bn else None)
        rmean.append(np.zeros(width) if bn else None)
        rvar.append(np.ones(width) if bn else None)
    return MLPModel(spec, weights, biases, gammas, betas, rmean, rvar,
                    np.zeros(spec.input_dim), np.ones(spec.input_dim))


# --------------------------------------------------------------------------
# forward / backward
# --------------------------------------------------------------------------

def _check_batch(model: MLPModel, batch) -> np.ndarray:
    X = np.asarray(batch)
    if X.ndim == 1:
        X = X[:, None] if model.spec.input_dim == 1 else X[None, :]
    if X.ndim != 2 or X.shape[1] != model.spec.input_dim:
        raise ValueError(f"expected inputs with {model.spec.input_dim} columns, "
                         f"got shape {np.shape(batch)}")
    return X


def _forward(model: MLPModel, X: np.ndarray, training: bool, rng=None):
    """Return logits and, in training mode, the cache needed by ``_backward``."""
    h = (X - model.input_shift) / model.input_scale
    cache = []
    spec = model.spec
    for l in range(len(spec.hidden)):
        z = h @ model.weights[l] + model.biases[l]
        entry = {"h_in": h}
        if spec.batch_norm[l]:
            if training:
                mu = z.mean(axis=0)
                var = z.var(axis=0)
                inv = 1.0 / np.sqrt(var + BN_EPS)
                zhat = (z - mu) * inv
                entry.update(zhat=zhat, inv=inv, mu=mu, var=var)
            else:
                zhat = (z - model.running_mean[l]) / np.sqrt(model.running_var[l] + BN_EPS)
            a = model.gammas[l] * zhat + model.betas[l]
        else:
            a = z
        h = np.maximum(a, 0.0)
        entry["active"] = a > 0
        if training and spec.dropout_rate > 0 and l == spec.dropout_after and rng is not None:
            keep = 1.0 - spec.dropout_rate
            mask = (rng.random(h.shape) < keep).astype(h.dtype) / h.dtype.type(keep)
            h = h * mask
            entry["mask"] = mask
        cache.append(entry)
    logit = (h @ model.weights[-1] + model.biases[-1])[:, 0]
    return logit, cache, h


def _backward(model: MLPModel, cache, h_last, dlogit):
    """Backpropagate ``dL/dlogit`` (shape (n,)) to parameter gradients."""
    spec = model.spec
    nh = len(spec.hidden)
    gW = [None] * (nh + 1)
    gb = [None] * (nh + 1)
    gg = [None] * nh
    gbe = [None] * nh
    d = dlogit[:, None]
    gW[nh] = h_last.T @ d
    gb[nh] = d.sum(axis=0)
    dh = d @ model.weights[nh].T
    for l in range(nh - 1, -1, -1):
        entry = cache[l]
        if "mask" in entry:
            dh = dh * entry["mask"]
        da = dh * entry["active"]
        if spec.batch_norm[l]:
            zhat, inv = entry["zhat"], entry["inv"]
            gg[l] = np.sum(da * zhat, axis=0)
            gbe[l] = da.sum(axis=0)
            dzhat = da * model.gammas[l]
            n = dzhat.shape[0]
            dz = (inv / n) * (n * dzhat - dzhat.sum(axis=0)
                              - zhat * np.sum(dzhat * zhat, axis=0))
        else:
            dz = da
        gW[l] = entry["h_in"].T @ dz
        gb[l] = dz.sum(axis=0)
        if l > 0:
            dh = dz @ model.weights[l].T
    return gW, gb, gg, gbe


def _softplus(z):
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def weighted_bce(logit, labels, weights) -> float:
    """``-sum w [c log f + (1-c) log(1-f)] / sum w`` evaluated stably from logits."""
    wsum = float(np.sum(weights))
    if not wsum > 0:
        raise ValueError("total weight must be positive")
    per = _softplus(logit) - labels * logit
    return float(np.sum(weights * per) / wsum)


INFER_CHUNK = 4096


def _folded_layers(model: MLPModel) -> list[tuple[np.ndarray, np.ndarray]]:
    """Dense layers with input standardization and inference batch norm folded in."""
    layers = []
    spec = model.spec
    for l in range(model.n_layers):
        W, b = model.weights[l], model.biases[l]
        if l == 0:
            W = W / model.input_scale[:, None]
            b = b - (model.input_shift / model.input_scale) @ model.weights[0]
        if l < len(spec.hidden) and spec.batch_norm[l]:
            k = model.gammas[l] / np.sqrt(model.running_var[l] + BN_EPS)
            W = W * k
            b = (b - model.running_mean[l]) * k + model.betas[l]
        layers.append((W, b))
    return layers


def predict_logit(model: MLPModel, batch) -> np.ndarray:
    """Inference-mode logits, evaluated in row chunks to stay cache-resident."""
    X = _check_batch(model, batch).astype(np.float64, copy=False)
    layers = _folded_layers(model)
    out = np.empty(X.shape[0])
    for start in range(0, X.shape[0], INFER_CHUNK):
        h = X[start:start + INFER_CHUNK]
        for W, b in layers[:-1]:
            h = h @ W
            h += b
            np.maximum(h, 0.0, out=h)
        W, b = layers[-1]
        out[start:start + INFER_CHUNK] = (h @ W)[:, 0] + b[0]
    return out


def forward(model: MLPModel, batch) -> np.ndarray:
    """Inference-mode class-1 probability, clamped to ``[1e-6, 1 - 1e-6]``."""
    return np.clip(_sigmoid(predict_logit(model, batch)), PROB_EPS, 1.0 - PROB_EPS)


# --------------------------------------------------------------------------
# parameter vectors
# --------------------------------------------------------------------------

def _param_list(model: MLPModel) -> list[np.ndarray]:
    out = []
    for l in range(model.n_layers):
        out += [model.weights[l], model.biases[l]]
        if l < len(model.spec.hidden) and model.spec.batch_norm[l]:
            out += [model.gammas[l], model.betas[l]]
    return out


def _grad_list(model: MLPModel, gW, gb, gg, gbe) -> list[np.ndarray]:
    out = []
    for l in range(model.n_layers):
        out += [gW[l], gb[l]]
        if l < len(model.spec.hidden) and model.spec.batch_norm[l]:
            out += [gg[l], gbe[l]]
    return out


def flatten_params(model: MLPModel) -> np.ndarray:
    return np.concatenate([p.ravel() for p in _param_list(model)])


def unflatten_params(model: MLPModel, flat) -> MLPModel:
    """Copy of ``model`` with trainable parameters taken from ``flat``."""
    flat = np.asarray(flat, dtype=np.float64)
    new = model.copy()
    params = _param_list(new)
    total = sum(p.size for p in params)
    if flat.size != total:
        raise ValueError(f"expected {total} parameters, got {flat.size}")
    pos = 0
    for p in params:
        p[...] = flat[pos:pos + p.size].reshape(p.shape)
        pos += p.size
    return new


def gradient_of_loss(model: MLPModel, batch, labels, weights, *,
                     normalize: bool = True, training: bool = False) -> np.ndarray:
    """Analytic gradient of the weighted cross-entropy, flattened like ``flatten_params``.

    With ``normalize=False`` the loss is the raw weighted sum rather than the
    weighted mean.  ``training=True`` uses batch statistics for batch-norm
    layers; dropout is never applied here.
    """
    X = _check_batch(model, batch)
    c = np.asarray(labels, dtype=X.dtype).reshape(-1)
    w = np.asarray(weights, dtype=X.dtype).reshape(-1)
    if c.shape[0] != X.shape[0] or w.shape[0] != X.shape[0]:
        raise ValueError("batch, labels and weights must have equal length")
    wsum = float(w.sum())
    if not wsum > 0:
        raise ValueError("gradient undefined: total weight is zero")
    logit, cache, h_last = _forward(model, X, training=training)
    dlogit = w * (_sigmoid(logit) - c)
    if normalize:
        dlogit = dlogit / wsum
    grads = _grad_list(model, *_backward(model, cache, h_last, dlogit))
    return np.concatenate([g.ravel() for g in grads])


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

def _stratified_split(n0: int, n1: int, frac: float, rng):
    val, train = [], []
    for offset, n in ((0, n0), (n0, n1)):
        if n < 2:
            raise ValueError("each class needs at least two events to hold out validation data")
        n_val = min(max(1, int(round(frac * n))), n - 1)
        perm = rng.permutation(n) + offset
        val.append(perm[:n_val])
        train.append(perm[n_val:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


def _stack_classes(class0, w0, class1, w1):
    X0 = np.asarray(class0, dtype=np.float64)
    X1 = np.asarray(class1, dtype=np.float64)
    X0 = X0[:, None] if X0.ndim == 1 else X0
    X1 = X1[:, None] if X1.ndim == 1 else X1
    w0 = np.asarray(w0, dtype=np.float64).reshape(-1)
    w1 = np.asarray(w1, dtype=np.float64).reshape(-1)
    if X0.shape[0] == 0 or X1.shape[0] == 0:
        raise ValueError("both classes must be nonempty")
    if w0.shape[0] != X0.shape[0] or w1.shape[0] != X1.shape[0]:
        raise ValueError("each class needs one weight per event")
    if np.any(w0 < 0) or np.any(w1 < 0):
        raise ValueError("weights must be nonnegative")
    if not w0.sum() > 0:
        raise ValueError("class 0 has zero total weight")
    if not w1.sum() > 0:
        raise ValueError("class 1 has zero total weight")
    X = np.vstack([X0, X1])
    c = np.concatenate([np.zeros(X0.shape[0]), np.ones(X1.shape[0])])
    w = np.concatenate([w0, w1])
    return X, c, w, X0.shape[0]


def _weighted_accuracy(prob, labels, weights) -> float:
    pred = (prob >= 0.5).astype(np.float64)
    return float(np.sum(weights * (pred == labels)) / np.sum(weights))


def train_classifier(class0, w0, class1, w1, spec: MLPSpec, cfg: TrainConfig) -> MLPModel:
    """Fit a classifier separating ``class1`` (label 1) from ``class0`` (label 0).

    Minimizes the weighted cross-entropy with Adam on shuffled minibatches.
    Training stops after ``cfg.max_epochs`` or once the weighted validation
    loss has failed to improve for ``cfg.patience`` consecutive epochs; the
    parameters from the best validation epoch are returned.
    """
    X, c, w, n0 = _stack_classes(class0, w0, class1, w1)
    if X.shape[1] != spec.input_dim:
        raise ValueError(f"inputs have {X.shape[1]} columns, spec expects {spec.input_dim}")
    rng = np.random.default_rng(derive_seed(cfg.seed, "train"))
    train_idx, val_idx = _stratified_split(n0, X.shape[0] - n0, cfg.validation_fraction, rng)
    if not w[val_idx].sum() > 0:
        raise ValueError("validation split has zero total weight")

    model = init_mlp(spec)
    if spec.standardize:
        Xt = X[train_idx]
        shift = Xt.mean(axis=0)
        scale = Xt.std(axis=0)
        scale[scale == 0] = 1.0
        model.input_shift, model.input_scale = shift, scale

    dt = np.dtype(cfg.dtype)
    work = model.astype(dt)
    Xw, cw, ww = X.astype(dt), c.astype(dt), w.astype(dt)
    Xv, cv, wv = X[val_idx], c[val_idx], w[val_idx]
    params = _param_list(work)
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2 = cfg.beta1, cfg.beta2
    step = 0
    hist = TrainHistory(val_index=val_idx, n_class0=n0)
    best_loss, best_model, since_best = math.inf, None, 0
    drop_rng = np.random.default_rng(derive_seed(cfg.seed, "dropout"))

    for epoch in range(cfg.max_epochs):
        order = train_idx[rng.permutation(train_idx.size)]
        tot_loss, tot_w = 0.0, 0.0
        for start in range(0, order.size, cfg.batch_size):
            bi = order[start:start + cfg.batch_size]
            wb = ww[bi]
            wsum = float(wb.sum())
            if wsum <= 0:
                continue
            logit, cache, h_last = _forward(work, Xw[bi], training=True, rng=drop_rng)
            cb = cw[bi]
            batch_loss = float(np.sum(wb * (_softplus(logit) - cb * logit))) / wsum
            if not math.isfinite(batch_loss):
                raise TrainingError(f"non-finite training loss at epoch {epoch}")
            tot_loss += batch_loss * wsum
            tot_w += wsum
            dlogit = wb * (_sigmoid(logit) - cb) / dt.type(wsum)
            grads = _grad_list(work, *_backward(work, cache, h_last, dlogit))
            step += 1
            bc1 = 1.0 - b1 ** step
            bc2 = 1.0 - b2 ** step
            lr_t = dt.type(cfg.learning_rate * math.sqrt(bc2) / bc1)
            eps_t = dt.type(cfg.adam_eps * math.sqrt(bc2))
            for p, g, mi, vi in zip(params, grads, m, v):
                mi *= b1
                mi += (1 - b1) * g
                vi *= b2
                vi += (1 - b2) * (g * g)
                p -= lr_t * mi / (np.sqrt(vi) + eps_t)
            for l in range(len(spec.hidden)):
                if spec.batch_norm[l]:
                    n = len(bi)
                    mu, var = cache[l]["mu"], cache[l]["var"]
                    unbiased = var * (n / max(n - 1, 1))
                    work.running_mean[l] *= (1 - BN_MOMENTUM)
                    work.running_mean[l] += BN_MOMENTUM * mu
                    work.running_var[l] *= (1 - BN_MOMENTUM)
                    work.running_var[l] += BN_MOMENTUM * unbiased
        hist.train_loss.append(tot_loss / tot_w if tot_w > 0 else float("nan"))
        snapshot = work.astype(np.float64)
        val_loss = weighted_bce(predict_logit(snapshot, Xv), cv, wv)
        if not math.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        hist.val_loss.append(val_loss)
        if val_loss < best_loss:
            best_loss, best_model, since_best = val_loss, snapshot, 0
            hist.best_epoch = epoch
        else:
            since_best += 1
            if since_best >= max(cfg.patience, 1):
                break

    best_model.history = hist
    hist.val_accuracy = _weighted_accuracy(forward(best_model, Xv), cv, wv)
    return best_model


def _bootstrap(n: int, rng) -> np.ndarray:
    return rng.integers(0, n, size=n)


def train_ensemble(class0, w0, class1, w1, spec: MLPSpec, cfg: TrainConfig,
                   n_members: int, *, bootstrap: bool = True,
                   threads: int = 1) -> list[MLPModel]:
    """Train ``n_members`` classifiers, each on its own weighted bootstrap resample.

    Bootstrap indices are drawn uniformly with replacement within each class
    and the original weights travel with the resampled events.  Member seeds
    are derived from ``cfg.seed`` and ``spec.seed``.
    """
    if n_members < 1:
        raise ValueError("n_members must be >= 1")
    X0 = np.asarray(class0, dtype=np.float64)
    X1 = np.asarray(class1, dtype=np.float64)
    w0 = np.asarray(w0, dtype=np.float64)
    w1 = np.asarray(w1, dtype=np.float64)

    def member(k: int) -> MLPModel:
        if n_members == 1 and not bootstrap:
            mspec, mcfg = spec, cfg
        else:
            mspec = replace(spec, seed=derive_seed(spec.seed, "member", k))
            mcfg = replace(cfg, seed=derive_seed(cfg.seed, "member", k))
        a0, a1, b0, b1 = X0, X1, w0, w1
        if bootstrap:
            rng = np.random.default_rng(derive_seed(cfg.seed, "bootstrap", k))
            i0 = _bootstrap(len(X0), rng)
            i1 = _bootstrap(len(X1), rng)
            a0, b0, a1, b1 = X0[i0], w0[i0], X1[i1], w1[i1]
        try:
            return train_classifier(a0, b0, a1, b1, mspec, mcfg)
        except Exception as exc:
            raise type(exc)(f"ensemble member {k}: {exc}") from exc

    if threads > 1 and n_members > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(member, range(n_members)))
    return [member(k) for k in range(n_members)]


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

def _model_to_dict(model: MLPModel) -> dict:
    stats = []
    for l in range(len(model.spec.hidden)):
        if model.spec.batch_norm[l]:
            stats.append({"mean": model.running_mean[l].tolist(),
                          "var": model.running_var[l].tolist()})
        else:
            stats.append(None)
    return {
        "spec": model.spec.to_dict(),
        "parameters": flatten_params(model).tolist(),
        "input_shift": model.input_shift.tolist(),
        "input_scale": model.input_scale.tolist(),
        "batch_norm_stats": stats,
    }


def _model_from_dict(d: dict) -> MLPModel:
    spec_d = dict(d["spec"])
    spec_d["hidden"] = tuple(spec_d["hidden"])
    spec_d["batch_norm"] = tuple(spec_d["batch_norm"])
    spec = MLPSpec(**spec_d)
    model = unflatten_params(init_mlp(spec), d["parameters"])
    model.input_shift = np.array(d["input_shift"], dtype=np.float64)
    model.input_scale = np.array(d["input_scale"], dtype=np.float64)
    for l, st in enumerate(d["batch_norm_stats"]):
        if st is not None:
            model.running_mean[l] = np.array(st["mean"], dtype=np.float64)
            model.running_var[l] = np.array(st["var"], dtype=np.float64)
    return model


def models_to_json(models: Sequence[MLPModel]) -> list[dict]:
    return [_model_to_dict(m) for m in models]


def models_from_json(items: Sequence[dict]) -> list[MLPModel]:
    return [_model_from_dict(d) for d in items]


def save_models(models: MLPModel | Sequence[MLPModel], path) -> None:
    """Write one model or an ensemble as JSON (floats round-trip exactly)."""
    if isinstance(models, MLPModel):
        models = [models]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"format": "unfoldkit-mlp", "models": models_to_json(models)}, fh)


def load_models(path) -> list[MLPModel]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != "unfoldkit-mlp":
        raise ValueError(f"{path}: not an unfoldkit model file")
    return models_from_json(doc["models"])
