"""Two-layer LSTM regressors for impact parameters and force profiles.

One network per target. Scalar mode (speed, alpha, beta, Y, Z): layer 1
returns the full sequence, layer 2 only its final state, then a dense D->1.
Sequence mode (force on helmet, force on head): both layers return
sequences and the dense D->1 is applied at every step. Each LSTM layer is
followed by (inverted) dropout.

Gates are packed along the last axis in the order input, forget, output,
candidate. Arrays inside the network are time-major, (T, N, C).
"""

from __future__ import annotations

import copy
import enum
import itertools
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import TrainingDivergedError
from .geometry import (
    SPHERE_RADIUS_MM,
    HelmetRegion,
    ImpactLocation,
    ImpactSetup,
    classify_region,
    closest_point_on_sphere,
    impact_line,
    sphere_intersection,
    to_location,
)
from .kinematics import N_CHANNELS, N_SAMPLES, ChannelStats, FeatureTensor, normalize

log = logging.getLogger(__name__)

MODEL_FORMAT = "headimpact-lstm"
MODEL_VERSION = 1

SCALAR_TARGETS = ("speed", "alpha", "beta", "Y", "Z")
FORCE_TARGETS = ("force_helmet", "force_head")
ALL_TARGETS = SCALAR_TARGETS + FORCE_TARGETS

PARAM_NAMES = ("W1", "U1", "b1", "W2", "U2", "b2", "w_out", "b_out")
KERNEL_NAMES = ("W1", "W2")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class Mode(str, enum.Enum):
    SCALAR = "scalar"
    SEQUENCE = "sequence"


def mode_for_target(target: str) -> Mode:
    return Mode.SEQUENCE if target in FORCE_TARGETS else Mode.SCALAR


@dataclass(frozen=True)
class Hyperparameters:
    hidden_units: int = 32
    learning_rate: float = 3e-3
    epochs: int = 40
    dropout_rate: float = 0.1
    l2_kernel: float = 0.0
    batch_size: int = 64
    seed: int = 0
    # float32 trains ~2x faster; gradient checks use float64
    dtype: str = "float64"

    def __post_init__(self):
        if self.hidden_units < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("hidden_units, epochs and batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.l2_kernel < 0:
            raise ValueError("l2_kernel must be >= 0")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparameters":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown hyperparameters: {sorted(unknown)}")
        return cls(**d)


# ----------------------------------------------------------------------------
# Parameters
# ----------------------------------------------------------------------------

def init_params(input_dim: int, hidden: int, rng: np.random.Generator, dtype=np.float64) -> dict:
    """Glorot-uniform matrices, zero biases except forget gate = 1."""

    def glorot(fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    D = hidden
    params = {}
    for layer, n_in in ((1, input_dim), (2, D)):
        params[f"W{layer}"] = glorot(n_in, 4 * D)
        params[f"U{layer}"] = glorot(D, 4 * D)
        b = np.zeros(4 * D)
        b[D : 2 * D] = 1.0
        params[f"b{layer}"] = b
    params["w_out"] = glorot(D, 1)[:, 0]
    params["b_out"] = np.zeros(1)
    return {k: v.astype(dtype) for k, v in params.items()}


def zero_params(input_dim: int, hidden: int, dtype=np.float64) -> dict:
    D = hidden
    shapes = {
        "W1": (input_dim, 4 * D), "U1": (D, 4 * D), "b1": (4 * D,),
        "W2": (D, 4 * D), "U2": (D, 4 * D), "b2": (4 * D,),
        "w_out": (D,), "b_out": (1,),
    }
    return {k: np.zeros(s, dtype=dtype) for k, s in shapes.items()}


# ----------------------------------------------------------------------------
# Forward / backward
# ----------------------------------------------------------------------------

def _sigmoid(x):
    # tanh form avoids overflow warnings for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_layer_forward(X: np.ndarray, W: np.ndarray, U: np.ndarray, b: np.ndarray):
    """Run one LSTM layer over a (T, N, I) sequence from zero state."""
    T, N, _ = X.shape
    D = U.shape[0]
    Zx = (X.reshape(T * N, -1) @ W).reshape(T, N, 4 * D)
    Zx += b
    gates = np.empty((T, N, 4 * D), dtype=X.dtype)
    C = np.empty((T, N, D), dtype=X.dtype)
    TC = np.empty((T, N, D), dtype=X.dtype)
    H = np.empty((T, N, D), dtype=X.dtype)
    h = np.zeros((N, D), dtype=X.dtype)
    c = np.zeros((N, D), dtype=X.dtype)
    for t in range(T):
        z = Zx[t]
        z += h @ U
        g = gates[t]
        g[:, : 3 * D] = _sigmoid(z[:, : 3 * D])
        g[:, 3 * D :] = np.tanh(z[:, 3 * D :])
        c = g[:, D : 2 * D] * c
        c += g[:, :D] * g[:, 3 * D :]
        C[t] = c
        np.tanh(c, out=TC[t])
        h = np.multiply(g[:, 2 * D : 3 * D], TC[t], out=H[t])
    return H, (X, gates, C, TC, H)


def lstm_layer_backward(dH: np.ndarray, cache, W: np.ndarray, U: np.ndarray):
    """Exact BPTT for one layer. Returns (dX, dW, dU, db)."""
    X, gates, C, TC, H = cache
    T, N, D = H.shape
    dZ = np.empty((T, N, 4 * D), dtype=dH.dtype)
    dh_next = np.zeros((N, D), dtype=dH.dtype)
    dc_next = np.zeros((N, D), dtype=dH.dtype)
    UT = U.T
    zeros = np.zeros((N, D), dtype=dH.dtype)
    for t in range(T - 1, -1, -1):
        g = gates[t]
        i, f, o, cand = g[:, :D], g[:, D : 2 * D], g[:, 2 * D : 3 * D], g[:, 3 * D :]
        tc = TC[t]
        dh = dH[t] + dh_next
        dc = dh * o * (1.0 - tc * tc)
        dc += dc_next
        c_prev = C[t - 1] if t > 0 else zeros
        dz = dZ[t]
        dz[:, :D] = dc * cand * i * (1.0 - i)
        dz[:, D : 2 * D] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * D : 3 * D] = dh * tc * o * (1.0 - o)
        dz[:, 3 * D :] = dc * i * (1.0 - cand * cand)
        dc_next = dc * f
        dh_next = dz @ UT
    dZf = dZ.reshape(T * N, 4 * D)
    dW = X.reshape(T * N, -1).T @ dZf
    H_prev = np.concatenate([zeros[None], H[:-1]], axis=0)
    dU = H_prev.reshape(T * N, D).T @ dZf
    db = dZf.sum(axis=0)
    dX = (dZf @ W.T).reshape(T, N, -1)
    return dX, dW, dU, db


def _dropout_mask(rng, shape, rate, dtype):
    if rate <= 0.0:
        return None
    keep = 1.0 - rate
    return (rng.random(shape) < keep).astype(dtype) / keep


def network_forward(params: dict, X: np.ndarray, mode: Mode, dropout_rate: float = 0.0,
                    training: bool = False, rng: np.random.Generator | None = None):
    """Forward pass on (N, T, C) inputs.

    Returns ``(y, cache)`` with y of shape (N,) in scalar mode and (N, T) in
    sequence mode. Dropout is active only when ``training`` is true.
    """
    Xt = np.ascontiguousarray(np.swapaxes(X, 0, 1))
    dtype = Xt.dtype
    rate = dropout_rate if training else 0.0
    if rate > 0.0 and rng is None:
        raise ValueError("training with dropout needs an rng")

    H1, cache1 = lstm_layer_forward(Xt, params["W1"], params["U1"], params["b1"])
    m1 = _dropout_mask(rng, H1.shape, rate, dtype)
    H1d = H1 * m1 if m1 is not None else H1
    H2, cache2 = lstm_layer_forward(H1d, params["W2"], params["U2"], params["b2"])
    top = H2[-1] if mode is Mode.SCALAR else H2
    m2 = _dropout_mask(rng, top.shape, rate, dtype)
    topd = top * m2 if m2 is not None else top
    y = topd @ params["w_out"] + params["b_out"][0]
    if mode is Mode.SEQUENCE:
        y = y.T
    cache = (Xt.shape, cache1, m1, cache2, m2, topd)
    return y, cache


def network_backward(params: dict, dy: np.ndarray, cache, mode: Mode) -> dict:
    shape, cache1, m1, cache2, m2, topd = cache
    T, N, _ = shape
    grads = {}
    if mode is Mode.SEQUENCE:
        dyt = dy.T  # (T, N)
        grads["w_out"] = np.einsum("tnd,tn->d", topd, dyt)
        grads["b_out"] = np.array([dyt.sum()], dtype=dy.dtype)
        dtop = dyt[:, :, None] * params["w_out"]
    else:
        grads["w_out"] = topd.T @ dy
        grads["b_out"] = np.array([dy.sum()], dtype=dy.dtype)
        dtop = dy[:, None] * params["w_out"]
    if m2 is not None:
        dtop = dtop * m2
    if mode is Mode.SEQUENCE:
        dH2 = dtop
    else:
        D = params["U2"].shape[0]
        dH2 = np.zeros((T, N, D), dtype=dy.dtype)
        dH2[-1] = dtop
    dH1d, grads["W2"], grads["U2"], grads["b2"] = lstm_layer_backward(dH2, cache2, params["W2"], params["U2"])
    dH1 = dH1d * m1 if m1 is not None else dH1d
    _, grads["W1"], grads["U1"], grads["b1"] = lstm_layer_backward(dH1, cache1, params["W1"], params["U1"])
    return grads


# ----------------------------------------------------------------------------
# Loss
# ----------------------------------------------------------------------------

def kernel_penalty(params: dict) -> float:
    return float(sum(np.sum(params[k].astype(np.float64) ** 2) for k in KERNEL_NAMES))


def loss(predictions, targets, params: dict | None = None, l2_kernel: float = 0.0) -> float:
    """Mean absolute error over all output elements plus ``l2_kernel * sum(kernel**2)``."""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise ValueError(f"shape mismatch: {predictions.shape} vs {targets.shape}")
    value = float(np.mean(np.abs(predictions - targets)))
    if l2_kernel and params is not None:
        value += l2_kernel * kernel_penalty(params)
    return value


def loss_gradient(predictions, targets, kind: str = "mae") -> np.ndarray:
    """d loss / d predictions for the data term; ``kind`` is "mae" or "mse"."""
    diff = predictions - targets
    if kind == "mae":
        return np.sign(diff) / diff.size  # np.sign(0) == 0
    if kind == "mse":
        return 2.0 * diff / diff.size
    raise ValueError(f"unknown loss kind {kind!r}")


def loss_and_grads(params: dict, X, Y, mode: Mode, l2_kernel: float = 0.0, kind: str = "mae",
                   dropout_rate: float = 0.0, training: bool = False, rng=None):
    y, cache = network_forward(params, X, mode, dropout_rate, training, rng)
    diff = y - Y
    if kind == "mae":
        value = float(np.mean(np.abs(diff)))
    else:
        value = float(np.mean(diff * diff))
    grads = network_backward(params, loss_gradient(y, Y, kind).astype(y.dtype), cache, mode)
    if l2_kernel:
        value += l2_kernel * kernel_penalty(params)
        for k in KERNEL_NAMES:
            grads[k] = grads[k] + 2.0 * l2_kernel * params[k]
    return value, grads


# ----------------------------------------------------------------------------
# Model container
# ----------------------------------------------------------------------------

@dataclass
class LSTMModel:
    target: str
    mode: Mode
    hyper: Hyperparameters
    params: dict
    feature_stats: ChannelStats
    target_mean: float = 0.0
    target_std: float = 1.0
    log: list = field(default_factory=list)

    def _prepare(self, features) -> np.ndarray:
        X = features.data if isinstance(features, FeatureTensor) else np.asarray(features, dtype=float)
        if X.ndim == 2:
            X = X[None]
        if X.shape[1:] != (N_SAMPLES, self.feature_stats.n_channels):
            raise ValueError(f"expected features of shape (N, {N_SAMPLES}, {self.feature_stats.n_channels}), got {X.shape}")
        return normalize(X, self.feature_stats).astype(self.hyper.dtype)

    def forward(self, X_normalized: np.ndarray, training: bool = False, rng=None) -> np.ndarray:
        y, _ = network_forward(self.params, X_normalized, self.mode, self.hyper.dropout_rate, training, rng)
        expected = (X_normalized.shape[0],) if self.mode is Mode.SCALAR else X_normalized.shape[:2]
        assert y.shape == expected, f"output shape {y.shape} violates {self.mode.value} contract"
        return y

    def predict(self, features, batch_size: int = 256) -> np.ndarray:
        """De-normalized predictions for raw (unnormalized) features."""
        X = self._prepare(features)
        out = [self.forward(X[i : i + batch_size]) for i in range(0, len(X), batch_size)]
        y = np.concatenate(out, axis=0).astype(np.float64) if out else np.zeros((0,))
        return y * self.target_std + self.target_mean

    # -- persistence --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "target": self.target,
            "mode": self.mode.value,
            "hyperparameters": asdict(self.hyper),
            "input_dim": int(self.params["W1"].shape[0]),
            "feature_stats": self.feature_stats.to_dict(),
            "target_stats": {"mean": self.target_mean, "std": self.target_std},
            "weights": {
                k: {"shape": list(v.shape), "data": v.astype(np.float64).ravel().tolist()}
                for k, v in self.params.items()
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LSTMModel":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError(f"not a {MODEL_FORMAT} file")
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"model version {d.get('version')} != supported {MODEL_VERSION}")
        hyper = Hyperparameters.from_dict(d["hyperparameters"])
        params = {
            k: np.array(w["data"], dtype=np.float64).reshape(w["shape"]).astype(hyper.dtype)
            for k, w in d["weights"].items()
        }
        if set(params) != set(PARAM_NAMES):
            raise ValueError("model file is missing weight matrices")
        return cls(
            target=d["target"],
            mode=Mode(d["mode"]),
            hyper=hyper,
            params=params,
            feature_stats=ChannelStats.from_dict(d["feature_stats"]),
            target_mean=float(d["target_stats"]["mean"]),
            target_std=float(d["target_stats"]["std"]),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "LSTMModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def save_models(models: dict, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for target, model in models.items():
        model.save(directory / f"{target}.json")


def load_models(directory, targets=ALL_TARGETS) -> dict:
    directory = Path(directory)
    models = {}
    for target in targets:
        path = directory / f"{target}.json"
        if path.exists():
            models[target] = LSTMModel.load(path)
    return models


# ----------------------------------------------------------------------------
# Training
# ----------------------------------------------------------------------------

class Adam:
    def __init__(self, params: dict, lr: float):
        self.lr = lr
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - ADAM_BETA1**self.t
        c2 = 1.0 - ADAM_BETA2**self.t
        for k in PARAM_NAMES:
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            params[k] -= (self.lr / c1) * m / (np.sqrt(v / c2) + ADAM_EPS)


@dataclass
class TrainingData:
    """Raw features (N, 145, 48) and targets (N,) or (N, 145)."""

    features: np.ndarray
    targets: np.ndarray

    def __len__(self):
        return len(self.features)


def _target_stats(targets: np.ndarray) -> tuple[float, float]:
    mean = float(np.mean(targets))
    std = float(np.std(targets))
    return mean, (std if std > 1e-12 else 1.0)


def train(target: str, train_data: TrainingData, val_data: TrainingData | None, hyper: Hyperparameters,
          feature_stats: ChannelStats | None = None) -> LSTMModel:
    """Fit one model with Adam on the MAE loss; keeps the epoch with the best validation MAE.

    Feature statistics default to the training split. Validation MAE is logged
    in target units. With no validation data the final epoch is returned.
    """
    if len(train_data) == 0:
        raise ValueError("empty training set")
    if not np.all(np.isfinite(train_data.targets)):
        raise ValueError("training targets must be finite")
    mode = mode_for_target(target)
    dtype = np.dtype(hyper.dtype)
    rng = np.random.default_rng(hyper.seed)
    stats = feature_stats or ChannelStats.fit(train_data.features)
    t_mean, t_std = _target_stats(train_data.targets)

    X = normalize(train_data.features, stats).astype(dtype)
    Y = ((train_data.targets - t_mean) / t_std).astype(dtype)
    params = init_params(X.shape[2], hyper.hidden_units, rng, dtype)
    model = LSTMModel(target, mode, hyper, params, stats, t_mean, t_std)
    opt = Adam(params, hyper.learning_rate)

    best = (np.inf, None, -1)
    n = len(X)
    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, hyper.batch_size):
            idx = np.sort(order[start : start + hyper.batch_size])
            value, grads = loss_and_grads(params, X[idx], Y[idx], mode, hyper.l2_kernel, "mae",
                                          hyper.dropout_rate, True, rng)
            if not np.isfinite(value):
                raise TrainingDivergedError(epoch, value)
            opt.step(params, grads)
            total += value * len(idx)
        entry = {"epoch": epoch, "train_loss": total / n}
        if val_data is not None and len(val_data):
            pred = model.predict(val_data.features)
            if not np.all(np.isfinite(pred)):
                raise TrainingDivergedError(epoch, float("nan"))
            val_mae = float(np.mean(np.abs(pred - val_data.targets)))
            entry["val_mae"] = val_mae
            if val_mae < best[0]:
                best = (val_mae, {k: v.copy() for k, v in params.items()}, epoch)
        model.log.append(entry)
        log.debug("%s epoch %d %s", target, epoch, entry)
    if best[1] is not None:
        model.params = best[1]
        model.log.append({"selected_epoch": best[2], "val_mae": best[0]})
    return model


def expand_search_grid(grid: dict) -> list[Hyperparameters]:
    """Cartesian product of a {field: [values]} search grid over Hyperparameters defaults."""
    keys = sorted(grid)
    combos = itertools.product(*(grid[k] if isinstance(grid[k], (list, tuple)) else [grid[k]] for k in keys))
    return [Hyperparameters.from_dict(dict(zip(keys, values))) for values in combos]


def tune(target: str, train_data: TrainingData, val_data: TrainingData, grid) -> tuple[Hyperparameters, list]:
    """Exhaustive search; minimal validation MAE wins, ties go to smaller D then smaller learning rate.

    ``grid`` is a list of Hyperparameters or a {field: [values]} dict.
    Returns the chosen configuration and a list of (hyper, val_mae) results.
    """
    candidates = expand_search_grid(grid) if isinstance(grid, dict) else list(grid)
    if not candidates:
        raise ValueError("empty search grid")
    results = []
    for hyper in candidates:
        model = train(target, train_data, val_data, hyper)
        pred = model.predict(val_data.features)
        results.append((hyper, float(np.mean(np.abs(pred - val_data.targets)))))
    best = min(results, key=lambda r: (r[1], r[0].hidden_units, r[0].learning_rate))
    return best[0], results


# ----------------------------------------------------------------------------
# Inference
# ----------------------------------------------------------------------------

def _require(models: dict, targets):
    missing = [t for t in targets if t not in models]
    if missing:
        raise KeyError(f"missing trained models for: {', '.join(missing)}")


def predict_impact_info(models: dict, features) -> dict:
    """Speed (m/s), alpha, beta (deg), Y, Z (mm); scalars for one sample, arrays for a batch."""
    _require(models, SCALAR_TARGETS)
    single = isinstance(features, FeatureTensor) or np.asarray(features).ndim == 2
    out = {t: models[t].predict(features) for t in SCALAR_TARGETS}
    return {t: float(v[0]) for t, v in out.items()} if single else out


def predict_force(models: dict, features) -> tuple[np.ndarray, np.ndarray]:
    """Helmet and head/face force profiles in kN, clamped at zero."""
    _require(models, FORCE_TARGETS)
    single = isinstance(features, FeatureTensor) or np.asarray(features).ndim == 2
    helmet, head = (np.maximum(models[t].predict(features), 0.0) for t in FORCE_TARGETS)
    return (helmet[0], head[0]) if single else (helmet, head)


@dataclass(frozen=True)
class LocationPrediction:
    setup: ImpactSetup
    location: ImpactLocation
    region: HelmetRegion
    missed: bool


def locate(setup: ImpactSetup) -> LocationPrediction:
    """Region for a (predicted) setup; a line missing the sphere is moved to its closest sphere point."""
    line = impact_line(setup)
    point = sphere_intersection(line, SPHERE_RADIUS_MM)
    missed = point is None
    if missed:
        point = closest_point_on_sphere(line, SPHERE_RADIUS_MM)
    loc = to_location(point)
    return LocationPrediction(setup, loc, classify_region(loc), missed)


def predict_location(models: dict, features) -> LocationPrediction | list[LocationPrediction]:
    info = predict_impact_info(models, features)
    if isinstance(info["speed"], float):
        return locate(ImpactSetup(info["alpha"], info["beta"], info["Y"], info["Z"], info["speed"]))
    return [
        locate(ImpactSetup(a, b, y, z, s))
        for a, b, y, z, s in zip(info["alpha"], info["beta"], info["Y"], info["Z"], info["speed"])
    ]


def clone(model: LSTMModel) -> LSTMModel:
    return copy.deepcopy(model)
