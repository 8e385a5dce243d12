"""Channel-wise illuminant estimation network.

Each colour plane goes through the same fully-convolutional feature
extractor (conv 3x3 -> maxpool -> 2 fire -> maxpool -> 2 fire -> maxpool).
The three 128-channel maps are concatenated, globally average-pooled and
mapped to an illuminant by a small MLP (384 -> 40 -> 3).  The ``per_channel``
variant gives every plane its own extractor.
"""
from __future__ import annotations

import hashlib
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np

from . import formats
from .layers import LayerSpec, conv2d, dense, dropout, fire, gap, maxpool2d
from .optim import Adam
from .tensor import Tensor, arccos, clip, concat, no_grad, relu, softplus, sqrt, tsum

log = logging.getLogger(__name__)

VARIANTS = ("shared", "per_channel")
CHANNELS = ("r", "g", "b")
OUTPUT_FLOOR = 1e-6
COS_CLAMP = 1 - 1e-7


@dataclass(frozen=True)
class CwccConfig:
    input_size: int = 128
    variant: str = "shared"
    dropout_rate: float = 0.10
    fire_sizes: tuple[int, ...] = (64, 64, 128, 128)
    conv_channels: int = 64
    hidden_units: int = 40
    squeeze_ratio: float = 0.5
    expand3x3_fraction: float = 0.625
    pool_stride: int = 2

    def __post_init__(self):
        object.__setattr__(self, "fire_sizes", tuple(self.fire_sizes))
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.input_size < 32 or self.input_size % 8:
            raise ValueError(f"input_size must be >= 32 and divisible by 8, got {self.input_size}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if len(self.fire_sizes) != 4:
            raise ValueError("fire_sizes needs four entries")

    def extractor_specs(self) -> list[tuple[str, LayerSpec]]:
        """Named layer specs of the per-plane feature extractor, in order."""
        c = self.conv_channels
        specs = [("conv1", LayerSpec("conv2d", in_channels=1, out_channels=c, kernel_size=3, padding=1)),
                 ("pool1", LayerSpec("maxpool2d", kernel_size=3, stride=self.pool_stride))]
        names = ["fire2", "fire3", "pool2", "fire4", "fire5", "pool3"]
        sizes = iter(self.fire_sizes)
        for name in names:
            if name.startswith("pool"):
                specs.append((name, LayerSpec("maxpool2d", kernel_size=3, stride=self.pool_stride)))
                continue
            spec = LayerSpec.make_fire(c, next(sizes), self.squeeze_ratio, self.expand3x3_fraction)
            specs.append((name, spec))
            c = spec.out_channels
        return specs

    @property
    def feature_channels(self) -> int:
        return self.fire_sizes[-1]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CwccConfig":
        return cls(**d)


def _he(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(np.float32)


def init_layer(rng: np.random.Generator, spec: LayerSpec) -> dict[str, np.ndarray]:
    """He-normal weights, zero biases."""
    out = {}
    for name, shape in spec.param_shapes().items():
        if name.endswith("b"):
            out[name] = np.zeros(shape, np.float32)
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
            out[name] = _he(rng, shape, fan_in)
    return out


class CwccModel:
    """Parameters plus the forward pass.

    ``params`` maps names such as ``f1/fire2/e3_w`` (shared extractor),
    ``f1_r/...`` (per-channel extractors) and ``f2/dense1/w`` to tensors.
    ``calls`` counts extractor and merge evaluations.
    """

    def __init__(self, config: CwccConfig | None = None, seed: int = 0,
                 identical_extractors: bool = False):
        self.config = config or CwccConfig()
        self.seed = seed
        self.calls: Counter = Counter()
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)
        specs = self.config.extractor_specs()
        first = None
        for prefix in self.extractor_prefixes():
            if prefix in {p.split("/")[0] for p in self.params}:
                continue
            if identical_extractors and first is not None:
                for name, arr in first.items():
                    self.params[f"{prefix}/{name}"] = Tensor(arr.copy(), requires_grad=True)
                continue
            block = {}
            for lname, spec in specs:
                for pname, arr in init_layer(rng, spec).items():
                    block[f"{lname}/{pname}"] = arr
            if first is None:
                first = block
            for name, arr in block.items():
                self.params[f"{prefix}/{name}"] = Tensor(arr, requires_grad=True)
        h = self.config.hidden_units
        merged = 3 * self.config.feature_channels
        for lname, spec in (("dense1", LayerSpec("dense", in_channels=merged, out_channels=h)),
                            ("dense2", LayerSpec("dense", in_channels=h, out_channels=3))):
            for pname, arr in init_layer(rng, spec).items():
                self.params[f"f2/{lname}/{pname}"] = Tensor(arr, requires_grad=True)

    # ---------------------------------------------------------------- structure
    def extractor_prefixes(self) -> tuple[str, str, str]:
        if self.config.variant == "shared":
            return ("f1", "f1", "f1")
        return tuple(f"f1_{c}" for c in CHANNELS)

    def extractor_params(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if k.startswith("f1")}

    def merge_params(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if k.startswith("f2/")}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            missing = sorted(set(self.params) - set(state))
            extra = sorted(set(state) - set(self.params))
            raise ValueError(f"parameter names differ: missing {missing[:3]}, unexpected {extra[:3]}")
        for k, arr in state.items():
            if arr.shape != self.params[k].shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {self.params[k].shape}")
            self.params[k].data = np.array(arr, dtype=np.float32)

    def digest(self) -> str:
        """SHA-256 over every parameter's name and bytes."""
        h = hashlib.sha256()
        for k in sorted(self.params):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.params[k].data).tobytes())
        return h.hexdigest()

    # ------------------------------------------------------------------ forward
    def extract(self, plane: Tensor, prefix: str) -> Tensor:
        """Disjoint-block features ``[N, 128, h, w]`` of ``[N, 1, S, S]`` planes."""
        self.calls["extractor"] += 1
        p = self.params
        x = plane
        for lname, spec in self.config.extractor_specs():
            key = f"{prefix}/{lname}"
            if spec.kind == "conv2d":
                x = relu(conv2d(x, p[f"{key}/w"], p[f"{key}/b"], padding=spec.padding))
            elif spec.kind == "maxpool2d":
                x = maxpool2d(x, spec.kernel_size, spec.stride)
            else:
                x = fire(x, spec, {n: p[f"{key}/{n}"] for n in spec.param_shapes()})
        return x

    def _check_input(self, images) -> np.ndarray:
        x = np.asarray(images.data if isinstance(images, Tensor) else images)
        if x.ndim == 3:
            x = x[None]
        s = self.config.input_size
        if x.ndim != 4 or x.shape[1:] != (s, s, 3):
            raise ValueError(f"expected images of shape (N, {s}, {s}, 3); got {x.shape} "
                             "(resize with dataset.resize_image first)")
        if not np.all(np.isfinite(x)):
            raise ValueError("input image contains non-finite pixels")
        return x.astype(np.float32, copy=False)

    def plane_features(self, images) -> list[Tensor]:
        """Pre-concatenation feature maps ``[F_r, F_g, F_b]``."""
        x = self._check_input(images)
        planes = x.transpose(3, 0, 1, 2)[:, :, None]  # (3, N, 1, S, S)
        return [self.extract(Tensor(planes[i]), prefix)
                for i, prefix in enumerate(self.extractor_prefixes())]

    def embed(self, images) -> Tensor:
        """40-unit hidden activation of the merging block (post-ReLU)."""
        feats = self.plane_features(images)
        self.calls["merge"] += 1
        pooled = gap(concat(feats, axis=1))
        p = self.params
        return relu(dense(pooled, p["f2/dense1/w"], p["f2/dense1/b"]))

    def head(self, hidden: Tensor, training: bool = False,
             rng: np.random.Generator | None = None) -> Tensor:
        """Dropout -> dense(40->3) -> softplus guard -> unit-norm illuminant ``[N, 3]``."""
        p = self.params
        h = dropout(hidden, self.config.dropout_rate, training, rng)
        raw = dense(h, p["f2/dense2/w"], p["f2/dense2/b"])
        pos = softplus(raw) + OUTPUT_FLOOR
        return pos / sqrt(tsum(pos * pos, axis=1, keepdims=True))

    def forward(self, images, training: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        return self.head(self.embed(images), training, rng)

    def predict(self, images, batch_size: int = 32) -> np.ndarray:
        """Unit-norm estimates as float64; a single ``(S, S, 3)`` image gives shape ``(3,)``."""
        x = self._check_input(images)
        out = []
        with no_grad():
            for i in range(0, len(x), batch_size):
                out.append(self.forward(x[i:i + batch_size]).data)
        est = np.concatenate(out).astype(np.float64)
        est /= np.linalg.norm(est, axis=1, keepdims=True)
        return est[0] if np.asarray(images).ndim == 3 else est


def count_parameters(model_or_params) -> int:
    params = model_or_params.params if isinstance(model_or_params, CwccModel) else model_or_params
    return int(sum(p.size for p in params.values()))


# ----------------------------------------------------------------- correction
def correct_image(image: np.ndarray, e) -> np.ndarray:
    """Divide out the illuminant, keeping the green channel's scale, and clip to [0, 1]."""
    e = np.asarray(e, dtype=np.float64)
    if e.shape != (3,) or not np.all(np.isfinite(e)) or np.any(e <= 0):
        raise ValueError(f"illuminant must be three positive values, got {e}")
    gains = e[1] / e
    return np.clip(np.asarray(image, dtype=np.float64) * gains, 0.0, 1.0).astype(np.float32)


# ------------------------------------------------------------------- training
def angular_loss(est: Tensor, gt: np.ndarray) -> Tensor:
    """Mean recovery angular error in degrees of unit-norm ``est`` against ``gt``."""
    gt = np.asarray(gt, dtype=np.float64)
    gt = (gt / np.linalg.norm(gt, axis=1, keepdims=True)).astype(est.dtype)
    cos = clip(tsum(est * gt, axis=1), -COS_CLAMP, COS_CLAMP)
    return arccos(cos).mean() * est.dtype.type(180.0 / math.pi)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_err_deg: float
    val_err_deg: float


class TrainingDiverged(FloatingPointError):
    pass


def evaluate(model: CwccModel, images: np.ndarray, gts: np.ndarray) -> np.ndarray:
    """Per-image recovery errors (degrees) of the model in inference mode."""
    from .metrics import recovery_error
    return np.atleast_1d(recovery_error(gts, model.predict(images)))


def train(model: CwccModel, train_set: tuple[np.ndarray, np.ndarray],
          val_set: tuple[np.ndarray, np.ndarray] | None = None,
          hyper: TrainConfig | None = None, seed: int = 0,
          progress=None) -> tuple[CwccModel, list[EpochLog]]:
    """Minimise mean recovery error with Adam; keep the best-validation parameters.

    ``train_set``/``val_set`` are ``(images [N,S,S,3], gts [N,3])``.  Without a
    validation set the training error selects the epoch.
    """
    hyper = hyper or TrainConfig()
    x, y = train_set
    if len(x) == 0:
        raise ValueError("training set is empty")
    if val_set is not None and len(val_set[0]) == 0:
        raise ValueError("validation set is empty")
    model._check_input(x[:1])
    rng = np.random.default_rng(seed)
    opt = Adam(model.params, hyper.lr, hyper.beta1, hyper.beta2, hyper.eps)
    history: list[EpochLog] = []
    best = (math.inf, {k: v.copy() for k, v in model.state_dict().items()})
    for epoch in range(hyper.epochs):
        order = rng.permutation(len(x))
        losses, weights = [], []
        for b, start in enumerate(range(0, len(x), hyper.batch_size)):
            idx = order[start:start + hyper.batch_size]
            opt.zero_grad()
            loss = angular_loss(model.forward(x[idx], training=True, rng=rng), y[idx])
            if not np.isfinite(loss.item()):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {b}")
            loss.backward()
            opt.step()
            losses.append(loss.item())
            weights.append(len(idx))
        train_err = float(np.average(losses, weights=weights))
        val_err = float(evaluate(model, *val_set).mean()) if val_set is not None else train_err
        history.append(EpochLog(epoch, train_err, val_err))
        if progress is not None:
            progress(history[-1])
        log.info("epoch %d train %.4f val %.4f", epoch, train_err, val_err)
        if val_err < best[0]:
            best = (val_err, {k: v.copy() for k, v in model.state_dict().items()})
    if hyper.epochs:
        model.load_state_dict(best[1])
    return model, history


# ---------------------------------------------------------------- checkpoints
def save_checkpoint(model: CwccModel, path, branch=None, **metadata) -> None:
    tensors = dict(model.state_dict())
    if branch is not None:
        tensors.update(branch.state_dict())
    meta = {"config": model.config.to_dict(), "variant": model.config.variant,
            "seed": model.seed, **metadata}
    formats.write_tensors(path, tensors, meta)


def load_checkpoint(path) -> CwccModel:
    tensors, meta = formats.read_tensors(path)
    if "config" not in meta:
        raise formats.FormatError(f"{path}: checkpoint metadata lacks a config")
    model = CwccModel(CwccConfig.from_dict(meta["config"]), seed=meta.get("seed", 0))
    own = {k: v for k, v in tensors.items() if not k.startswith("uq/")}
    try:
        model.load_state_dict(own)
    except ValueError as exc:
        raise formats.FormatError(f"{path}: checkpoint does not match its declared config: {exc}") from None
    model.metadata = meta
    return model
