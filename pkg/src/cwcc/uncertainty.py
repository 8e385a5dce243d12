"""Error-predicting branch attached to a frozen illuminant network.

The branch reads the merging block's 40-unit hidden activation and regresses
the recovery error (degrees) that the frozen model makes on that image.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .layers import dense
from .metrics import recovery_error
from .model import CwccModel
from .optim import Adam
from .tensor import Tensor, no_grad, relu, tabs

PREFIX = "uq/"


class UncertaintyBranch:
    """dense(40->40)+ReLU, dense(40->15)+ReLU, dense(15->1), absolute value."""

    def __init__(self, in_units: int = 40, sizes: tuple[int, ...] = (40, 15), seed: int = 0):
        rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        dims = (in_units, *sizes, 1)
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:]), start=1):
            w = (rng.standard_normal((a, b)) * math.sqrt(2.0 / a)).astype(np.float32)
            self.params[f"{PREFIX}dense{i}/w"] = Tensor(w, requires_grad=True)
            self.params[f"{PREFIX}dense{i}/b"] = Tensor(np.zeros(b, np.float32), requires_grad=True)
        self.n_layers = len(dims) - 1

    def __call__(self, hidden: Tensor) -> Tensor:
        x = hidden if isinstance(hidden, Tensor) else Tensor(np.asarray(hidden, np.float32))
        for i in range(1, self.n_layers + 1):
            x = dense(x, self.params[f"{PREFIX}dense{i}/w"], self.params[f"{PREFIX}dense{i}/b"])
            if i < self.n_layers:
                x = relu(x)
        return tabs(x.reshape(-1))

    def predict(self, hidden) -> np.ndarray:
        with no_grad():
            return self(hidden).data.astype(np.float64)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        mine = {k: v for k, v in state.items() if k.startswith(PREFIX)}
        if set(mine) != set(self.params):
            raise ValueError(f"branch tensors {sorted(mine)} do not match {sorted(self.params)}")
        for k, arr in mine.items():
            if arr.shape != self.params[k].shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {self.params[k].shape}")
            self.params[k].data = np.array(arr, dtype=np.float32)

    @classmethod
    def from_state(cls, state: dict[str, np.ndarray]) -> "UncertaintyBranch":
        mine = {k: v for k, v in state.items() if k.startswith(PREFIX)}
        if not mine:
            raise ValueError("no uncertainty-branch tensors found")
        n = len(mine) // 2
        dims = [mine[f"{PREFIX}dense{i}/w"].shape[0] for i in range(1, n + 1)]
        branch = cls(dims[0], tuple(dims[1:]))
        branch.load_state_dict(mine)
        return branch


@dataclass
class ErrorDataset:
    hidden: np.ndarray  # [N, 40]
    errors: np.ndarray  # [N], degrees

    def __len__(self) -> int:
        return len(self.errors)


def hidden_and_estimate(model: CwccModel, images: np.ndarray, batch_size: int = 32
                        ) -> tuple[np.ndarray, np.ndarray]:
    """One inference pass returning hidden activations and unit-norm estimates."""
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    hs, es = [], []
    with no_grad():
        for i in range(0, len(images), batch_size):
            h = model.embed(images[i:i + batch_size])
            hs.append(h.data)
            es.append(model.head(h).data)
    est = np.concatenate(es).astype(np.float64)
    return np.concatenate(hs), est / np.linalg.norm(est, axis=1, keepdims=True)


def build_error_dataset(model: CwccModel, images: np.ndarray, ground_truths: np.ndarray
                        ) -> ErrorDataset:
    """Hidden vectors and the frozen model's recovery errors, one pair per image."""
    if len(images) == 0:
        raise ValueError("cannot build an error dataset from zero images")
    hidden, est = hidden_and_estimate(model, images)
    errors = np.atleast_1d(recovery_error(np.asarray(ground_truths), est))
    return ErrorDataset(hidden.astype(np.float32), errors.astype(np.float64))


@dataclass(frozen=True)
class BranchTrainConfig:
    epochs: int = 50
    batch_size: int = 16
    lr: float = 1e-3


def train_branch(branch: UncertaintyBranch, dataset: ErrorDataset,
                 hyper: BranchTrainConfig | None = None, seed: int = 0,
                 backbone: CwccModel | None = None) -> tuple[UncertaintyBranch, list[float]]:
    """Fit the branch to the error dataset by MSE; returns per-epoch mean loss.

    When ``backbone`` is given its parameters are frozen for the duration and
    verified bit-identical afterwards.
    """
    hyper = hyper or BranchTrainConfig()
    if len(dataset) == 0:
        raise ValueError("error dataset is empty")
    frozen = {}
    before = None
    if backbone is not None:
        before = backbone.digest()
        for k, p in backbone.params.items():
            frozen[k] = p.requires_grad
            p.requires_grad = False
    rng = np.random.default_rng(seed)
    opt = Adam(branch.params, lr=hyper.lr)
    targets = dataset.errors.astype(np.float32)
    history = []
    try:
        for _ in range(hyper.epochs):
            order = rng.permutation(len(dataset))
            total = 0.0
            for start in range(0, len(order), hyper.batch_size):
                idx = order[start:start + hyper.batch_size]
                opt.zero_grad()
                diff = branch(Tensor(dataset.hidden[idx])) - targets[idx]
                loss = (diff * diff).mean()
                loss.backward()
                opt.step()
                total += loss.item() * len(idx)
            history.append(total / len(dataset))
    finally:
        if backbone is not None:
            for k, p in backbone.params.items():
                p.requires_grad = frozen[k]
    if backbone is not None and backbone.digest() != before:
        raise RuntimeError("backbone parameters changed while training the uncertainty branch")
    return branch, history


def predict_with_uncertainty(model: CwccModel, branch: UncertaintyBranch, images
                             ) -> tuple[np.ndarray, np.ndarray | float]:
    """Illuminant estimate(s) and predicted error(s) from a single forward pass."""
    single = np.asarray(images).ndim == 3
    hidden, est = hidden_and_estimate(model, images)
    pred = branch.predict(hidden)
    if single:
        return est[0], float(pred[0])
    return est, pred


@dataclass(frozen=True)
class FilterReport:
    tau: float
    accepted: int
    rejected: int
    worst_accepted: float | None  # None when nothing was accepted
    kept: np.ndarray  # boolean mask over the input pairs

    def describe(self) -> str:
        worst = "n/a (no samples accepted)" if self.worst_accepted is None \
            else f"{self.worst_accepted:.4f}"
        return (f"tau={self.tau:.4f} accepted={self.accepted} rejected={self.rejected} "
                f"worst_accepted_true_deg={worst}")


def threshold_filter(pairs, tau: float) -> FilterReport:
    """Keep the ``(predicted_deg, true_deg)`` pairs whose prediction is at most ``tau``."""
    if not tau >= 0:
        raise ValueError(f"tau must be >= 0 degrees, got {tau}")
    arr = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
    predicted, true = arr[:, 0], arr[:, 1]
    kept = predicted <= tau
    worst = float(true[kept].max()) if kept.any() else None
    return FilterReport(float(tau), int(kept.sum()), int((~kept).sum()), worst, kept)
