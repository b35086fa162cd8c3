"""Deep-kernel surrogate: an encoder feeding an exact GP on its 2-D latent mean.

The encoder is normally copied from a trained low-fidelity model and then
fine-tuned together with the GP hyperparameters by ascending the marginal
likelihood; gradients reach the encoder through the kernel's dependence on
the latent training inputs.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gp, nn
from .metrics import MetricsRecord, pearson_r, spearman_rho
from .sampling import Dataset, log_edp_stats
from .starlight_low import ENCODER_SIZES, LATENT_DIM
from .workload import N_FEATURES

log = logging.getLogger(__name__)

FORMAT = "mfdse-starlight"
FORMAT_VERSION = 1
DEFAULT_LR_GP = 0.01
REFIT_STEPS = 50


@dataclass
class TrainHistory:
    epoch: list[int] = field(default_factory=list)
    mll: list[float] = field(default_factory=list)
    rho: list[float] = field(default_factory=list)


@dataclass
class StarlightModel:
    encoder: nn.NetworkParams
    gp: gp.GpState
    train_x: np.ndarray
    target_mean: float = 0.0
    target_std: float = 1.0
    provenance: str = "transferred"
    seed: int = 0
    epochs_trained: int = 0

    @property
    def n_train(self) -> int:
        return self.gp.n

    def standardize(self, log_edp):
        return (np.asarray(log_edp, dtype=np.float64) - self.target_mean) / self.target_std

    def destandardize(self, z):
        return np.asarray(z) * self.target_std + self.target_mean

    def copy(self) -> "StarlightModel":
        return StarlightModel.from_dict(self.to_dict())

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "encoder": self.encoder.to_dict(),
            "kernel": self.gp.params.to_dict(),
            "prior": list(self.gp.prior),
            "train_x": self.train_x.tolist(),
            "train_y": self.gp.y.tolist(),
            "target_mean": self.target_mean,
            "target_std": self.target_std,
            "provenance": self.provenance,
            "seed": self.seed,
            "epochs_trained": self.epochs_trained,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "StarlightModel":
        if obj.get("format") != FORMAT:
            raise ValueError("not a surrogate checkpoint")
        if obj.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported surrogate checkpoint version {obj.get('version')}")
        encoder = nn.NetworkParams.from_dict(obj["encoder"])
        x = np.asarray(obj["train_x"], dtype=np.float64).reshape(-1, N_FEATURES)
        state = gp.GpState(
            latent(encoder, x), obj["train_y"], gp.KernelParams.from_dict(obj["kernel"]), tuple(obj["prior"])
        )
        return cls(
            encoder, state, x, obj["target_mean"], obj["target_std"],
            obj["provenance"], obj["seed"], obj["epochs_trained"],
        )


def latent(encoder: nn.NetworkParams, features) -> np.ndarray:
    """Latent mean of the encoder; the log-variance head is ignored."""
    return nn.predict(encoder, features)[:, :LATENT_DIM]


def _check_features(features) -> np.ndarray:
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if x.ndim != 2 or x.shape[1] != N_FEATURES:
        raise ValueError(f"expected (n, {N_FEATURES}) features, got {np.shape(features)}")
    return x


def _build(encoder, x, log_edp, provenance, seed, scaler=None) -> StarlightModel:
    sizes = encoder.sizes
    if sizes[0] != N_FEATURES or sizes[-1] < LATENT_DIM:
        raise ValueError(f"encoder widths {sizes} do not map {N_FEATURES} features to a latent")
    if len(x) == 0:
        raise ValueError("empty training set")
    mean, std = scaler if scaler is not None else log_edp_stats(log_edp)
    y = (np.asarray(log_edp) - mean) / std
    state = gp.GpState(latent(encoder, x), y)
    return StarlightModel(encoder, state, x.copy(), mean, std, provenance, seed)


def _training_arrays(dataset: Dataset, train_idx):
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if dataset.fidelity != "high":
        raise ValueError(f"expected a high-fidelity dataset, got {dataset.fidelity!r}")
    if train_idx is None:
        train_idx, _ = dataset.split()
    return dataset.features()[train_idx], dataset.log_edp()[train_idx]


def init_from_transfer(encoder: nn.NetworkParams, dataset: Dataset, train_idx=None, seed: int = 0) -> StarlightModel:
    """Copy ``encoder`` verbatim and condition the GP on the training split."""
    x, y = _training_arrays(dataset, train_idx)
    return _build(encoder.copy(), x, y, "transferred", seed)


def init_from_scratch(dataset: Dataset, train_idx=None, seed: int = 0) -> StarlightModel:
    """Same architecture with a randomly initialised encoder."""
    x, y = _training_arrays(dataset, train_idx)
    encoder = nn.NetworkParams.init(ENCODER_SIZES, np.random.default_rng(seed))
    return _build(encoder, x, y, "scratch", seed)


def _ascend(model: StarlightModel, steps: int, lr_encoder: float, lr_gp: float, on_step=None) -> float:
    """Full-batch joint MLL ascent; returns the final MLL."""
    theta = model.gp.params.vector()
    opt_gp = nn.AdamState.for_arrays([theta], lr=lr_gp)
    opt_enc = nn.AdamState.for_arrays(model.encoder.arrays, lr=lr_encoder)
    y, prior = model.gp.y, model.gp.prior
    value = float("nan")
    for step in range(steps):
        out, cache = nn.forward(model.encoder, model.train_x)
        state = gp.GpState(out[:, :LATENT_DIM], y, gp.KernelParams.from_vector(theta), prior)
        value, g_theta, g_z = gp.mll_and_grad(state, wrt_inputs=lr_encoder > 0)
        nn.adam_step([theta], [-g_theta], opt_gp)
        if lr_encoder > 0:
            g_out = np.zeros_like(out)
            g_out[:, :LATENT_DIM] = -g_z
            grads, _ = nn.backward(model.encoder, cache, g_out)
            nn.adam_step(model.encoder, grads, opt_enc)
        if on_step is not None:
            on_step(step + 1, value)
    model.gp = gp.GpState(latent(model.encoder, model.train_x), y, gp.KernelParams.from_vector(theta), prior)
    return gp.mll(model.gp)


def train_joint(
    model: StarlightModel,
    epochs: int = 1000,
    lr_encoder: float | None = None,
    lr_gp: float = DEFAULT_LR_GP,
    test: tuple | None = None,
    eval_interval: int = 10,
):
    """Fine-tune encoder and GP together; returns ``(model, history)``.

    ``test`` is an optional ``(features, log_edp)`` pair; its Spearman rho
    is logged every ``eval_interval`` epochs.  The encoder learning rate
    defaults to a tenth of the GP rate.
    """
    if lr_encoder is None:
        lr_encoder = lr_gp / 10.0
    if epochs < 0 or lr_encoder < 0 or lr_gp < 0:
        raise ValueError("epochs and learning rates must be non-negative")
    history = TrainHistory()

    def on_step(step, value):
        if step % eval_interval == 0 or step == epochs:
            history.epoch.append(model.epochs_trained + step)
            history.mll.append(value)
            if test is not None:
                # the GP state lags the encoder inside the loop; rebuild for scoring
                snapshot = gp.GpState(latent(model.encoder, model.train_x), model.gp.y,
                                      model.gp.params, model.gp.prior)
                mean, _ = gp.posterior(snapshot, latent(model.encoder, test[0]))
                history.rho.append(spearman_rho(mean, test[1]))

    _ascend(model, epochs, lr_encoder, lr_gp, on_step)
    model.epochs_trained += epochs
    return model, history


def predict(model: StarlightModel, features):
    """Posterior mean and std of standardised log10-EDP."""
    x = _check_features(features)
    mean, var = gp.posterior(model.gp, latent(model.encoder, x))
    return mean, np.sqrt(var)


def predict_log_edp(model: StarlightModel, features) -> np.ndarray:
    return model.destandardize(predict(model, features)[0])


def update(model: StarlightModel, features, log_edp, refit_steps: int = REFIT_STEPS,
           lr_gp: float = DEFAULT_LR_GP, lr_encoder: float | None = None) -> StarlightModel:
    """Append new high-fidelity observations and warm-start a short refit.

    Exact duplicates of existing (or earlier new) features are dropped.
    The model is modified in place and returned.
    """
    x = np.asarray(features, dtype=np.float64).reshape(-1, N_FEATURES) if np.size(features) else np.zeros((0, N_FEATURES))
    y = np.asarray(log_edp, dtype=np.float64).ravel()
    if len(x) != len(y):
        raise ValueError("features and targets differ in length")
    seen = {row.tobytes() for row in model.train_x}
    keep = []
    for i, row in enumerate(x):
        key = row.tobytes()
        if key in seen:
            log.warning("dropping duplicate sample from surrogate update")
            continue
        seen.add(key)
        keep.append(i)
    if keep:
        model.train_x = np.vstack([model.train_x, x[keep]])
        y_all = np.concatenate([model.gp.y, model.standardize(y[keep])])
        model.gp = gp.GpState(latent(model.encoder, model.train_x), y_all, model.gp.params, model.gp.prior)
    if refit_steps > 0:
        if lr_encoder is None:
            lr_encoder = lr_gp / 10.0
        _ascend(model, refit_steps, lr_encoder, lr_gp)
    return model


def evaluate_surrogate(model: StarlightModel, features, log_edp, seed: int | None = None,
                       dataset_hash: str = "") -> list[MetricsRecord]:
    y = np.asarray(log_edp, dtype=np.float64)
    if len(y) < 2:
        raise ValueError("test split needs at least 2 points")
    pred = predict(model, features)[0]
    target = model.standardize(y)
    ctx = {"epochs": model.epochs_trained, "provenance": model.provenance}
    return [
        MetricsRecord("spearman_rho", "surrogate", spearman_rho(pred, target), len(y), seed, dataset_hash, ctx),
        MetricsRecord("pearson_r", "surrogate", pearson_r(pred, target), len(y), seed, dataset_hash, ctx),
    ]


def save_model(model: StarlightModel, path, meta: dict | None = None) -> Path:
    """Write the checkpoint; ``meta`` is stored under ``run_provenance``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    obj = model.to_dict()
    if meta:
        obj["run_provenance"] = meta
    path.write_text(json.dumps(obj, sort_keys=True), encoding="utf-8")
    return path


def load_model(path) -> StarlightModel:
    return StarlightModel.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def model_hash(model: StarlightModel) -> str:
    return hashlib.sha256(json.dumps(model.to_dict(), sort_keys=True).encode()).hexdigest()[:16]
