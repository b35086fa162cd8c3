"""Low-fidelity source model: a variational autoencoder over the 40 design
features with a predictor head on the 2-D latent mean.

The predictor is trained jointly with reconstruction and KL terms, which
pulls the latent space into an ordering by EDP.  Only the encoder is
carried over to the high-fidelity surrogate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .sampling import Dataset, log_edp_stats
from .workload import N_FEATURES

LATENT_DIM = 2
ENCODER_SIZES = (N_FEATURES, 24, 12, 2 * LATENT_DIM)
DECODER_SIZES = (LATENT_DIM, 12, 24, N_FEATURES)
PREDICTOR_SIZES = (LATENT_DIM, 64, 256, 256, 64, 1)
FORMAT = "mfdse-starlight-low"


@dataclass
class LossWeights:
    pred: float = 1.0
    recon: float = 1.0
    kl: float = 0.01


@dataclass
class LossHistory:
    pred: list[float] = field(default_factory=list)
    recon: list[float] = field(default_factory=list)
    kl: list[float] = field(default_factory=list)
    total: list[float] = field(default_factory=list)

    def rows(self):
        for i, row in enumerate(zip(self.pred, self.recon, self.kl, self.total)):
            yield (i + 1, *row)


@dataclass
class StarlightLowModel:
    encoder: nn.NetworkParams
    decoder: nn.NetworkParams
    predictor: nn.NetworkParams
    weights: LossWeights = field(default_factory=LossWeights)
    target_mean: float = 0.0
    target_std: float = 1.0
    seed: int = 0
    epochs_trained: int = 0

    @classmethod
    def init(cls, seed: int = 0, weights: LossWeights | None = None) -> "StarlightLowModel":
        rng = np.random.default_rng(seed)
        return cls(
            nn.NetworkParams.init(ENCODER_SIZES, rng),
            nn.NetworkParams.init(DECODER_SIZES, rng),
            nn.NetworkParams.init(PREDICTOR_SIZES, rng),
            weights or LossWeights(),
            seed=seed,
        )

    def standardize(self, log_edp):
        return (np.asarray(log_edp) - self.target_mean) / self.target_std

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": 1,
            "encoder": self.encoder.to_dict(),
            "decoder": self.decoder.to_dict(),
            "predictor": self.predictor.to_dict(),
            "loss_weights": vars(self.weights),
            "target_mean": self.target_mean,
            "target_std": self.target_std,
            "seed": self.seed,
            "epochs_trained": self.epochs_trained,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "StarlightLowModel":
        if obj.get("format") != FORMAT:
            raise ValueError("not a low-fidelity model checkpoint")
        return cls(
            nn.NetworkParams.from_dict(obj["encoder"]),
            nn.NetworkParams.from_dict(obj["decoder"]),
            nn.NetworkParams.from_dict(obj["predictor"]),
            LossWeights(**obj["loss_weights"]),
            obj["target_mean"],
            obj["target_std"],
            obj["seed"],
            obj["epochs_trained"],
        )


def _as_features(features) -> np.ndarray:
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if x.shape[1] != N_FEATURES:
        raise ValueError(f"expected {N_FEATURES} features, got {x.shape[1]}")
    return x


def encode(model: StarlightLowModel, features):
    """Latent mean and log-variance (no sampling)."""
    out = nn.predict(model.encoder, _as_features(features))
    return out[:, :LATENT_DIM], out[:, LATENT_DIM:]


def predict_low(model: StarlightLowModel, features) -> np.ndarray:
    """Standardised log10-EDP predictions from the latent mean."""
    mu, _ = encode(model, features)
    return nn.predict(model.predictor, mu)[:, 0]


def reconstruct(model: StarlightLowModel, features) -> np.ndarray:
    mu, _ = encode(model, features)
    return nn.predict(model.decoder, mu)


def export_encoder(model: StarlightLowModel) -> nn.NetworkParams:
    if model.epochs_trained == 0:
        raise ValueError("model has not been trained")
    return model.encoder.copy()


def train_step(model, opt, x, y, rng):
    """One minibatch update; returns the (pred, recon, kl, total) loss terms."""
    lw = model.weights
    enc_out, enc_cache = nn.forward(model.encoder, x)
    mu, logvar = enc_out[:, :LATENT_DIM], enc_out[:, LATENT_DIM:]
    z, eps = nn.reparameterize(mu, logvar, rng)
    recon, dec_cache = nn.forward(model.decoder, z)
    pred, pred_cache = nn.forward(model.predictor, mu)

    l_pred, g_pred = nn.mse(pred[:, 0], y)
    l_recon, g_recon = nn.mse(recon, x)
    l_kl, g_mu_kl, g_lv_kl = nn.gaussian_kl_batch(mu, logvar)
    total = lw.pred * l_pred + lw.recon * l_recon + lw.kl * l_kl
    if not np.isfinite(total):
        raise FloatingPointError("non-finite training loss")

    grads_p, g_mu_pred = nn.backward(model.predictor, pred_cache, lw.pred * g_pred[:, None])
    grads_d, g_z = nn.backward(model.decoder, dec_cache, lw.recon * g_recon)
    g_mu = g_mu_pred + g_z + lw.kl * g_mu_kl
    g_lv = g_z * 0.5 * np.exp(0.5 * logvar) * eps + lw.kl * g_lv_kl
    grads_e, _ = nn.backward(model.encoder, enc_cache, np.hstack([g_mu, g_lv]))

    nn.adam_step(model.encoder, grads_e, opt["encoder"])
    nn.adam_step(model.decoder, grads_d, opt["decoder"])
    nn.adam_step(model.predictor, grads_p, opt["predictor"])
    return l_pred, l_recon, l_kl, total, grads_p


def make_optimizers(model: StarlightLowModel, lr: float = 1e-3) -> dict:
    return {
        name: nn.AdamState.for_arrays(getattr(model, name).arrays, lr=lr)
        for name in ("encoder", "decoder", "predictor")
    }


def train_low(
    dataset: Dataset,
    epochs: int = 1000,
    seed: int = 0,
    weights: LossWeights | None = None,
    lr: float = 1e-3,
    batch_size: int = 256,
    train_idx=None,
    model: StarlightLowModel | None = None,
    targets=None,
):
    """Train on the training split of ``dataset``; returns ``(model, history)``.

    ``targets`` overrides the log10-EDP regression targets (used when
    continuing training of an existing model on other data).
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if train_idx is None:
        train_idx, _ = dataset.split(seed)
    if len(train_idx) == 0:
        raise ValueError("empty training split")
    x = dataset.features()[train_idx]
    log_edp = dataset.log_edp()[train_idx] if targets is None else np.asarray(targets)
    if model is None:
        model = StarlightLowModel.init(seed, weights)
        model.target_mean, model.target_std = log_edp_stats(log_edp)
    y = model.standardize(log_edp)

    opt = make_optimizers(model, lr)
    rng = np.random.default_rng(seed + 1)
    batches = nn.MiniBatches(len(x), batch_size, np.random.default_rng(seed + 2))
    history = LossHistory()
    for _ in range(epochs):
        sums = np.zeros(4)
        for idx in batches:
            terms = train_step(model, opt, x[idx], y[idx], rng)[:4]
            sums += np.asarray(terms) * len(idx)
        sums /= len(x)
        history.pred.append(float(sums[0]))
        history.recon.append(float(sums[1]))
        history.kl.append(float(sums[2]))
        history.total.append(float(sums[3]))
        model.epochs_trained += 1
    return model, history


def loss_terms(model: StarlightLowModel, features, log_edp) -> dict:
    """Deterministic (latent-mean) loss terms on held-out data."""
    x = _as_features(features)
    mu, logvar = encode(model, x)
    pred = nn.predict(model.predictor, mu)[:, 0]
    recon = nn.predict(model.decoder, mu)
    return {
        "pred": nn.mse(pred, model.standardize(log_edp))[0],
        "recon": nn.mse(recon, x)[0],
        "kl": nn.gaussian_kl(mu, logvar) / len(x),
    }


def save_low_model(model: StarlightLowModel, path, meta: dict | None = None) -> Path:
    """Write the checkpoint plus a ``.meta.json`` sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model.to_dict(), sort_keys=True), encoding="utf-8")
    sidecar = {"loss_weights": vars(model.weights), "seed": model.seed}
    sidecar.update(meta or {})
    path.with_suffix(".meta.json").write_text(json.dumps(sidecar, sort_keys=True, indent=1), encoding="utf-8")
    return path


def load_low_model(path) -> StarlightLowModel:
    return StarlightLowModel.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
