import json

import numpy as np
import pytest

from mfdse import nn
from mfdse import starlight_low as sl
from mfdse.metrics import spearman_rho


def _test_split(low_dataset):
    _, test = low_dataset.split(0)
    return low_dataset.features()[test], low_dataset.log_edp()[test]


def test_architecture():
    model = sl.StarlightLowModel.init(0)
    assert model.encoder.sizes == [40, 24, 12, 4]
    assert model.decoder.sizes == [2, 12, 24, 40]
    assert model.predictor.sizes == [2, 64, 256, 256, 64, 1]


def test_zero_prediction_weight_isolates_predictor(low_dataset):
    model = sl.StarlightLowModel.init(1, sl.LossWeights(pred=0.0))
    before = [a.copy() for a in model.predictor.arrays]
    x = low_dataset.features()[:64]
    y = model.standardize(low_dataset.log_edp()[:64])
    opt = sl.make_optimizers(model)
    grads_p = sl.train_step(model, opt, x, y, np.random.default_rng(0))[4]
    assert all(not g.any() for g in grads_p)
    assert all(np.array_equal(a, b) for a, b in zip(before, model.predictor.arrays))


def test_loss_trend_over_seeds(low_dataset):
    sub = low_dataset.subset(range(512))
    drops = []
    for seed in range(10):
        _, hist = sl.train_low(sub, epochs=5, seed=seed)
        drops.append(hist.total[-1] - hist.total[0])
        assert len(hist.pred) == len(hist.recon) == len(hist.kl) == 5
    assert np.median(drops) <= 0


def test_train_rejects_empty(low_dataset):
    with pytest.raises(ValueError):
        sl.train_low(low_dataset.subset([]), epochs=1)


def test_low_model_accuracy(low_model, low_dataset):
    model = low_model[0]
    x, y = _test_split(low_dataset)
    pred = sl.predict_low(model, x)
    assert spearman_rho(pred, y) >= 0.95
    log_pred = pred * model.target_std + model.target_mean
    assert np.mean(np.abs(log_pred - y) <= 1.0) >= 0.9


def test_inference_is_deterministic(low_model, low_dataset):
    model = low_model[0]
    x, _ = _test_split(low_dataset)
    assert np.array_equal(sl.predict_low(model, x), sl.predict_low(model, x))
    mu1, _ = sl.encode(model, np.vstack([x[:1], x[:1]]))
    assert np.array_equal(mu1[0], mu1[1])


def test_latent_not_collapsed(low_model, low_dataset):
    model = low_model[0]
    x, y = _test_split(low_dataset)
    mu, _ = sl.encode(model, x)
    assert np.isfinite(mu).all()
    assert np.all(mu.std(axis=0) > 0)
    terms = sl.loss_terms(model, x, y)
    assert terms["kl"] > 1e-3
    trivial = np.mean((x - low_dataset.features()[low_dataset.split(0)[0]].mean(axis=0)) ** 2)
    assert terms["recon"] < trivial


def test_export_round_trip(low_model, low_dataset, tmp_path):
    model = low_model[0]
    enc = sl.export_encoder(model)
    blob = enc.to_dict()
    assert blob["sizes"] == [40, 24, 12, 4]
    assert "decoder" not in json.dumps(blob) and "predictor" not in blob
    back = nn.load_params(nn.save_params(enc, tmp_path / "enc.json"))
    x, _ = _test_split(low_dataset)
    assert np.array_equal(nn.predict(back, x), nn.predict(model.encoder, x))
    enc.weights[0][:] = 0.0
    assert model.encoder.weights[0].any()


def test_export_requires_training():
    with pytest.raises(ValueError):
        sl.export_encoder(sl.StarlightLowModel.init(0))


def test_checkpoint_round_trip(low_model, tmp_path):
    model = low_model[0]
    path = sl.save_low_model(model, tmp_path / "low.json", {"dataset": "abc"})
    back = sl.load_low_model(path)
    for a, b in zip(model.predictor.arrays, back.predictor.arrays):
        assert np.array_equal(a, b)
    meta = json.loads(path.with_suffix(".meta.json").read_text())
    assert meta["dataset"] == "abc"
    assert meta["loss_weights"] == {"pred": 1.0, "recon": 1.0, "kl": 0.01}
