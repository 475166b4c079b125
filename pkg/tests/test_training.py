import csv
import math

import numpy as np
import pytest
import torch

from _oracles import central_difference, cross_entropy_loop, relative_error
from ivdnet.data import make_subject, subject_slices
from ivdnet.model import ModelConfig, build_model
from ivdnet.training import (
    TrainConfig,
    compute_loss,
    load_checkpoint,
    lr_schedule,
    make_optimizer,
    save_checkpoint,
    train,
)

SMALL = dict(num_streams=4, input_size=32, growth=(4, 8), bridge_channels=8)


@pytest.fixture(scope="module")
def subject():
    return make_subject("sub-a", 5, num_discs=3, volume_shape=(6, 32, 32))


@pytest.fixture(scope="module")
def samples(subject):
    return subject_slices(subject)[1:5]


class TestSchedule:
    def test_default_schedule(self):
        cfg = TrainConfig()
        assert lr_schedule(0, cfg) == 1e-4
        assert lr_schedule(99, cfg) == 1e-4
        assert lr_schedule(100, cfg) == 5e-5
        assert lr_schedule(199, cfg) == 5e-5

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            lr_schedule(200, TrainConfig())
        with pytest.raises(ValueError):
            lr_schedule(-1, TrainConfig())

    @pytest.mark.parametrize("bad", [
        dict(initial_lr=0), dict(adam_beta1=1.0), dict(adam_beta2=0.0),
        dict(batch_size=0), dict(lr_halve_at_epoch=300), dict(loss="focal"), dict(epochs=0),
    ])
    def test_config_validation(self, bad):
        with pytest.raises(ValueError):
            TrainConfig(**bad)

    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.epochs, cfg.adam_beta1, cfg.adam_beta2, cfg.batch_size) == (200, 0.9, 0.99, 4)


class TestLoss:
    def test_one_hot_correct(self):
        labels = torch.randint(0, 2, (2, 5, 5))
        probs = torch.stack([1 - labels, labels], dim=1).double()
        assert compute_loss(probs, labels).item() == pytest.approx(0.0, abs=1e-12)
        assert compute_loss(probs, labels, "dice_loss").item() == pytest.approx(0.0, abs=1e-6)

    def test_uniform_is_ln2(self):
        probs = torch.full((1, 2, 4, 4), 0.5, dtype=torch.float64)
        labels = torch.randint(0, 2, (1, 4, 4))
        assert compute_loss(probs, labels).item() == pytest.approx(math.log(2), abs=1e-12)

    def test_matches_pixel_loop(self):
        gen = torch.Generator().manual_seed(0)
        probs = torch.softmax(torch.randn(3, 2, 6, 7, generator=gen, dtype=torch.float64), 1)
        labels = torch.randint(0, 2, (3, 6, 7), generator=gen)
        expected = cross_entropy_loop(probs.numpy(), labels.numpy())
        assert abs(compute_loss(probs, labels).item() - expected) < 1e-6

    def test_nonnegative(self):
        probs = torch.softmax(torch.randn(2, 2, 4, 4), 1)
        labels = torch.randint(0, 2, (2, 4, 4))
        for kind in ("cross_entropy", "dice_loss"):
            assert compute_loss(probs, labels, kind).item() >= 0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            compute_loss(torch.rand(1, 2, 4, 4), torch.zeros(1, 4, 5))
        with pytest.raises(ValueError):
            compute_loss(torch.rand(1, 2, 4, 4), torch.zeros(1, 4, 4), "hinge")

    @pytest.mark.parametrize("kind", ["cross_entropy", "dice_loss"])
    def test_gradient_wrt_logits(self, kind):
        gen = torch.Generator().manual_seed(1)
        logits = torch.randn(2, 2, 4, 4, generator=gen, dtype=torch.float64, requires_grad=True)
        labels = torch.randint(0, 2, (2, 4, 4), generator=gen)
        compute_loss(torch.softmax(logits, 1), labels, kind).backward()

        def f():
            return compute_loss(torch.softmax(logits.detach(), 1), labels, kind).item()

        for idx in np.ndindex(*logits.shape):
            fd = central_difference(f, logits.data, idx, 1e-6)
            assert relative_error(logits.grad[idx].item(), fd, 1e-6) < 1e-4


def test_zero_lr_step_keeps_weights(samples):
    model = build_model(ModelConfig(**SMALL))
    before = [p.detach().clone() for p in model.parameters()]
    opt = make_optimizer(model, TrainConfig(), lr=0.0)
    x = torch.from_numpy(np.concatenate([s.inputs for s in samples]))
    y = torch.from_numpy(np.concatenate([s.labels for s in samples]))
    compute_loss(model(x), y).backward()
    opt.step()
    for a, b in zip(before, model.parameters()):
        assert torch.equal(a, b)


def test_checkpoint_round_trip(tmp_path):
    model = build_model(ModelConfig(**SMALL, seed=4))
    # move BN statistics off their defaults
    model.train()
    with torch.no_grad():
        model(torch.rand(4, 4, 32, 32))
    model.eval()
    path = save_checkpoint(tmp_path / "m.pt", model)
    loaded, payload = load_checkpoint(path)
    x = torch.rand(3, 4, 32, 32)
    with torch.no_grad():
        assert torch.equal(model(x), loaded(x))
    assert loaded.config.to_dict() == model.config.to_dict() == payload["model_config"]


def test_checkpoint_errors(tmp_path):
    model = build_model(ModelConfig(**SMALL))
    path = save_checkpoint(tmp_path / "m.pt", model)
    with pytest.raises(ValueError):
        load_checkpoint(path, expected_config=ModelConfig(**dict(SMALL, bridge_channels=16)))
    with pytest.raises(FileNotFoundError, match="missing.pt"):
        load_checkpoint(tmp_path / "missing.pt")
    bad = tmp_path / "bad.pt"
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(OSError, match="bad.pt"):
        load_checkpoint(bad)


def test_empty_dataset():
    with pytest.raises(ValueError):
        train(build_model(ModelConfig(**SMALL)), [], TrainConfig(epochs=1, lr_halve_at_epoch=1))


def test_non_finite_loss_aborts(samples):
    bad = [type(s)(s.inputs * np.nan, s.labels, s.subject_ids, s.slice_indices) for s in samples]
    with pytest.raises(FloatingPointError, match="epoch 0"):
        train(build_model(ModelConfig(**SMALL)), bad, TrainConfig(epochs=1, lr_halve_at_epoch=1))


@pytest.fixture(scope="module")
def long_run(samples):
    torch.manual_seed(0)
    model = build_model(ModelConfig(**SMALL))
    cfg = TrainConfig(epochs=200, initial_lr=1e-3, lr_halve_at_epoch=100, batch_size=4)
    return train(model, samples, cfg)


def test_loss_decreases_early(long_run):
    losses = [r["train_loss"] for r in long_run.history[:10]]
    assert np.mean(losses[5:]) < np.mean(losses[:5])
    assert long_run.history[-1]["train_loss"] < losses[0]


def test_history_shows_lr_halving(long_run):
    lrs = [r["lr"] for r in long_run.history]
    assert len(lrs) == 200
    assert lrs[99] == 1e-3 and lrs[100] == 5e-4


def test_resume_matches_uninterrupted(tmp_path, samples, subject):
    cfg = ModelConfig(**SMALL)
    full = build_model(cfg)
    tc = dict(initial_lr=1e-3, lr_halve_at_epoch=2, seed=3)
    res_full = train(full, samples, TrainConfig(epochs=4, checkpoint_dir=str(tmp_path / "a"), **tc),
                     [subject])

    part = build_model(cfg)
    train(part, samples, TrainConfig(epochs=2, checkpoint_dir=str(tmp_path / "b"), **tc), [subject])
    resumed = build_model(cfg)
    res = train(resumed, samples, TrainConfig(epochs=4, checkpoint_dir=str(tmp_path / "b"), **tc),
                [subject], resume_from=tmp_path / "b" / "final.pt")
    assert [r["epoch"] for r in res.history] == [0, 1, 2, 3]
    for a, b in zip(full.state_dict().values(), resumed.state_dict().values()):
        assert torch.equal(a, b)
    assert [r["train_loss"] for r in res.history] == [r["train_loss"] for r in res_full.history]


def test_best_checkpoint_and_history_file(tmp_path, samples, subject):
    model = build_model(ModelConfig(**SMALL))
    res = train(model, samples, TrainConfig(epochs=5, initial_lr=1e-2, lr_halve_at_epoch=3,
                                            checkpoint_dir=str(tmp_path)), [subject])
    best_epoch = int(np.argmax([r["val_dsc"] for r in res.history]))
    _, payload = load_checkpoint(res.best_path)
    assert payload["epoch"] == best_epoch
    assert res.best_val_dsc == max(r["val_dsc"] for r in res.history)
    _, final = load_checkpoint(res.final_path)
    assert final["epoch"] == 4
    with open(tmp_path / "history.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["epoch", "lr", "train_loss", "val_dsc"]
    assert len(rows) == 5


def test_training_is_deterministic(samples):
    cfg = TrainConfig(epochs=3, initial_lr=1e-3, lr_halve_at_epoch=2, seed=9)
    a = train(build_model(ModelConfig(**SMALL)), samples, cfg)
    b = train(build_model(ModelConfig(**SMALL)), samples, cfg)
    assert a.history == b.history
