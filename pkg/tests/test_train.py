"""Loss, optimizer, schedule, and training-loop contracts."""

import numpy as np
import pytest

from gmlnbts import checkpoint as ckpt
from gmlnbts.errors import DataError, SpecError
from gmlnbts.model import GmlnModel, tiny_config
from gmlnbts.phantom import PhantomConfig, generate_dataset
from gmlnbts.tensor import Tensor
from gmlnbts.train import (AdamW, LossConfig, LrSchedule, TrainConfig,
                           dice_ce_loss, lr_at, train)

TINY_PHANTOMS = generate_dataset(PhantomConfig(size=(16, 16, 16), seed=77), 4)


def test_perfect_prediction_loss_near_zero():
    labels = np.random.default_rng(0).integers(0, 4, size=(1, 4, 4, 4))
    logits = np.full((1, 4, 4, 4, 4), -50.0, dtype=np.float64)
    np.put_along_axis(logits, labels[:, None], 50.0, axis=1)
    loss, parts = dice_ce_loss(Tensor(logits), labels)
    assert float(loss.data) < 1e-6
    assert parts["dice"] < 1e-6 and parts["ce"] < 1e-6


def test_uniform_logits_ce_is_log4():
    labels = np.zeros((1, 2, 2, 2), dtype=np.int64)
    loss, parts = dice_ce_loss(Tensor(np.zeros((1, 4, 2, 2, 2))), labels,
                               LossConfig(dice_weight=0.0, ce_weight=1.0))
    assert parts["ce"] == pytest.approx(np.log(4.0), abs=1e-9)


def test_single_voxel_hand_computed():
    # one voxel, two effective classes: logits (a, b, -inf-ish, -inf-ish)
    a, b = 1.0, -1.0
    logits = np.array([a, b, -100.0, -100.0]).reshape(1, 4, 1, 1, 1)
    labels = np.zeros((1, 1, 1, 1), dtype=np.int64)
    loss, parts = dice_ce_loss(Tensor(logits), labels, LossConfig(dice_smooth=0.0))
    pa = np.exp(a) / (np.exp(a) + np.exp(b))
    # soft dice per class: class0 = 2 pa/(pa+1); others 0/positive-sum
    dice0 = 2 * pa / (pa + 1)
    expected_dice = 1 - (dice0 + 0.0 + 0.0 + 0.0) / 4
    assert parts["ce"] == pytest.approx(-np.log(pa), abs=1e-9)
    assert parts["dice"] == pytest.approx(expected_dice, abs=1e-9)


def test_loss_rejects_bad_labels():
    with pytest.raises(DataError, match="voxel"):
        dice_ce_loss(Tensor(np.zeros((1, 4, 2, 2, 2))),
                     np.full((1, 2, 2, 2), 7, dtype=np.int64))


def test_loss_batch_order_invariant():
    rng = np.random.default_rng(1)
    logits = rng.standard_normal((2, 4, 4, 4, 4))
    labels = rng.integers(0, 4, size=(2, 4, 4, 4))
    a, _ = dice_ce_loss(Tensor(logits), labels)
    b, _ = dice_ce_loss(Tensor(logits[::-1].copy()), labels[::-1].copy())
    assert float(a.data) == pytest.approx(float(b.data), rel=1e-12)


def test_loss_config_validation():
    with pytest.raises(SpecError):
        LossConfig(dice_weight=0.0, ce_weight=0.0)
    with pytest.raises(SpecError):
        LossConfig(dice_weight=-1.0)


def test_dice_ce_gradcheck():
    from gmlnbts.check import grad_check
    rng = np.random.default_rng(2)
    labels = rng.integers(0, 4, size=(1, 2, 2, 2))
    logits = Tensor(rng.standard_normal((1, 4, 2, 2, 2)) * 2, requires_grad=True)
    err = grad_check(lambda t: dice_ce_loss(t, labels)[0], [logits], 1e-5)
    assert err < 1e-4


# -- AdamW -------------------------------------------------------------------

class _OneParam:
    def __init__(self, value):
        self.p = Tensor(np.array([value]), requires_grad=True)

    def named_parameters(self):
        return [("p", self.p)]


def test_adamw_zero_grad_no_decay_is_identity():
    m = _OneParam(1.5)
    opt = AdamW(m, weight_decay=0.0)
    m.p.grad = np.zeros(1)
    assert opt.step(0.1)
    assert m.p.data[0] == pytest.approx(1.5)


def test_adamw_first_step_magnitude():
    m = _OneParam(0.0)
    opt = AdamW(m, weight_decay=0.0)
    m.p.grad = np.ones(1)
    opt.step(0.1)
    assert m.p.data[0] == pytest.approx(-0.1, rel=1e-6)


def test_adamw_pure_decay_shrinks():
    m = _OneParam(2.0)
    opt = AdamW(m, weight_decay=0.5)
    m.p.grad = np.zeros(1)
    opt.step(0.1)
    assert m.p.data[0] == pytest.approx(2.0 * (1 - 0.1 * 0.5))


def test_adamw_aborts_on_nonfinite():
    m = _OneParam(1.0)
    opt = AdamW(m)
    m.p.grad = np.array([np.nan])
    assert not opt.step(0.1)
    assert m.p.data[0] == 1.0 and opt.step_count == 0


def test_adamw_state_roundtrip():
    m = _OneParam(1.0)
    opt = AdamW(m)
    m.p.grad = np.ones(1)
    opt.step(0.01)
    state = opt.state_arrays()
    m2 = _OneParam(1.0)
    opt2 = AdamW(m2)
    opt2.load_state_arrays(state)
    assert opt2.step_count == 1
    assert np.array_equal(opt2.m["p"], opt.m["p"])


# -- schedule ------------------------------------------------------------------

def test_lr_schedule_endpoints_and_continuity():
    s = LrSchedule(warmup_steps=20, total_steps=200)
    assert lr_at(0, s) == pytest.approx(4e-6)
    assert lr_at(20, s) == pytest.approx(4e-4)
    assert lr_at(19, s) == pytest.approx(4e-6 + (4e-4 - 4e-6) * 19 / 20)
    assert lr_at(200, s) == 0.0
    assert lr_at(500, s) == 0.0  # clamps past the end
    # continuity at the junction
    assert abs(lr_at(20, s) - lr_at(21, s)) < 4e-4 * 0.02


def test_lr_schedule_validation():
    with pytest.raises(SpecError):
        LrSchedule(warmup_start=1e-3, warmup_end=1e-4)
    with pytest.raises(SpecError):
        LrSchedule(warmup_steps=300, total_steps=200)


# -- loop ----------------------------------------------------------------------

def test_one_step_reduces_loss_on_fixed_batch():
    model = GmlnModel(tiny_config(), seed=5)
    cfg = TrainConfig(steps=2, batch_size=2, seed=3, checkpoint_every=100,
                      constant_lr=1e-4)
    res = train(model, TINY_PHANTOMS, cfg)
    assert len(res.history) == 2 and not res.aborted


def test_train_rejects_empty_or_unlabeled():
    model = GmlnModel(tiny_config(), seed=0)
    with pytest.raises(DataError):
        train(model, [], TrainConfig(steps=1))
    s = TINY_PHANTOMS[0]
    from gmlnbts.volume_io import Study
    unlabeled = Study(id="x", modalities=dict(s.modalities), gt_labels=None)
    with pytest.raises(DataError):
        train(model, [unlabeled], TrainConfig(steps=1))


def test_training_deterministic_and_resumable(tmp_path):
    def fresh():
        return GmlnModel(tiny_config(), seed=9)

    cfg = TrainConfig(steps=6, batch_size=2, seed=11, checkpoint_every=3)
    m1 = fresh()
    train(m1, TINY_PHANTOMS, cfg, out_dir=tmp_path / "a")
    bytes_a = (tmp_path / "a" / "checkpoint-000006.vckp").read_bytes()

    # same seed from scratch: bitwise identical checkpoint
    m2 = fresh()
    train(m2, TINY_PHANTOMS, cfg, out_dir=tmp_path / "b")
    assert (tmp_path / "b" / "checkpoint-000006.vckp").read_bytes() == bytes_a

    # stop at 3 (same schedule horizon), resume to 6: identical continuation
    m3 = fresh()
    train(m3, TINY_PHANTOMS, cfg, out_dir=tmp_path / "c", stop_step=3)
    m4 = fresh()
    ckpt.load_model(tmp_path / "c" / "checkpoint-000003.vckp", m4)
    opt = AdamW(m4)
    _, arrays = ckpt.load_arrays(str(tmp_path / "c" / "checkpoint-000003.vckp") + ".opt")
    opt.load_state_arrays(arrays)
    train(m4, TINY_PHANTOMS, cfg, out_dir=tmp_path / "c", optimizer=opt, start_step=3)
    assert (tmp_path / "c" / "checkpoint-000006.vckp").read_bytes() == bytes_a


def test_metrics_log_format(tmp_path):
    model = GmlnModel(tiny_config(), seed=1)
    cfg = TrainConfig(steps=2, batch_size=1, seed=0, checkpoint_every=10)
    train(model, TINY_PHANTOMS, cfg, out_dir=tmp_path)
    lines = (tmp_path / "metrics.csv").read_text().strip().splitlines()
    assert len(lines) == 2
    fields = lines[0].split(",")
    assert len(fields) == 5
    assert int(fields[0]) == 0
    for v in fields[1:]:
        float(v)


def test_overfit_single_batch_halves_loss():
    # repeated-batch sanity: with one study every batch is identical, and
    # 50 steps at a flat lr must cut total loss by at least half
    bank = TINY_PHANTOMS[:1]
    for seed in (0, 1, 2):
        model = GmlnModel(tiny_config(), seed=seed)
        cfg = TrainConfig(steps=50, batch_size=2, seed=seed, checkpoint_every=100,
                          constant_lr=1e-3)
        res = train(model, bank, cfg)
        first, last = res.history[0]["loss_total"], res.history[-1]["loss_total"]
        assert last <= 0.5 * first, f"seed {seed}: {first} -> {last}"


def test_default_batch_size_is_two():
    assert TrainConfig().batch_size == 2
    assert TrainConfig().steps == 200
