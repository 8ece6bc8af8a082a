import numpy as np
import pytest

from fgnn.autodiff import Tensor
from fgnn.data import augment, synth_generate
from fgnn.exceptions import ContractError, IntegrityError, UsageError
from fgnn.model import make_batch, score_batch
from fgnn.train import (
    AdamState,
    TrainingConfig,
    adam_step,
    checkpoint_load,
    checkpoint_save,
    init_model,
    iterate_batches,
    lr_schedule,
    train,
)

TINY = dict(dim=6, layers=1, heads=2, steps=2, batch_size=16)


def corpus(n_sessions=40, n_items=12, seed=0):
    exs = [ex for s in synth_generate(n_items, n_sessions, (2, 6), 0.2, seed) for ex in augment(s)]
    return [ex.prefix for ex in exs], [ex.label for ex in exs]


@pytest.mark.parametrize("epoch,lr", [(0, 1e-3), (2, 1e-3), (3, 1e-4), (5, 1e-4), (7, 1e-5)])
def test_step_schedule(epoch, lr):
    assert lr_schedule(epoch, TrainingConfig()) == pytest.approx(lr, rel=1e-12)


def test_linear_schedule_hits_step_anchors():
    cfg = TrainingConfig(schedule="linear")
    assert lr_schedule(0, cfg) == pytest.approx(1e-3)
    assert lr_schedule(3, cfg) == pytest.approx(1e-4)
    assert lr_schedule(1, cfg) == pytest.approx(1e-3 - 0.3e-3)


def test_adam_zero_gradient_is_noop():
    p = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    p.grad = np.zeros((2, 3))
    before = p.data.copy()
    adam_step({"p": p}, AdamState(), lr=1e-3, l2=0.0)
    assert np.array_equal(p.data, before)


def test_adam_first_step_moves_by_lr():
    p = Tensor([1.0, -2.0, 0.5], requires_grad=True)
    p.grad = np.array([0.3, -5.0, 2e-2])
    adam_step({"p": p}, AdamState(), lr=1e-3)
    np.testing.assert_allclose(p.data - np.array([1.0, -2.0, 0.5]), -1e-3 * np.sign(p.grad), rtol=1e-5)


def test_adam_matches_reference_loop():
    rng = np.random.default_rng(0)
    p = Tensor(rng.normal(size=4), requires_grad=True)
    ref = p.data.copy()
    m = v = np.zeros(4)
    state = AdamState()
    for t in range(1, 6):
        g = rng.normal(size=4)
        p.grad = g.copy()
        adam_step({"p": p}, state, lr=0.01, l2=0.1)
        gg = g + 0.1 * ref
        m = 0.9 * m + 0.1 * gg
        v = 0.999 * v + 0.001 * gg * gg
        ref = ref - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p.data, ref, atol=1e-14)


def test_l2_shrinks_toward_zero():
    p = Tensor([2.0, -3.0], requires_grad=True)
    p.grad = np.zeros(2)
    adam_step({"p": p}, AdamState(), lr=1e-2, l2=1e-3)
    assert (np.abs(p.data) < [2.0, 3.0]).all()


def test_adam_missing_gradient():
    with pytest.raises(ContractError):
        adam_step({"p": Tensor([1.0], requires_grad=True)}, AdamState(), lr=1e-3)


@pytest.mark.parametrize("n,steps", [(1, 1), (250, 3), (200, 2)])
def test_steps_per_epoch(n, steps):
    assert len(list(iterate_batches(n, 100, np.random.default_rng(0)))) == steps


def test_single_example_single_step():
    cfg = TrainingConfig(epochs=1, **TINY)
    _, history, state = train(cfg, [(0, 1)], [2], 4)
    assert state.step == 1 and history[0]["steps"] == 1


def test_empty_training_set():
    with pytest.raises(UsageError):
        train(TrainingConfig(**TINY), [], [], 4)


def test_config_validation():
    with pytest.raises(UsageError, match="lr"):
        TrainingConfig(lr=0)
    with pytest.raises(UsageError, match="schedule"):
        TrainingConfig(schedule="cosine")
    with pytest.raises(UsageError, match="bogus"):
        TrainingConfig.from_dict({"bogus": "1"})
    cfg = TrainingConfig.from_dict({"lr": "0.01", "selfloop_clamp": "true", "epochs": "2"})
    assert cfg.lr == 0.01 and cfg.selfloop_clamp is True and cfg.epochs == 2


def test_init_is_seeded():
    a = init_model(TrainingConfig(seed=3, **TINY), 9)
    b = init_model(TrainingConfig(seed=3, **TINY), 9)
    for (name, x), y in zip(a.named_tensors().items(), b.named_tensors().values()):
        assert np.array_equal(x.data, y.data), name


def test_training_is_deterministic():
    X, y = corpus()
    cfg = TrainingConfig(epochs=5, seed=11, **TINY)
    a, hist_a, _ = train(cfg, X, y, 12)
    b, hist_b, _ = train(cfg, X, y, 12)
    assert [h["train_loss"] for h in hist_a] == [h["train_loss"] for h in hist_b]
    for x, z in zip(a.parameters(), b.parameters()):
        assert np.array_equal(x.data, z.data)


def test_loss_decreases():
    X, y = corpus(80)
    cfg = TrainingConfig(epochs=5, lr=1e-2, decay_every=100, **TINY)
    _, history, _ = train(cfg, X, y, 12)
    losses = [h["train_loss"] for h in history]
    assert losses[-1] < losses[0]
    assert all(b <= a + 1e-9 for a, b in zip(losses, losses[1:]))


def test_eval_fn_is_logged():
    X, y = corpus(10)
    _, history, _ = train(TrainingConfig(epochs=2, **TINY), X, y, 12, eval_fn=lambda p: {"probe": 1.0})
    assert [h["probe"] for h in history] == [1.0, 1.0]


@pytest.fixture
def trained():
    X, y = corpus(20)
    return train(TrainingConfig(epochs=2, readout="set2set", **TINY), X, y, 12)


def test_checkpoint_round_trip(tmp_path, trained):
    params, _, state = trained
    path = tmp_path / "m.ckpt"
    checkpoint_save(params, path, state, config={"epochs": 2})
    back, back_state, manifest = checkpoint_load(path)
    assert list(back.named_tensors()) == list(params.named_tensors())
    for name, t in params.named_tensors().items():
        assert np.array_equal(back.named_tensors()[name].data, t.data), name
        assert np.array_equal(back_state.first[name], state.first[name])
    assert back_state.step == state.step
    assert manifest["dtype"] == "<f8" and manifest["gate_order"] == ["reset", "update", "candidate"]
    batch = make_batch(params, [[0, 1, 2], [3, 3]])
    assert np.array_equal(score_batch(params, batch).data, score_batch(back, batch).data)


@pytest.mark.parametrize("readout", ["mean", "last_attention"])
def test_checkpoint_other_readouts(tmp_path, readout):
    params = init_model(TrainingConfig(readout=readout, **TINY), 5)
    checkpoint_save(params, tmp_path / "m.ckpt")
    back, state, _ = checkpoint_load(tmp_path / "m.ckpt")
    assert state is None
    for name, t in params.named_tensors().items():
        assert np.array_equal(back.named_tensors()[name].data, t.data)


def test_checkpoint_truncated(tmp_path, trained):
    path = tmp_path / "m.ckpt"
    checkpoint_save(trained[0], path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-10])
    with pytest.raises(IntegrityError, match="w_out"):
        checkpoint_load(path)
    path.write_bytes(raw[:12])
    with pytest.raises(IntegrityError, match="header"):
        checkpoint_load(path)


def test_checkpoint_corrupt_sections(tmp_path, trained):
    path = tmp_path / "m.ckpt"
    checkpoint_save(trained[0], path)
    raw = bytearray(path.read_bytes())
    flipped = raw.copy()
    flipped[-3] ^= 0xFF
    path.write_bytes(bytes(flipped))
    with pytest.raises(IntegrityError, match="checksum"):
        checkpoint_load(path)
    path.write_bytes(b"NOTACKPT" + bytes(raw[8:]))
    with pytest.raises(IntegrityError, match="magic"):
        checkpoint_load(path)
    with pytest.raises(IntegrityError, match="does not exist"):
        checkpoint_load(tmp_path / "missing.ckpt")
