"""Optimizer single-step oracle, checkpoint format round trips and error
classes, stage prerequisites and the freeze contract on a short run."""

import numpy as np
import pytest

from cassr import tensor as T
from cassr.config import RunConfig
from cassr.data import generate_corpus
from cassr.degrade import DegradationConfig
from cassr.rng import Rng
from cassr.tensor import Tensor
from cassr.train import (AdamState, CheckpointError, ConfigStageError,
                         adam_step, check_prereqs, hash_params,
                         load_checkpoint, save_checkpoint, train_stage)

TINY_TREE = {
    "corpus": {"n": 8, "size": 32, "master_seed": 1,
               "classes": ["gradients", "blobs"]},
    "codec": {"widths": [8, 16]},
    "model": {"widths": [8, 16, 32], "sin_dim": 8, "t_dim": 16},
    "schedule": {"t_max": 40},
    "train": {"steps": {"codec": 4, "base": 3, "activation": 3, "cassr": 3},
              "log_every": 2, "ckpt_every": 1000},
}


def _tiny_corpus():
    return generate_corpus(8, ["gradients", "blobs"], 1, size=32,
                           deg_cfg=DegradationConfig())


# -- Adam ---------------------------------------------------------------------

def test_adam_zero_grad_is_fixed_point():
    p = Tensor(np.ones((3,), dtype=np.float32), requires_grad=True)
    p.grad = np.zeros((3,), dtype=np.float32)
    adam_step([("p", p)], AdamState(), lr=0.1)
    np.testing.assert_array_equal(p.data, np.ones(3))


def test_adam_single_step_oracle():
    # Hand-rolled bias-corrected first step:
    #   m1 = (1-b1) g, v1 = (1-b2) g^2
    #   update = -lr * (m1/(1-b1)) / (sqrt(v1/(1-b2)) + eps)
    #          = -lr * g / (|g| + eps)
    g = np.array([0.3, -2.0, 1e-12])
    p0 = np.array([1.0, 2.0, 3.0])
    p = Tensor(p0.copy(), requires_grad=True)
    p.grad = g.copy()
    adam_step([("p", p)], AdamState(), lr=0.05)
    expect = p0 - 0.05 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(p.data, expect, atol=1e-10)


def test_adam_identical_grads_identical_updates():
    a = Tensor(np.full(4, 1.5), requires_grad=True)
    b = Tensor(np.full(4, 1.5), requires_grad=True)
    g = Rng(3).normal((4,))
    a.grad, b.grad = g.copy(), g.copy()
    adam_step([("a", a), ("b", b)], AdamState(), lr=0.01)
    np.testing.assert_array_equal(a.data, b.data)


def test_adam_skips_none_grad_and_checks_shape():
    p = Tensor(np.ones(3), requires_grad=True)
    adam_step([("p", p)], AdamState(), lr=0.1)  # grad None: untouched
    np.testing.assert_array_equal(p.data, np.ones(3))
    p.grad = np.zeros((2,))
    with pytest.raises(Exception, match="shape"):
        adam_step([("p", p)], AdamState(), lr=0.1)


# -- checkpoint format ------------------------------------------------------------

def test_checkpoint_save_load_save_byte_identical(tmp_path):
    arrays = {"a.w": Rng(4).normal((3, 4)).astype(np.float32),
              "b": Rng(5).normal((7,)).astype(np.float32)}
    p1, p2 = tmp_path / "one.ckpt", tmp_path / "two.ckpt"
    save_checkpoint(p1, arrays)
    save_checkpoint(p2, load_checkpoint(p1))
    assert p1.read_bytes() == p2.read_bytes()
    back = load_checkpoint(p2)
    for k in arrays:
        np.testing.assert_array_equal(back[k], arrays[k])


def test_checkpoint_bad_magic(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"NOPE" + b"\0" * 32)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(p)


def test_checkpoint_corrupt_crc(tmp_path):
    p = tmp_path / "c.ckpt"
    save_checkpoint(p, {"x": np.ones(4, dtype=np.float32)})
    raw = bytearray(p.read_bytes())
    raw[20] ^= 0xFF
    p.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(p)


def test_hash_params_sensitivity():
    from cassr.layers import Linear, ParamStore

    s = ParamStore()
    Linear(s, "l", 2, 2, Rng(6))
    h1 = hash_params(s)
    assert h1 == hash_params(s)
    s["l.w"].data = s["l.w"].data + 1
    assert hash_params(s) != h1


# -- stage orchestration ---------------------------------------------------------

def test_unknown_stage_and_missing_prereqs(tmp_path):
    cfg = RunConfig(TINY_TREE)
    corpus = _tiny_corpus()
    with pytest.raises(ConfigStageError, match="unknown stage"):
        train_stage("warmup", corpus, cfg, tmp_path)
    with pytest.raises(ConfigStageError, match="codec"):
        train_stage("base", corpus, cfg, tmp_path)
    assert check_prereqs("cassr", tmp_path) == ["codec", "base", "activation"]


def test_full_stage_chain_freeze_contract(tmp_path):
    # Short end-to-end chain; the cassr stage must leave every frozen
    # (base + codec) tensor bit-identical, while training moves at least
    # one trainable tensor.
    cfg = RunConfig(TINY_TREE)
    corpus = _tiny_corpus()
    for stage in ("codec", "base", "activation"):
        train_stage(stage, corpus, cfg, tmp_path)
    base_before = load_checkpoint(tmp_path / "base.ckpt")
    train_stage("cassr", corpus, cfg, tmp_path)
    after = load_checkpoint(tmp_path / "cassr.ckpt")
    for name, arr in base_before.items():
        if name.startswith("base."):
            np.testing.assert_array_equal(
                after[name], arr, err_msg=f"frozen {name} changed")
    moved = [n for n, a in after.items()
             if not n.startswith("base.") and n in base_before
             and not np.array_equal(a, base_before[n])]
    assert moved, "no trainable parameter moved during the cassr stage"
    T.set_dtype("f32")


def test_training_deterministic(tmp_path):
    cfg = RunConfig(TINY_TREE)
    corpus = _tiny_corpus()
    d1, d2 = tmp_path / "r1", tmp_path / "r2"
    for d in (d1, d2):
        train_stage("codec", corpus, cfg, d)
    assert (d1 / "codec.ckpt").read_bytes() == (d2 / "codec.ckpt").read_bytes()
    T.set_dtype("f32")
