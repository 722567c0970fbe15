"""Adam optimizer, binary checkpoints and the staged training loop
(codec -> base diffusion -> activation restorer -> CasSR control branch)."""

from __future__ import annotations

import hashlib
import os
import struct
import time
import zlib

import numpy as np

from . import schedule as S
from . import tensor as T
from .activation import RefGenerator, activate, bicubic_upsample
from .codec import CodecModel
from .config import RunConfig
from .imageops import to_model
from .layers import ParamStore
from .rng import Rng, derive_seed
from .tensor import ContractError, Tensor
from .unet import CasSRModel, ConditionBundle

MAGIC = b"CASR"
VERSION = 1
STAGES = ("codec", "base", "activation", "cassr")
_PREREQS = {"codec": (), "base": ("codec",), "activation": (),
            "cassr": ("codec", "base", "activation")}


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


class ConfigStageError(ValueError):
    """Stage orchestration misconfiguration (missing prerequisites etc.)."""


# -- checkpoint format ------------------------------------------------------------
# magic "CASR" | version u32 | count u32 | entries | crc32 u32 (all LE).
# entry: name_len u32, name utf-8, rank u32, extents u32 each, f32 payload.

def save_checkpoint(path, arrays: dict):
    body = bytearray()
    body += MAGIC
    body += struct.pack("<II", VERSION, len(arrays))
    for name, arr in arrays.items():
        nb = name.encode()
        body += struct.pack("<I", len(nb)) + nb
        body += struct.pack("<I", arr.ndim)
        body += struct.pack(f"<{arr.ndim}I", *arr.shape)
        body += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    body += struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(bytes(body))
    os.replace(tmp, path)


def load_checkpoint(path) -> dict:
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < 16 or buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: missing CASR magic")
    (crc,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(buf[:-4]) & 0xFFFFFFFF != crc:
        raise CheckpointError(f"{path}: checksum mismatch")
    version, count = struct.unpack("<II", buf[4:12])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    pos = 12
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", buf[pos : pos + 4])
        pos += 4
        name = buf[pos : pos + nlen].decode()
        pos += nlen
        (rank,) = struct.unpack("<I", buf[pos : pos + 4])
        pos += 4
        shape = struct.unpack(f"<{rank}I", buf[pos : pos + 4 * rank])
        pos += 4 * rank
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(buf[pos : pos + 4 * n], dtype="<f4").reshape(shape)
        pos += 4 * n
        out[name] = arr.copy()
    return out


def hash_params(store: ParamStore, names=None) -> str:
    h = hashlib.sha256()
    for n in sorted(names if names is not None else store.names()):
        h.update(n.encode())
        h.update(np.ascontiguousarray(store[n].data, dtype="<f4").tobytes())
    return h.hexdigest()


# -- Adam ---------------------------------------------------------------------------

class AdamState:
    """Per-parameter first/second moments; beta1=0.9, beta2=0.999, eps=1e-8."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {}
        self.v = {}
        self.step = 0


def adam_step(params, state: AdamState, lr: float):
    """Bias-corrected Adam update in place; ``params`` is (name, Tensor) pairs."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params:
        g = p.grad
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ContractError(f"grad/param shape mismatch for {name}")
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m += (1.0 - b1) * (g - m)
        v += (1.0 - b2) * (g * g - v)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# -- staged training -----------------------------------------------------------------

def _batch_indices(pool, rng: Rng, batch):
    return [pool[rng.randint(0, len(pool))] for _ in range(batch)]


def _stack_hr(corpus, idxs):
    return np.concatenate([to_model(corpus.pairs[i].hr) for i in idxs])


def _stack_lr(corpus, idxs):
    return np.concatenate([to_model(corpus.pairs[i].lr) for i in idxs])


class TrainLogger:
    def __init__(self, path):
        self.path = path
        if path and not os.path.exists(path):
            with open(path, "w") as f:
                f.write("step,stage,loss,wall_ms\n")

    def log(self, step, stage, loss, wall_ms):
        if self.path:
            with open(self.path, "a") as f:
                f.write(f"{step},{stage},{loss:.6f},{wall_ms:.1f}\n")


def check_prereqs(stage: str, ckpt_dir) -> list:
    """Missing prerequisite stages for ``stage`` given a checkpoint directory."""
    return [p for p in _PREREQS[stage]
            if not os.path.exists(os.path.join(ckpt_dir, f"{p}.ckpt"))]


def load_codec(cfg: RunConfig, ckpt_dir) -> CodecModel:
    codec = CodecModel(cfg.codec_config(), seed=cfg["train"]["seed"])
    codec.store.load_state(load_checkpoint(os.path.join(ckpt_dir, "codec.ckpt")))
    codec.freeze()
    return codec


def load_activation(cfg: RunConfig, ckpt_dir, kind=None, base_model=None,
                    codec=None, sched=None) -> RefGenerator:
    acfg = cfg["activation"]
    kind = kind or acfg["kind"]
    gen = RefGenerator(kind, scale=cfg["degradation"]["scale_factor"],
                       seed=cfg["train"]["seed"], base_model=base_model,
                       codec=codec, sched=sched,
                       diffusion_steps=acfg["diffusion_steps"],
                       diffusion_t_start=acfg["diffusion_t_start"])
    if kind == "cnn_restorer":
        gen.store.load_state(
            load_checkpoint(os.path.join(ckpt_dir, "activation.ckpt")))
        gen.trained = True
    return gen


def load_cassr(cfg: RunConfig, ckpt_dir, variant="full") -> CasSRModel:
    model = CasSRModel(cfg.model_config(), seed=cfg["train"]["seed"],
                       variant=variant)
    arrays = load_checkpoint(os.path.join(ckpt_dir, "cassr.ckpt"))
    model.store.load_state(
        {k: v for k, v in arrays.items() if k in model.store}, strict=False)
    model.freeze_base()
    return model


def train_stage(stage: str, corpus, cfg: RunConfig, ckpt_dir,
                progress=None) -> str:
    """Run one training stage and write ``<ckpt_dir>/<stage>.ckpt``.

    Per step: sample a batch, assemble the stage loss, backprop, Adam on
    the trainable set only.  Frozen parameter sets are hash-asserted
    untouched.  Returns the checkpoint path.
    """
    if stage not in STAGES:
        raise ConfigStageError(f"unknown stage {stage!r}, expected {STAGES}")
    missing = check_prereqs(stage, ckpt_dir)
    if missing:
        raise ConfigStageError(
            f"stage {stage!r} requires trained stages {missing}; train them first")
    if not corpus.pairs:
        raise ConfigStageError("empty dataset")

    os.makedirs(ckpt_dir, exist_ok=True)
    tcfg = cfg["train"]
    T.set_dtype(tcfg["precision"])
    steps = tcfg["steps"][stage]
    rng = Rng(derive_seed(tcfg["seed"], STAGES.index(stage)), stream=0x7A)
    logger = TrainLogger(os.path.join(ckpt_dir, "train_log.csv"))
    sched = S.linear_schedule(cfg["schedule"]["t_max"],
                              cfg["schedule"]["beta_start"],
                              cfg["schedule"]["beta_end"])
    pool = corpus.split["train"] or list(range(len(corpus.pairs)))
    batch = tcfg["batch"]
    state = AdamState()
    out_path = os.path.join(ckpt_dir, f"{stage}.ckpt")

    if stage == "codec":
        codec = CodecModel(cfg.codec_config(), seed=tcfg["seed"])
        trainables = codec.store.trainable_items()
        store = codec.store

        def step_fn():
            x = Tensor(_stack_hr(corpus, _batch_indices(pool, rng, batch))
                       .astype(T.get_dtype()))
            return codec.loss(x)

        frozen_names = []
    elif stage == "base":
        codec = load_codec(cfg, ckpt_dir)
        model = CasSRModel(cfg.model_config(), seed=tcfg["seed"])
        store = model.store
        trainables = [(n, p) for n, p in store.items() if n.startswith("base.")]
        frozen_names = []

        def step_fn():
            idxs = _batch_indices(pool, rng, batch)
            z0 = codec.encode(_stack_hr(corpus, idxs)).astype(np.float64)
            t = rng.randint(1, sched.t_max + 1, (batch,))
            eps = rng.normal(z0.shape)
            z_t = S.q_sample(z0, t, eps, sched)
            pred = model.predict_base(Tensor(z_t.astype(T.get_dtype())), t)
            return T.mse(pred, Tensor(eps.astype(T.get_dtype())))

    elif stage == "activation":
        gen = RefGenerator("cnn_restorer",
                           scale=cfg["degradation"]["scale_factor"],
                           seed=tcfg["seed"])
        store = gen.store
        trainables = store.trainable_items()
        frozen_names = []

        def step_fn():
            idxs = _batch_indices(pool, rng, batch)
            up = bicubic_upsample(_stack_lr(corpus, idxs),
                                  cfg["degradation"]["scale_factor"])
            hr = _stack_hr(corpus, idxs)
            pred = gen.residual_t(Tensor(up.astype(T.get_dtype())))
            return T.mse(pred, Tensor(hr.astype(T.get_dtype())))

    else:  # cassr
        codec = load_codec(cfg, ckpt_dir)
        model = CasSRModel(cfg.model_config(), seed=tcfg["seed"])
        model.store.load_state(
            load_checkpoint(os.path.join(ckpt_dir, "base.ckpt")), strict=False)
        model.freeze_base()
        gen = load_activation(cfg, ckpt_dir, base_model=model, codec=codec,
                              sched=sched)
        store = model.store
        trainables = store.trainable_items()
        frozen_names = [n for n in store.names() if n.startswith("base.")]
        scale = cfg["degradation"]["scale_factor"]
        dropout = tcfg["cfg_dropout"]

        def step_fn():
            idxs = _batch_indices(pool, rng, batch)
            hr = _stack_hr(corpus, idxs)
            lr_imgs = _stack_lr(corpus, idxs)
            z0 = codec.encode(hr).astype(np.float64)
            z_lr = codec.encode(bicubic_upsample(lr_imgs, scale))
            ref = np.concatenate([
                activate(gen, lr_imgs[i : i + 1],
                         seed=derive_seed(corpus.pairs[idxs[i]].seed, 1))
                for i in range(batch)])
            z_r = codec.encode(ref)
            t = rng.randint(1, sched.t_max + 1, (batch,))
            eps = rng.normal(z0.shape)
            kinds = ["null" if rng.uniform() < dropout else "general"
                     for _ in range(batch)]
            z_t = S.q_sample(z0, t, eps, sched)
            pred = model.predict_noise(
                Tensor(z_t.astype(T.get_dtype())),
                ConditionBundle(z_lr, z_r, t, kinds))
            return T.mse(pred, Tensor(eps.astype(T.get_dtype())))

    frozen_hash = hash_params(store, frozen_names) if frozen_names else None

    for step in range(1, steps + 1):
        t0 = time.perf_counter()
        loss = step_fn()
        T.backward(loss)
        adam_step(trainables, state, tcfg["lr"])
        for _, p in trainables:
            p.zero_grad()
        wall = (time.perf_counter() - t0) * 1e3
        if step % tcfg["log_every"] == 0 or step == steps:
            logger.log(step, stage, loss.item(), wall)
        if progress and (step % tcfg["log_every"] == 0 or step == steps):
            progress(step, steps, loss.item())
        if step % tcfg["ckpt_every"] == 0:
            save_checkpoint(out_path, store.state())

    if frozen_hash is not None and hash_params(store, frozen_names) != frozen_hash:
        raise ContractError("frozen parameters changed during training")
    save_checkpoint(out_path, store.state())
    return out_path
