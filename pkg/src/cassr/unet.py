"""Frozen-base U-Net, weight-shared control encoder and the
multiple-attention conditioning blocks assembled into the noise
predictor eps(z_t, z_r, z_lr, t, c)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .layers import (Attention, Conv2d, GroupNorm, ParamStore, ResBlock,
                     TimestepEmbedding, from_tokens, to_tokens)
from .rng import Rng
from .tensor import ContractError, Tensor

VARIANTS = ("full", "additive_only", "ref_only", "lr_only")


@dataclass
class ModelConfig:
    c_lat: int = 4
    widths: tuple = (32, 64, 128)
    kernel: int = 3          # 1 gives a padding-free equivariant toy model
    sin_dim: int = 64
    t_dim: int = 128
    t_max: int = 200
    n_classes: int = 5
    inject_site: str = "decoder_skips"  # or "encoder_features"

    def to_dict(self):
        d = self.__dict__.copy()
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["widths"] = tuple(d["widths"])
        return cls(**d)


class _SelfAttn:
    """Residual self-attention over spatial tokens, identity at init."""

    def __init__(self, store, name, d, rng, trainable=True):
        self.attn = Attention(store, name, d, rng, zero_out=True, trainable=trainable)

    def __call__(self, x: Tensor) -> Tensor:
        tok = to_tokens(x)
        return from_tokens(T.add(tok, self.attn(tok, tok)), x.shape[2:])


class BaseUNet:
    """Channel-ladder encoder/decoder with skip concatenation, self-attention
    at the two lowest resolutions, and hooks for control injection."""

    def __init__(self, store: ParamStore, prefix: str, cfg: ModelConfig, rng: Rng,
                 trainable=True):
        self.cfg = cfg
        w = cfg.widths
        k = cfg.kernel
        levels = len(w)
        attn_levels = set(range(max(0, levels - 2), levels)) if levels > 1 else set()
        self.attn_levels = attn_levels

        self.temb = TimestepEmbedding(store, f"{prefix}.temb", cfg.sin_dim,
                                      cfg.t_dim, rng, trainable)
        self.conv_in = Conv2d(store, f"{prefix}.conv_in", cfg.c_lat, w[0], k, rng,
                              trainable=trainable)
        self.enc, self.enc_attn, self.downs = [], {}, []
        for i in range(levels):
            self.enc.append(ResBlock(store, f"{prefix}.enc{i}", w[i], w[i],
                                     cfg.t_dim, rng, trainable))
            if i in attn_levels:
                self.enc_attn[i] = _SelfAttn(store, f"{prefix}.eattn{i}", w[i], rng,
                                             trainable)
            if i + 1 < levels:
                # 2x2 stride-2 conv keeps output extents exactly halved
                self.downs.append(Conv2d(store, f"{prefix}.down{i}", w[i], w[i + 1],
                                         2, rng, stride=2, pad=0,
                                         trainable=trainable))
        self.mid1 = ResBlock(store, f"{prefix}.mid1", w[-1], w[-1], cfg.t_dim, rng,
                             trainable)
        self.mid_attn = _SelfAttn(store, f"{prefix}.mattn", w[-1], rng, trainable)
        self.mid2 = ResBlock(store, f"{prefix}.mid2", w[-1], w[-1], cfg.t_dim, rng,
                             trainable)
        self.dec, self.dec_attn, self.ups = [], {}, []
        for i in reversed(range(levels)):
            self.dec.append(ResBlock(store, f"{prefix}.dec{i}", 2 * w[i], w[i],
                                     cfg.t_dim, rng, trainable))
            if i in attn_levels:
                self.dec_attn[i] = _SelfAttn(store, f"{prefix}.dattn{i}", w[i], rng,
                                             trainable)
            if i > 0:
                self.ups.append(Conv2d(store, f"{prefix}.up{i}", w[i], w[i - 1], k,
                                       rng, trainable=trainable))
        self.out_norm = GroupNorm(store, f"{prefix}.onorm", w[0], trainable=trainable)
        self.out_conv = Conv2d(store, f"{prefix}.oconv", w[0], cfg.c_lat, k, rng,
                               init="zeros", trainable=trainable)

    def embed(self, t) -> Tensor:
        return self.temb(t, self.cfg.t_max)

    def forward(self, z_t: Tensor, emb: Tensor, inject=None, dec_hook=None) -> Tensor:
        levels = len(self.cfg.widths)
        inject_enc = inject is not None and self.cfg.inject_site == "encoder_features"
        h = self.conv_in(z_t)
        skips = []
        for i in range(levels):
            h = self.enc[i](h, emb)
            if i in self.enc_attn:
                h = self.enc_attn[i](h)
            if inject_enc:
                h = inject(i, h)
            skips.append(h)
            if i + 1 < levels:
                h = self.downs[i](h)
        h = self.mid2(self.mid_attn(self.mid1(h, emb)), emb)
        if inject is not None and not inject_enc:
            skips = [inject(i, s) for i, s in enumerate(skips)]
        for j, i in enumerate(reversed(range(levels))):
            h = self.dec[j](T.concat([h, skips[i]], axis=1), emb)
            if i in self.dec_attn:
                h = self.dec_attn[i](h)
            if dec_hook is not None:
                h = dec_hook(i, h)
            if i > 0:
                h = self.ups[j](T.upsample_nearest(h, 2))
        return self.out_conv(T.silu(self.out_norm(h)))


class ControlEncoder:
    """Copy of the base encoder topology with one independently trainable
    weight set, run separately over each conditioning latent."""

    def __init__(self, store: ParamStore, prefix: str, cfg: ModelConfig, rng: Rng,
                 trainable=True):
        self.cfg = cfg
        w = cfg.widths
        k = cfg.kernel
        levels = len(w)
        attn_levels = set(range(max(0, levels - 2), levels)) if levels > 1 else set()
        self.conv_in = Conv2d(store, f"{prefix}.conv_in", cfg.c_lat, w[0], k, rng,
                              trainable=trainable)
        self.enc, self.enc_attn, self.downs = [], {}, []
        for i in range(levels):
            self.enc.append(ResBlock(store, f"{prefix}.enc{i}", w[i], w[i],
                                     cfg.t_dim, rng, trainable))
            if i in attn_levels:
                self.enc_attn[i] = _SelfAttn(store, f"{prefix}.eattn{i}", w[i], rng,
                                             trainable)
            if i + 1 < levels:
                # 2x2 stride-2 conv keeps output extents exactly halved
                self.downs.append(Conv2d(store, f"{prefix}.down{i}", w[i], w[i + 1],
                                         2, rng, stride=2, pad=0,
                                         trainable=trainable))

    def forward(self, z: Tensor, emb: Tensor) -> list:
        feats = []
        h = self.conv_in(z)
        for i in range(len(self.cfg.widths)):
            h = self.enc[i](h, emb)
            if i in self.enc_attn:
                h = self.enc_attn[i](h)
            feats.append(h)
            if i + 1 < len(self.cfg.widths):
                h = self.downs[i](h)
        return feats


class MultipleAttentionBlock:
    """Reference attention -> self attention -> LR attention, each residual
    with a zero-initialized output projection (identity at init)."""

    def __init__(self, store, prefix, d, rng, use_ref=True, use_lr=True,
                 trainable=True):
        self.use_ref, self.use_lr = use_ref, use_lr
        if use_ref:
            self.ref = Attention(store, f"{prefix}.ref", d, rng, zero_out=True,
                                 trainable=trainable)
        self.self_attn = Attention(store, f"{prefix}.self", d, rng, zero_out=True,
                                   trainable=trainable)
        if use_lr:
            self.lr = Attention(store, f"{prefix}.lr", d, rng, zero_out=True,
                                trainable=trainable)

    def __call__(self, x: Tensor, r_feat: Tensor, l_feat: Tensor) -> Tensor:
        spatial = x.shape[2:]
        tok = to_tokens(x)
        if self.use_ref:
            tok = T.add(tok, self.ref(tok, to_tokens(r_feat)))
        tok = T.add(tok, self.self_attn(tok, tok))
        if self.use_lr:
            tok = T.add(tok, self.lr(tok, to_tokens(l_feat)))
        return from_tokens(tok, spatial)


class ConditionBundle:
    """Conditioning inputs for one prediction: latents, step and embedding kind."""

    def __init__(self, z_lr, z_r, t, kind="general", class_ids=None):
        self.z_lr = z_lr if isinstance(z_lr, Tensor) else Tensor(z_lr)
        self.z_r = z_r if isinstance(z_r, Tensor) else Tensor(z_r)
        self.t = np.atleast_1d(np.asarray(t))
        self.kind = kind          # 'general' | 'null' | 'class'
        self.class_ids = class_ids


class CasSRModel:
    """Frozen base U-Net steered by a weight-shared control encoder over
    the LR and reference latents, fused additively (zero-init 1x1
    projections on the skip features) and through multiple-attention
    blocks in every decoder level."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, variant: str = "full"):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}, expected {VARIANTS}")
        self.cfg = cfg
        self.variant = variant
        self.store = ParamStore()
        rng = Rng(seed, stream=0xC0DE)
        self.base = BaseUNet(self.store, "base", cfg, rng)
        self.ctrl = ControlEncoder(self.store, "ctrl", cfg, rng)
        self.inj_l, self.inj_r = [], []
        for i, w in enumerate(cfg.widths):
            self.inj_l.append(Conv2d(self.store, f"inj.l{i}", w, w, 1, rng, pad=0,
                                     init="zeros", bias=False))
            self.inj_r.append(Conv2d(self.store, f"inj.r{i}", w, w, 1, rng, pad=0,
                                     init="zeros", bias=False))
        self.mattn = None
        if variant != "additive_only":
            self.mattn = [
                MultipleAttentionBlock(
                    self.store, f"mattn{i}", w, rng,
                    use_ref=(variant != "lr_only"),
                    use_lr=(variant != "ref_only"),
                )
                for i, w in enumerate(cfg.widths)
            ]
        self.store.add("cond.general", T.zeros((cfg.t_dim,)))
        self.store.add("cond.null", T.zeros((cfg.t_dim,)))
        self.store.add("cond.class", T.zeros((cfg.n_classes, cfg.t_dim)))

    # -- conditioning ----------------------------------------------------------

    def cond_rows(self, kind, n: int, class_ids=None) -> Tensor:
        """(n, t_dim) embedding rows; kind may be a per-sample list."""
        kinds = [kind] * n if isinstance(kind, str) else list(kind)
        rows = []
        for i, k in enumerate(kinds):
            if k == "general":
                e = self.store["cond.general"]
            elif k == "null":
                e = self.store["cond.null"]
            elif k == "class":
                e = T.slice_axis(self.store["cond.class"], 0,
                                 int(class_ids[i]), int(class_ids[i]) + 1)
                rows.append(e)
                continue
            else:
                raise ContractError(f"unknown conditioning kind {k!r}")
            rows.append(T.reshape(e, (1, self.cfg.t_dim)))
        return T.concat(rows, axis=0) if n > 1 else rows[0]

    # -- forward ---------------------------------------------------------------

    def predict_noise(self, z_t: Tensor, cond: ConditionBundle) -> Tensor:
        if cond.z_lr.shape != z_t.shape or cond.z_r.shape != z_t.shape:
            raise ContractError(
                f"condition latents must match z_t shape {z_t.shape}, got "
                f"{cond.z_lr.shape} / {cond.z_r.shape}")
        n = z_t.shape[0]
        emb = self.base.embed(cond.t)
        emb = T.add(emb, self.cond_rows(cond.kind, n, cond.class_ids))
        l_feats = self.ctrl.forward(cond.z_lr, emb)
        r_feats = self.ctrl.forward(cond.z_r, emb)

        def inject(i, skip):
            return T.add(T.add(skip, self.inj_l[i](l_feats[i])),
                         self.inj_r[i](r_feats[i]))

        dec_hook = None
        if self.mattn is not None:
            def dec_hook(i, x):
                return self.mattn[i](x, r_feats[i], l_feats[i])

        return self.base.forward(z_t, emb, inject=inject, dec_hook=dec_hook)

    def predict_base(self, z_t: Tensor, t, cond_rows: Tensor = None) -> Tensor:
        """Frozen-base unconditional prediction (no control apparatus)."""
        emb = self.base.embed(t)
        if cond_rows is not None:
            emb = T.add(emb, cond_rows)
        return self.base.forward(z_t, emb)

    # -- parameter bookkeeping ---------------------------------------------------

    def freeze_base(self):
        for name in self.store.names():
            if name.startswith("base."):
                self.store.set_trainable(name, False)

    def partition_params(self):
        """(frozen names, trainable names): base is frozen; control encoder,
        injections, attention blocks and conditioning embeddings train."""
        frozen = {n for n in self.store.names() if n.startswith("base.")}
        trainable = set(self.store.names()) - frozen
        return frozen, trainable


def build_variant(kind: str, cfg: ModelConfig, seed: int = 0) -> CasSRModel:
    """Construct a CasSR ablation variant sharing the full model's layout."""
    return CasSRModel(cfg, seed=seed, variant=kind)
