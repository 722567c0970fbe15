"""Run configuration: a key/value tree with documented defaults, strict
unknown-key rejection and a content hash embedded in every output."""

from __future__ import annotations

import copy
import hashlib
import json

from .codec import CodecConfig
from .degrade import DegradationConfig
from .unet import ModelConfig


class ConfigError(ValueError):
    """Bad configuration; message names the offending key path."""


DEFAULTS = {
    "corpus": {
        "n": 1000,
        "size": 64,
        "classes": ["gradients", "checkerboards", "blobs", "sinusoids", "polygons"],
        "master_seed": 0,
        "val_mod": 10,
    },
    "degradation": DegradationConfig().to_dict(),
    "codec": CodecConfig().to_dict(),
    "model": ModelConfig().to_dict(),
    "schedule": {"t_max": 200, "beta_start": 1e-4, "beta_end": 0.02},
    "sampler": {
        "ddim_steps": 20,
        "eta": 0.0,
        "cfg_scale": 2.0,
        "seed": 0,
        "lr_init": True,
        "cond_kind": "general",
        "guide_images": False,
    },
    "activation": {
        "kind": "cnn_restorer",
        "diffusion_steps": 8,
        "diffusion_t_start": 50,
    },
    "train": {
        "lr": 5e-4,
        "batch": 4,
        "seed": 0,
        "precision": "f32",
        "cfg_dropout": 0.1,
        "log_every": 50,
        "ckpt_every": 1000,
        "steps": {"codec": 5000, "base": 20000, "activation": 3000, "cassr": 10000},
    },
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        kpath = f"{path}.{k}" if path else k
        if k not in base:
            raise ConfigError(f"unknown config key: {kpath}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {kpath} expects a table")
            out[k] = _merge(base[k], v, kpath)
        else:
            out[k] = v
    return out


class RunConfig:
    def __init__(self, tree: dict = None):
        self.tree = _merge(DEFAULTS, tree or {})

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as f:
            try:
                tree = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"config is not valid JSON: {e}") from None
        return cls(tree)

    def __getitem__(self, section: str) -> dict:
        return self.tree[section]

    def canonical(self) -> str:
        return json.dumps(self.tree, sort_keys=True, separators=(",", ":"))

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def model_config(self) -> ModelConfig:
        mc = ModelConfig.from_dict(self.tree["model"])
        mc.t_max = self.tree["schedule"]["t_max"]
        return mc

    def codec_config(self) -> CodecConfig:
        return CodecConfig.from_dict(self.tree["codec"])

    def degradation_config(self) -> DegradationConfig:
        return DegradationConfig.from_dict(self.tree["degradation"])
