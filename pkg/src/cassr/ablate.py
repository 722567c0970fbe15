"""Ablation runner: sweeps reference generators, attention-block variants
and conditioning modes over a trained checkpoint set, averaged over seeds."""

from __future__ import annotations

import os

from . import schedule as S
from .config import RunConfig
from .metrics import MetricReport
from .pipeline import SamplerConfig, evaluate
from .train import (ConfigStageError, load_activation, load_cassr, load_codec)
from .unet import VARIANTS

SUITES = ("reference_source", "attention_variant", "conditioning_variant")

_REFERENCE_SOURCES = ("identity_upsample", "cnn_restorer", "mini_diffusion_restorer")
_CONDITIONING = ("general+CFG", "none", "CFG-only", "per-class")

# checkpoints each suite depends on, by stage name
_SUITE_STAGES = {
    "reference_source": ("codec", "base", "activation", "cassr"),
    "attention_variant": ("codec", "base", "activation", "cassr"),
    "conditioning_variant": ("codec", "base", "activation", "cassr"),
}


class AblationTable:
    """One row per swept variant; per-cell reports retained for audit."""

    def __init__(self, suite: str, seeds):
        self.suite = suite
        self.seeds = list(seeds)
        self.rows = []          # (variant, mean_psnr, std_psnr, mean_ssim)
        self.reports = {}       # variant -> [MetricReport per seed]

    def add(self, variant: str, reports):
        self.reports[variant] = reports
        psnrs = [r.mean_psnr for r in reports]
        ssims = [r.mean_ssim for r in reports]
        n = len(psnrs)
        mean_p = sum(psnrs) / n
        std_p = (sum((p - mean_p) ** 2 for p in psnrs) / n) ** 0.5
        self.rows.append((variant, mean_p, std_p, sum(ssims) / n))

    def mean_psnr(self, variant: str) -> float:
        for v, p, _, _ in self.rows:
            if v == variant:
                return p
        raise KeyError(variant)

    def to_csv(self) -> str:
        lines = ["variant,mean_psnr,std_psnr,mean_ssim"]
        for v, p, sp, s in self.rows:
            lines.append(f"{v},{p:.6f},{sp:.6f},{s:.6f}")
        return "\n".join(lines) + "\n"

    def __str__(self) -> str:
        w = max(len("variant"), *(len(r[0]) for r in self.rows)) if self.rows else 7
        head = (f"suite: {self.suite}  seeds: {self.seeds}\n"
                f"{'variant':<{w}}  {'psnr':>9}  {'std':>7}  {'ssim':>7}")
        body = [f"{v:<{w}}  {p:9.3f}  {sp:7.3f}  {s:7.4f}"
                for v, p, sp, s in self.rows]
        return "\n".join([head, "-" * len(head.splitlines()[-1]), *body])


def check_suite_prereqs(suite: str, ckpt_dir):
    missing = [s for s in _SUITE_STAGES[suite]
               if not os.path.exists(os.path.join(ckpt_dir, f"{s}.ckpt"))]
    if missing:
        raise ConfigStageError(
            f"ablation suite {suite!r} needs trained stages {missing}; "
            f"run `cassr train --stage <name>` for each")


def run_ablation(suite: str, corpus, seeds, cfg: RunConfig, ckpt_dir,
                 max_images: int = None) -> AblationTable:
    """Evaluate every variant in ``suite`` on the validation split, once per
    seed, and tabulate mean PSNR/SSIM per variant."""
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}, expected one of {SUITES}")
    seeds = list(seeds)
    if not seeds:
        raise ValueError("at least one seed required")
    check_suite_prereqs(suite, ckpt_dir)

    codec = load_codec(cfg, ckpt_dir)
    sc = cfg["schedule"]
    sched = S.linear_schedule(sc["t_max"], sc["beta_start"], sc["beta_end"])
    model = load_cassr(cfg, ckpt_dir)
    gen = load_activation(cfg, ckpt_dir, base_model=model, codec=codec,
                          sched=sched)
    sam = cfg["sampler"]

    def base_scfg(seed, **over):
        kw = {"ddim_steps": sam["ddim_steps"], "eta": sam["eta"],
              "cfg_scale": sam["cfg_scale"], "seed": seed,
              "lr_init": sam["lr_init"], "cond_kind": sam["cond_kind"],
              "guide_images": sam["guide_images"]}
        kw.update(over)
        return SamplerConfig(**kw)

    table = AblationTable(suite, seeds)

    if suite == "reference_source":
        for kind in _REFERENCE_SOURCES:
            g = load_activation(cfg, ckpt_dir, kind=kind, base_model=model,
                                codec=codec, sched=sched)
            table.add(kind, [
                evaluate(model, corpus, g, codec, sched, base_scfg(s),
                         max_images=max_images, variant_label=kind)
                for s in seeds])
    elif suite == "attention_variant":
        for variant in VARIANTS:
            m = load_cassr(cfg, ckpt_dir, variant=variant)
            table.add(variant, [
                evaluate(m, corpus, gen, codec, sched, base_scfg(s),
                         max_images=max_images, variant_label=variant)
                for s in seeds])
    else:  # conditioning_variant
        modes = {
            "general+CFG": {"cond_kind": "general",
                            "cfg_scale": sam["cfg_scale"]},
            "none": {"cond_kind": "null", "cfg_scale": 1.0},
            "CFG-only": {"cond_kind": "null", "cfg_scale": sam["cfg_scale"],
                         "guide_images": True},
            "per-class": {"cond_kind": "class",
                          "cfg_scale": sam["cfg_scale"]},
        }
        for label in _CONDITIONING:
            table.add(label, [
                evaluate(model, corpus, gen, codec, sched,
                         base_scfg(s, **modes[label]),
                         max_images=max_images, variant_label=label)
                for s in seeds])
    return table
