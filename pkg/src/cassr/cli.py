"""Command-line entry point: one executable, one subcommand per pipeline
stage.  Exit codes: 0 success, 1 usage/config, 2 data/format, 3 contract."""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CONTRACT = 3


class _Parser(argparse.ArgumentParser):
    """argparse defaults to exit code 2 on usage errors; we reserve 2 for
    data/format problems, so remap to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


class UsageError(ValueError):
    pass


def _build_parser() -> _Parser:
    p = _Parser(prog="cassr", description=__doc__)
    p.add_argument("--threads", type=int, default=1,
                   help="BLAS/OpenMP thread cap (default 1, deterministic)")
    p.add_argument("--version", action="version", version=f"cassr {__version__}")
    sub = p.add_subparsers(dest="cmd", required=True)

    sp = sub.add_parser("synth-data", help="generate a degraded texture corpus")
    sp.add_argument("--config", help="JSON run config (defaults if omitted)")
    sp.add_argument("--out", required=True, help="corpus output directory")

    tp = sub.add_parser("train", help="run one training stage")
    tp.add_argument("--stage", required=True,
                    choices=("codec", "base", "activation", "cassr"))
    tp.add_argument("--config", help="JSON run config")
    tp.add_argument("--data", required=True, help="corpus directory")
    tp.add_argument("--out", required=True, help="checkpoint directory")

    ip = sub.add_parser("infer", help="super-resolve one PPM image")
    ip.add_argument("--lr", required=True, help="input LR image (P6 PPM)")
    ip.add_argument("--ckpt-dir", required=True)
    ip.add_argument("--config", help="JSON run config")
    ip.add_argument("--seed", type=int, default=0)
    ip.add_argument("--cfg-scale", type=float, default=None)
    ip.add_argument("--steps", type=int, default=None, help="DDIM steps")
    ip.add_argument("--variant", default="full",
                    choices=("full", "additive_only", "ref_only", "lr_only"))
    ip.add_argument("--out", required=True, help="output SR image (PPM)")
    ip.add_argument("--dump-reference", action="store_true",
                    help="also write the stage-1 reference image")

    ep = sub.add_parser("eval", help="PSNR/SSIM report over a corpus split")
    ep.add_argument("--data", required=True)
    ep.add_argument("--ckpt-dir", required=True)
    ep.add_argument("--config", help="JSON run config")
    ep.add_argument("--out", required=True, help="CSV report path")
    ep.add_argument("--split", default="val", choices=("val", "train"))
    ep.add_argument("--max-images", type=int, default=None)
    ep.add_argument("--seed", type=int, default=0)

    ap = sub.add_parser("ablate", help="run an ablation suite")
    ap.add_argument("--suite", required=True,
                    choices=("reference_source", "attention_variant",
                             "conditioning_variant"))
    ap.add_argument("--seeds", default="0,1,2",
                    help="comma-separated seed list")
    ap.add_argument("--data", required=True)
    ap.add_argument("--ckpt-dir", required=True)
    ap.add_argument("--config", help="JSON run config")
    ap.add_argument("--out", help="CSV output path (table also printed)")
    ap.add_argument("--max-images", type=int, default=None)

    gp = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    gp.add_argument("--module", default=None,
                    choices=("tensor", "layers", "model"))
    return p


def _load_config(path):
    from .config import RunConfig

    return RunConfig.load(path) if path else RunConfig()


def _sidecar(artifact_path, cfg, seed, extra=None):
    """Every artifact gets `<path>.meta.json` with provenance fields."""
    meta = {"config_hash": cfg.hash, "seed": seed, "version": __version__}
    if extra:
        meta.update(extra)
    with open(f"{artifact_path}.meta.json", "w") as f:
        json.dump(meta, f, indent=1, sort_keys=True)
        f.write("\n")


def _cmd_synth_data(args):
    from .data import generate_corpus, save_corpus

    cfg = _load_config(args.config)
    cc = cfg["corpus"]
    deg = cfg.degradation_config()
    corpus = generate_corpus(cc["n"], cc["classes"], cc["master_seed"],
                             size=cc["size"], deg_cfg=deg,
                             val_mod=cc["val_mod"])
    os.makedirs(args.out, exist_ok=True)
    save_corpus(corpus, args.out, deg)
    _sidecar(os.path.join(args.out, "manifest.txt"), cfg, cc["master_seed"],
             {"n": cc["n"], "val": len(corpus.split["val"])})
    print(f"wrote {cc['n']} pairs ({len(corpus.split['val'])} val) to {args.out}")
    return EXIT_OK


def _cmd_train(args):
    from .data import load_corpus
    from .train import train_stage

    cfg = _load_config(args.config)
    corpus = load_corpus(args.data)
    path = train_stage(args.stage, corpus, cfg, args.out,
                       progress=lambda s, n, l: print(
                           f"[{args.stage}] step {s}/{n} loss {l:.5f}",
                           flush=True))
    _sidecar(path, cfg, cfg["train"]["seed"], {"stage": args.stage})
    print(f"checkpoint: {path}")
    return EXIT_OK


def _sampler_objects(cfg, ckpt_dir, variant="full"):
    from . import schedule as S
    from .train import load_activation, load_cassr, load_codec

    codec = load_codec(cfg, ckpt_dir)
    sc = cfg["schedule"]
    sched = S.linear_schedule(sc["t_max"], sc["beta_start"], sc["beta_end"])
    model = load_cassr(cfg, ckpt_dir, variant=variant)
    gen = load_activation(cfg, ckpt_dir, base_model=model, codec=codec,
                          sched=sched)
    return model, gen, codec, sched


def _cmd_infer(args):
    from .data import read_ppm, write_ppm
    from .pipeline import SamplerConfig, sample

    cfg = _load_config(args.config)
    sam = cfg["sampler"]
    scfg = SamplerConfig(
        ddim_steps=args.steps if args.steps is not None else sam["ddim_steps"],
        eta=sam["eta"],
        cfg_scale=(args.cfg_scale if args.cfg_scale is not None
                   else sam["cfg_scale"]),
        seed=args.seed, lr_init=sam["lr_init"],
        cond_kind=sam["cond_kind"], guide_images=sam["guide_images"])
    model, gen, codec, sched = _sampler_objects(cfg, args.ckpt_dir,
                                                args.variant)
    lr_img = read_ppm(args.lr)
    sr, ref = sample(model, lr_img, gen, codec, sched, scfg,
                     return_reference=True)
    write_ppm(args.out, sr)
    _sidecar(args.out, cfg, args.seed,
             {"variant": args.variant, "input": args.lr})
    if args.dump_reference:
        root, ext = os.path.splitext(args.out)
        ref_path = f"{root}.reference{ext or '.ppm'}"
        write_ppm(ref_path, ref)
        _sidecar(ref_path, cfg, args.seed, {"kind": gen.kind})
        print(f"reference: {ref_path}")
    print(f"sr: {args.out}")
    return EXIT_OK


def _cmd_eval(args):
    from .data import load_corpus
    from .pipeline import SamplerConfig, evaluate

    cfg = _load_config(args.config)
    corpus = load_corpus(args.data)
    sam = cfg["sampler"]
    scfg = SamplerConfig(ddim_steps=sam["ddim_steps"], eta=sam["eta"],
                         cfg_scale=sam["cfg_scale"], seed=args.seed,
                         lr_init=sam["lr_init"], cond_kind=sam["cond_kind"],
                         guide_images=sam["guide_images"])
    model, gen, codec, sched = _sampler_objects(cfg, args.ckpt_dir)
    report = evaluate(model, corpus, gen, codec, sched, scfg,
                      split=args.split, max_images=args.max_images)
    with open(args.out, "w") as f:
        f.write(report.to_csv())
    _sidecar(args.out, cfg, args.seed, {"split": args.split})
    print(f"mean psnr {report.mean_psnr:.3f} dB  "
          f"mean ssim {report.mean_ssim:.4f}  -> {args.out}")
    return EXIT_OK


def _cmd_ablate(args):
    from .ablate import run_ablation
    from .data import load_corpus

    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
    except ValueError:
        raise UsageError(f"--seeds must be comma-separated ints, "
                         f"got {args.seeds!r}") from None
    cfg = _load_config(args.config)
    corpus = load_corpus(args.data)
    table = run_ablation(args.suite, corpus, seeds, cfg, args.ckpt_dir,
                         max_images=args.max_images)
    print(table)
    if args.out:
        with open(args.out, "w") as f:
            f.write(table.to_csv())
        _sidecar(args.out, cfg, seeds[0], {"suite": args.suite,
                                           "seeds": seeds})
        print(f"csv: {args.out}")
    return EXIT_OK


def _cmd_gradcheck(args):
    from .gradcheck import run_suite

    reports = run_suite(module=args.module)
    width = max(len(n) for n in reports)
    ok = True
    for name, rep in reports.items():
        ok = ok and rep.passed
        print(f"{name:<{width}}  {rep.max_rel_err:10.3e}  "
              f"{'PASS' if rep.passed else 'FAIL'}")
    worst = max(r.max_rel_err for r in reports.values())
    print(f"{'overall':<{width}}  {worst:10.3e}  "
          f"{'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CONTRACT


_COMMANDS = {
    "synth-data": _cmd_synth_data,
    "train": _cmd_train,
    "infer": _cmd_infer,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE

    # Cap math-library threads before numpy initializes its BLAS pools;
    # all heavy imports below this point are lazy for that reason.
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, str(args.threads))

    from .config import ConfigError
    from .data import ParseError
    from .tensor import ContractError, DimensionError
    from .train import CheckpointError, ConfigStageError

    try:
        return _COMMANDS[args.cmd](args)
    except (UsageError, ConfigError, ConfigStageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, CheckpointError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ContractError, DimensionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONTRACT
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
