"""PPM (P6) image I/O, procedural HR texture synthesis, corpus assembly."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .degrade import DegradationConfig, DegradationRecord, degrade
from .rng import Rng, derive_seed

TEXTURE_CLASSES = ("gradients", "checkerboards", "blobs", "sinusoids", "polygons")


class ParseError(ValueError):
    """Malformed image file; carries the offending byte offset."""

    def __init__(self, msg, offset):
        super().__init__(f"{msg} (byte offset {offset})")
        self.offset = offset


# -- PPM P6 ---------------------------------------------------------------------

def write_ppm(path, img: np.ndarray):
    """Write an HWC float image in [0,1] as binary P6, maxval 255."""
    h, w = img.shape[:2]
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    """Read binary P6 into an HWC float image in [0,1]."""
    with open(path, "rb") as f:
        buf = f.read()
    pos = 0

    def token():
        nonlocal pos
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos] != 0x0A:
                pos += 1
            return token()
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError("truncated header", start)
        return buf[start:pos]

    if token() != b"P6":
        raise ParseError("not a P6 pixmap", 0)
    try:
        w, h, maxval = int(token()), int(token()), int(token())
    except ValueError:
        raise ParseError("non-numeric header field", pos) from None
    if maxval != 255:
        raise ParseError(f"unsupported maxval {maxval}", pos)
    pos += 1  # single whitespace byte after maxval
    need = w * h * 3
    payload = buf[pos : pos + need]
    if len(payload) < need:
        raise ParseError(
            f"truncated payload: need {need} bytes, have {len(payload)}", pos)
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3) / 255.0


# -- procedural textures ---------------------------------------------------------

def _tex_gradients(rng: Rng, size: int) -> np.ndarray:
    theta = rng.uniform((), 0, 2 * np.pi)
    y, x = np.mgrid[0:size, 0:size] / (size - 1)
    t = np.clip(x * np.cos(theta) + y * np.sin(theta), -1, 1)
    t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
    c0, c1 = rng.uniform((3,)), rng.uniform((3,))
    return c0 + t[..., None] * (c1 - c0)


def _tex_checkerboards(rng: Rng, size: int) -> np.ndarray:
    period = rng.randint(8, 17)
    px, py = rng.randint(0, period), rng.randint(0, period)
    y, x = np.mgrid[0:size, 0:size]
    mask = (((x + px) // (period // 2 or 1)) + ((y + py) // (period // 2 or 1))) % 2
    c0, c1 = rng.uniform((3,)), rng.uniform((3,))
    return np.where(mask[..., None] == 0, c0, c1)


def _tex_blobs(rng: Rng, size: int) -> np.ndarray:
    img = np.tile(rng.uniform((3,)) * 0.4, (size, size, 1))
    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    for _ in range(rng.randint(4, 9)):
        cx, cy = rng.uniform((), 0, size), rng.uniform((), 0, size)
        s = rng.uniform((), size / 16, size / 4)
        amp = rng.uniform((3,), 0.2, 1.0)
        g = np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * s * s))
        img += g[..., None] * amp
    return np.clip(img, 0, 1)


def _tex_sinusoids(rng: Rng, size: int) -> np.ndarray:
    y, x = np.mgrid[0:size, 0:size].astype(np.float64) / size
    acc = np.zeros((size, size))
    for _ in range(rng.randint(2, 4)):
        f = rng.uniform((), 2.0, 8.0)
        th = rng.uniform((), 0, np.pi)
        ph = rng.uniform((), 0, 2 * np.pi)
        acc += np.sin(2 * np.pi * f * (x * np.cos(th) + y * np.sin(th)) + ph)
    acc = (acc - acc.min()) / max(acc.max() - acc.min(), 1e-9)
    c0, c1 = rng.uniform((3,)), rng.uniform((3,))
    return c0 + acc[..., None] * (c1 - c0)


def _tex_polygons(rng: Rng, size: int) -> np.ndarray:
    img = np.tile(rng.uniform((3,)), (size, size, 1))
    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    for _ in range(rng.randint(3, 7)):
        # random convex polygon as intersection of half planes around a center
        cx, cy = rng.uniform((), 8, size - 8), rng.uniform((), 8, size - 8)
        r = rng.uniform((), size / 10, size / 3)
        k = rng.randint(3, 7)
        angles = np.sort(rng.uniform((k,), 0, 2 * np.pi))
        mask = np.ones((size, size), dtype=bool)
        for a in angles:
            nx, ny = np.cos(a), np.sin(a)
            mask &= (x - cx) * nx + (y - cy) * ny <= r
        img[mask] = rng.uniform((3,))
    return img


_TEX_FN = {
    "gradients": _tex_gradients,
    "checkerboards": _tex_checkerboards,
    "blobs": _tex_blobs,
    "sinusoids": _tex_sinusoids,
    "polygons": _tex_polygons,
}


def make_texture(cls: str, seed: int, size: int) -> np.ndarray:
    if cls not in _TEX_FN:
        raise ValueError(f"unknown texture class {cls!r}; know {TEXTURE_CLASSES}")
    return np.clip(_TEX_FN[cls](Rng(seed, stream=0x7E), size), 0.0, 1.0)


# -- corpus -----------------------------------------------------------------------

@dataclass
class ImagePair:
    lr: np.ndarray
    hr: np.ndarray
    seed: int
    texture_class: int
    record: DegradationRecord


@dataclass
class Corpus:
    pairs: list
    manifest: dict
    split: dict = field(default_factory=dict)  # 'train'/'val' -> indices

    def subset(self, tag: str):
        return [self.pairs[i] for i in self.split[tag]]


def generate_corpus(n: int, classes, master_seed: int, size: int = 64,
                    deg_cfg: DegradationConfig = None, val_mod: int = 10) -> Corpus:
    """Deterministic corpus: round-robin classes, per-item derived seeds,
    validation split where derive_seed(master, i) % val_mod == 0."""
    if n < 1:
        raise ValueError("corpus size must be >= 1")
    classes = list(classes)
    for c in classes:
        if c not in TEXTURE_CLASSES:
            raise ValueError(f"unknown texture class {c!r}")
    deg_cfg = deg_cfg or DegradationConfig()
    if size % 4 or size % deg_cfg.scale_factor:
        raise ValueError(f"size {size} must divide by 4 and by scale factor")
    pairs = []
    split = {"train": [], "val": []}
    for i in range(n):
        cls = classes[i % len(classes)]
        seed = derive_seed(master_seed, i)
        hr = make_texture(cls, seed, size)
        lr, rec = degrade(hr, deg_cfg, seed)
        pairs.append(ImagePair(lr, hr, seed, TEXTURE_CLASSES.index(cls), rec))
        tag = "val" if seed % val_mod == 0 else "train"
        split[tag].append(i)
    manifest = {
        "n": n, "size": size, "master_seed": master_seed,
        "classes": ",".join(classes), "val_mod": val_mod,
        "scale_factor": deg_cfg.scale_factor,
    }
    return Corpus(pairs, manifest, split)


def save_corpus(corpus: Corpus, out_dir, deg_cfg: DegradationConfig = None):
    os.makedirs(os.path.join(out_dir, "hr"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "lr"), exist_ok=True)
    with open(os.path.join(out_dir, "manifest.txt"), "w") as f:
        for k, v in corpus.manifest.items():
            f.write(f"{k}={v}\n")
    with open(os.path.join(out_dir, "records.jsonl"), "w") as f:
        for p in corpus.pairs:
            f.write(json.dumps({
                "seed": p.seed, "class": int(p.texture_class),
                "degradation": json.loads(p.record.to_json()),
            }) + "\n")
    if deg_cfg is not None:
        with open(os.path.join(out_dir, "degradation.json"), "w") as f:
            json.dump(deg_cfg.to_dict(), f, indent=1)
    for i, p in enumerate(corpus.pairs):
        write_ppm(os.path.join(out_dir, "hr", f"{i:05d}.ppm"), p.hr)
        write_ppm(os.path.join(out_dir, "lr", f"{i:05d}.ppm"), p.lr)


def load_corpus(in_dir) -> Corpus:
    manifest = {}
    with open(os.path.join(in_dir, "manifest.txt")) as f:
        for line in f:
            if "=" in line:
                k, v = line.rstrip("\n").split("=", 1)
                manifest[k] = v
    n = int(manifest["n"])
    val_mod = int(manifest["val_mod"])
    pairs = []
    split = {"train": [], "val": []}
    with open(os.path.join(in_dir, "records.jsonl")) as f:
        metas = [json.loads(line) for line in f]
    for i in range(n):
        hr = read_ppm(os.path.join(in_dir, "hr", f"{i:05d}.ppm"))
        lr = read_ppm(os.path.join(in_dir, "lr", f"{i:05d}.ppm"))
        m = metas[i]
        rec = DegradationRecord(seed=m["degradation"]["seed"],
                                stages=m["degradation"]["stages"])
        pairs.append(ImagePair(lr, hr, m["seed"], m["class"], rec))
        split["val" if m["seed"] % val_mod == 0 else "train"].append(i)
    return Corpus(pairs, manifest, split)
