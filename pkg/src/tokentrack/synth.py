"""Synthetic multi-modal tracking sequences.

A scene is a textured-noise background with a moving disc target, optional
distractor discs, optional occlusion windows (the target is not drawn) and
optional RGB-corruption windows (the RGB channel goes nearly black while
the auxiliary modality stays informative). Auxiliary channels are derived,
not painted: depth is inverse-distance shading around the target, thermal
is a target-hot intensity bump, event is the thresholded inter-frame RGB
difference computed before corruption is applied.

Frames are quantized to uint8 at generation time so an in-memory sequence
and its PNG round-trip are bit-identical.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .boxes import BoundingBox
from .rng import Rng

MODALITIES = ("none", "depth", "thermal", "event")
MOTIONS = ("linear", "sinusoidal", "random_walk")


@dataclass
class SceneSpec:
    extent: int = 64
    length: int = 60
    motion: str = "linear"
    target_size: float = 12.0            # disc diameter in pixels
    speed: float = 1.0                   # px/frame (linear, random_walk step std)
    distractors: int = 0
    distractor_similarity: float = 1.0   # 1 = identical to the target's initial look
    distractor_orbit: bool = False       # keep distractors close to the target
    color_drift: bool = False            # target color drifts over the sequence
    distractor_lag: int = 0              # distractors wear the target's color from lag frames ago
    occlusion_windows: list = field(default_factory=list)   # [(start, end)), target hidden
    corruption_windows: list = field(default_factory=list)  # [(start, end)), rgb darkened
    modality: str = "none"
    noise: float = 0.02                  # per-frame pixel noise amplitude
    start: tuple = None                  # optional explicit start center (x, y)
    velocity: tuple = None               # optional explicit (vx, vy) for linear motion

    def __post_init__(self):
        if self.motion not in MOTIONS:
            raise ValueError(f"motion must be one of {MOTIONS}, got {self.motion!r}")
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}, got {self.modality!r}")
        if self.extent < 16:
            raise ValueError(f"extent {self.extent} too small")
        if self.target_size >= self.extent / 2:
            raise ValueError(f"target size {self.target_size} too large for extent {self.extent}")
        if self.distractor_lag < 0:
            raise ValueError(f"distractor_lag must be non-negative, got {self.distractor_lag}")


@dataclass
class SyntheticSequence:
    spec: SceneSpec
    seed: int
    rgb: np.ndarray        # (F, 3, H, W) uint8
    aux: np.ndarray        # (F, 3, H, W) uint8, or None when modality == "none"
    boxes: np.ndarray      # (F, 4) float, (x_min, y_min, w, h)
    occluded: np.ndarray   # (F,) bool
    corrupted: np.ndarray  # (F,) bool
    name: str = "sequence"

    @property
    def length(self):
        return self.rgb.shape[0]

    def box(self, t):
        x, y, w, h = self.boxes[t]
        return BoundingBox(float(x), float(y), float(w), float(h))


def _in_window(t, windows):
    return any(lo <= t < hi for lo, hi in windows)


def _trajectory(spec, rng):
    """(F, 2) centers kept inside margins; reflection at walls for linear."""
    f, e = spec.length, spec.extent
    margin = spec.target_size / 2 + 1.0
    lo, hi = margin, e - margin
    pos = np.zeros((f, 2))
    if spec.motion == "linear":
        if spec.start is not None:
            p = np.array(spec.start, dtype=float)
        else:
            p = rng.uniform((2,), lo, hi)
        if spec.velocity is not None:
            v = np.array(spec.velocity, dtype=float)
        else:
            angle = rng.uniform((), 0, 2 * math.pi)
            v = spec.speed * np.array([math.cos(angle), math.sin(angle)])
        for t in range(f):
            pos[t] = p
            p = p + v
            for a in range(2):  # reflect off the walls
                if p[a] < lo:
                    p[a] = 2 * lo - p[a]
                    v[a] = -v[a]
                elif p[a] > hi:
                    p[a] = 2 * hi - p[a]
                    v[a] = -v[a]
    elif spec.motion == "sinusoidal":
        mid = (lo + hi) / 2
        amp = (hi - lo) / 2
        ax, ay = rng.uniform((2,), 0.5, 1.0) * amp
        phx, phy = rng.uniform((2,), 0, 2 * math.pi)
        omega = 2 * math.pi * spec.speed / max(f, 1) * rng.uniform((), 1.0, 2.0)
        for t in range(f):
            pos[t] = (mid + ax * math.sin(omega * t + phx), mid + ay * math.sin(2 * omega * t + phy))
    else:  # random_walk
        p = rng.uniform((2,), lo, hi)
        for t in range(f):
            pos[t] = p
            p = np.clip(p + rng.normal((2,), 0.0, spec.speed), lo, hi)
    return np.clip(pos, lo, hi)


def _orbit_trajectory(spec, target_centers, rng):
    """Distractor path that stays near the target: a slowly wandering offset.

    The offset radius stays between one and two target diameters, so the
    distractor is inside every reasonably sized search region without
    permanently overlapping the target.
    """
    f, e = spec.length, spec.extent
    margin = spec.target_size / 2 + 1.0
    r_lo, r_hi = spec.target_size * 1.1, spec.target_size * 2.2
    theta = float(rng.uniform((), 0, 2 * math.pi))
    r = float(rng.uniform((), r_lo, r_hi))
    pos = np.zeros((f, 2))
    mid = np.array([e / 2.0, e / 2.0])
    for t in range(f):
        theta += float(rng.normal((), 0.0, 0.25))
        r = float(np.clip(r + float(rng.normal((), 0.0, 1.0)), r_lo, r_hi))
        offset = np.array([r * math.cos(theta), r * math.sin(theta)])
        # clipping near a frame edge can drag the distractor onto the target;
        # mirror the offset in that case, and as a last resort step toward the
        # frame middle, where there is always room at the minimum distance
        for candidate_offset in (offset, -offset):
            p = np.clip(target_centers[t] + candidate_offset, margin, e - margin)
            if np.hypot(*(p - target_centers[t])) >= r_lo:
                break
        else:
            inward = mid - target_centers[t]
            norm = np.hypot(*inward)
            inward = inward / norm if norm > 1e-9 else np.array([1.0, 0.0])
            p = np.clip(target_centers[t] + r_lo * inward, margin, e - margin)
        pos[t] = p
    return pos


def _background(spec, rng):
    """Smooth low-frequency color field."""
    cells = 8
    low = rng.uniform((cells, cells, 3), 0.25, 0.55)
    img = Image.fromarray((low * 255).astype(np.uint8))
    img = img.resize((spec.extent, spec.extent), Image.BILINEAR)
    return np.asarray(img).astype(np.float64).transpose(2, 0, 1) / 255.0


def _draw_disc(frame, center, radius, color):
    """Antialiased filled disc with slight radial shading, drawn in place."""
    _, h, w = frame.shape
    ys, xs = np.mgrid[0:h, 0:w]
    d = np.sqrt((xs - center[0]) ** 2 + (ys - center[1]) ** 2)
    mask = np.clip(radius + 0.5 - d, 0.0, 1.0)
    shade = 0.75 + 0.25 * np.clip(1.0 - d / max(radius, 1e-6), 0.0, 1.0)
    for c in range(3):
        frame[c] = frame[c] * (1 - mask) + color[c] * shade * mask


def _quantize(frames):
    return np.clip(np.round(np.asarray(frames) * 255.0), 0, 255).astype(np.uint8)


def generate_sequence(spec, seed, name="sequence"):
    """Render one deterministic sequence from (spec, seed)."""
    rng = Rng(seed, ("scene",))
    f, e = spec.length, spec.extent
    background = _background(spec, rng.child("background"))
    target_color = rng.child("target").uniform((3,), 0.7, 1.0)
    # drift endpoint sits at the far edge of each channel's bright band, and one
    # channel dives all the way into the dark band: that channel sweeps a wide
    # range, so looks a handful of frames apart are clearly told apart, while
    # the other two keep the disc bright against the mid-grey background
    drift_rng = rng.child("drift")
    drift_to = np.where(target_color < 0.85,
                        drift_rng.uniform((3,), 0.95, 1.0),
                        drift_rng.uniform((3,), 0.70, 0.75))
    deep = int(drift_rng.child("deep").integers(0, 3))
    drift_to[deep] = float(drift_rng.child("deep_to").uniform((), 0.05, 0.25))

    def color_at(t):
        if not spec.color_drift or f <= 1:
            return target_color
        return target_color + (drift_to - target_color) * (t / (f - 1))

    radius = spec.target_size / 2

    centers = _trajectory(spec, rng.child("trajectory"))
    dis_centers, dis_colors, dis_radii = [], [], []
    for d in range(spec.distractors):
        drng = rng.child("distractor", d)
        if spec.distractor_orbit:
            dis_centers.append(_orbit_trajectory(spec, centers, drng.child("orbit")))
        else:
            dspec = SceneSpec(extent=e, length=f, motion=spec.motion, target_size=spec.target_size,
                              speed=spec.speed, noise=0.0)
            dis_centers.append(_trajectory(dspec, drng.child("trajectory")))
        sim = spec.distractor_similarity
        if spec.distractor_lag > 0 and spec.color_drift and sim >= 1.0:
            # a lagged twin: it wears the target's own look from lag frames away,
            # so only a fresh appearance memory separates the two; the random
            # sign keeps "closer to the old look" from working as an identity rule
            lag = spec.distractor_lag
            if float(drng.child("sign").uniform(())) < 0.5:
                lag = -lag
            dis_colors.append(np.stack(
                [color_at(min(f - 1, max(0, t - lag))) for t in range(f)]))
        else:
            static = sim * target_color + (1 - sim) * drng.child("color").uniform((3,), 0.4, 1.0)
            dis_colors.append(np.tile(static, (f, 1)))
        dis_radii.append(radius * (1.0 if sim >= 1.0 else float(drng.child("size").uniform((), 0.85, 1.15))))

    noise_rng = rng.child("noise")
    rgb_clean = np.zeros((f, 3, e, e))
    occluded = np.zeros(f, dtype=bool)
    corrupted = np.zeros(f, dtype=bool)
    for t in range(f):
        frame = background.copy()
        for d in range(spec.distractors):
            _draw_disc(frame, dis_centers[d][t], dis_radii[d], dis_colors[d][t])
        occluded[t] = _in_window(t, spec.occlusion_windows)
        if not occluded[t]:
            _draw_disc(frame, centers[t], radius, color_at(t))
        if spec.noise > 0:
            frame = frame + noise_rng.uniform((3, e, e), -spec.noise, spec.noise)
        rgb_clean[t] = np.clip(frame, 0.0, 1.0)

    aux = None
    if spec.modality != "none":
        aux = np.zeros((f, 3, e, e))
        ys, xs = np.mgrid[0:e, 0:e]
        aux_noise = rng.child("aux_noise")
        for t in range(f):
            d = np.sqrt((xs - centers[t][0]) ** 2 + (ys - centers[t][1]) ** 2)
            if spec.modality == "depth":
                chan = 1.0 / (1.0 + d / max(spec.target_size, 1e-6))
            elif spec.modality == "thermal":
                chan = 0.1 + 0.9 * np.exp(-d * d / (2 * radius * radius))
            else:  # event: thresholded inter-frame difference, pre-corruption
                if t == 0:
                    chan = np.zeros((e, e))
                else:
                    diff = np.abs(rgb_clean[t] - rgb_clean[t - 1]).mean(axis=0)
                    chan = np.clip((diff - 0.1) * 4.0, 0.0, 1.0)
            if spec.noise > 0:
                chan = chan + aux_noise.uniform((e, e), -spec.noise / 2, spec.noise / 2)
            aux[t] = np.clip(chan, 0.0, 1.0)[None, :, :]

    rgb = rgb_clean.copy()
    for t in range(f):
        corrupted[t] = _in_window(t, spec.corruption_windows)
        if corrupted[t]:
            rgb[t] *= 0.05

    boxes = np.stack([
        np.array([centers[t][0] - radius, centers[t][1] - radius, 2 * radius, 2 * radius])
        for t in range(f)
    ])
    return SyntheticSequence(spec=spec, seed=seed, rgb=_quantize(rgb),
                             aux=_quantize(aux) if aux is not None else None,
                             boxes=boxes, occluded=occluded, corrupted=corrupted, name=name)


# ---------------------------------------------------------------------------
# crops

@dataclass
class CropMapping:
    """Affine frame<->crop coordinate mapping (same scale on both axes)."""

    x0: float
    y0: float
    scale: float   # frame pixels per crop pixel

    def to_crop(self, box):
        return BoundingBox((box.x_min - self.x0) / self.scale, (box.y_min - self.y0) / self.scale,
                           box.width / self.scale, box.height / self.scale)

    def to_frame(self, box):
        return BoundingBox(box.x_min * self.scale + self.x0, box.y_min * self.scale + self.y0,
                           box.width * self.scale, box.height * self.scale)


def crop_region(frame, box, area_factor, out_size):
    """Square crop around a box, bilinear-resampled to out_size.

    The side is area_factor * sqrt(w*h); samples beyond the frame replicate
    edge pixels. Returns (crop (3, out, out) float in [0, 1], CropMapping).
    """
    if box.width <= 0 or box.height <= 0:
        raise ValueError(f"cannot crop around a zero-area box {box}")
    arr = np.asarray(frame)
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float64) / 255.0
    _, h, w = arr.shape
    side = max(2.0, area_factor * math.sqrt(box.width * box.height))
    cx, cy = box.center
    x0, y0 = cx - side / 2, cy - side / 2
    scale = side / out_size

    coords = (np.arange(out_size) + 0.5) * scale - 0.5
    xs, ys = x0 + coords, y0 + coords
    ix = np.floor(xs).astype(int)
    iy = np.floor(ys).astype(int)
    fx, fy = xs - ix, ys - iy
    ix0, ix1 = np.clip(ix, 0, w - 1), np.clip(ix + 1, 0, w - 1)
    iy0, iy1 = np.clip(iy, 0, h - 1), np.clip(iy + 1, 0, h - 1)
    top = arr[:, iy0[:, None], ix0[None, :]] * (1 - fx) + arr[:, iy0[:, None], ix1[None, :]] * fx
    bot = arr[:, iy1[:, None], ix0[None, :]] * (1 - fx) + arr[:, iy1[:, None], ix1[None, :]] * fx
    crop = top * (1 - fy[:, None]) + bot * (fy[:, None])
    return crop, CropMapping(x0=x0, y0=y0, scale=scale)


# ---------------------------------------------------------------------------
# clip sampling

def sample_clip(n_frames, k, n, sample_range, rng):
    """k reference + n search frame indices, ascending, refs earliest.

    Indices are distinct and drawn from one uniformly placed window of
    width min(sample_range, n_frames).
    """
    total = k + n
    if n_frames < total:
        raise ValueError(f"sequence of {n_frames} frames cannot yield a {k}+{n} clip")
    window = min(sample_range, n_frames)
    if window < total:
        raise ValueError(f"sample range {sample_range} below clip size {total}")
    start = int(rng.integers(0, n_frames - window + 1))
    picks = np.sort(rng.choice(window, total)) + start
    return [int(i) for i in picks[:k]], [int(i) for i in picks[k:]]


# ---------------------------------------------------------------------------
# disk format: PNG frames plus a JSON-lines manifest

def _save_png(path, chw_uint8):
    Image.fromarray(chw_uint8.transpose(1, 2, 0)).save(path)


def _load_png(path):
    return np.asarray(Image.open(path)).transpose(2, 0, 1)


def write_sequence(seq, out_dir):
    """Write frames and sequence.jsonl under out_dir; returns the manifest path."""
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    manifest = out / "sequence.jsonl"
    lines = [json.dumps({
        "type": "meta", "name": seq.name, "extent": seq.spec.extent, "length": seq.length,
        "modality": seq.spec.modality, "motion": seq.spec.motion, "seed": seq.seed,
    }, sort_keys=True)]
    for t in range(seq.length):
        rgb_rel = f"frames/rgb_{t:04d}.png"
        _save_png(out / rgb_rel, seq.rgb[t])
        aux_rel = None
        if seq.aux is not None:
            aux_rel = f"frames/aux_{t:04d}.png"
            _save_png(out / aux_rel, seq.aux[t])
        lines.append(json.dumps({
            "frame": t, "rgb": rgb_rel, "aux": aux_rel,
            "box": [float(v) for v in seq.boxes[t]],
            "occluded": bool(seq.occluded[t]), "corrupted": bool(seq.corrupted[t]),
        }, sort_keys=True))
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


@dataclass
class LoadedSequence:
    name: str
    meta: dict
    rgb: np.ndarray
    aux: np.ndarray
    boxes: np.ndarray
    occluded: np.ndarray
    corrupted: np.ndarray

    @property
    def length(self):
        return self.rgb.shape[0]

    def box(self, t):
        x, y, w, h = self.boxes[t]
        return BoundingBox(float(x), float(y), float(w), float(h))


def load_sequence(manifest_path):
    """Read a sequence back from its manifest (file or containing directory)."""
    path = Path(manifest_path)
    if path.is_dir():
        path = path / "sequence.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"no manifest at {path}")
    root = path.parent
    meta = {}
    rgb, aux, boxes, occluded, corrupted = [], [], [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec.get("type") == "meta":
                meta = rec
                continue
            rgb.append(_load_png(root / rec["rgb"]))
            aux.append(_load_png(root / rec["aux"]) if rec.get("aux") else None)
            boxes.append(rec["box"])
            occluded.append(rec.get("occluded", False))
            corrupted.append(rec.get("corrupted", False))
    if not rgb:
        raise ValueError(f"manifest {path} lists no frames")
    aux_arr = None if aux[0] is None else np.stack(aux)
    return LoadedSequence(name=meta.get("name", root.name), meta=meta, rgb=np.stack(rgb),
                          aux=aux_arr, boxes=np.asarray(boxes, dtype=float),
                          occluded=np.asarray(occluded, dtype=bool),
                          corrupted=np.asarray(corrupted, dtype=bool))


# ---------------------------------------------------------------------------
# suite recipes

SUITE_KINDS = ("train", "eval", "occlusion", "corruption")


def suite_spec(kind, index, rng, modality="none", extent=64, length=60):
    """SceneSpec for sequence `index` of a named suite.

    train mixes difficulty (identical distractors, occlusions, and for
    auxiliary modalities RGB-corruption windows); eval is moderate; the
    occlusion and corruption suites stress exactly those failure modes.
    """
    if kind not in SUITE_KINDS:
        raise ValueError(f"unknown suite kind {kind!r}, expected one of {SUITE_KINDS}")
    srng = rng.child(kind, index)
    motion = "linear" if index % 2 == 0 else "sinusoidal"
    speed = float(srng.child("speed").uniform((), 0.6, 1.4))
    size = float(srng.child("size").uniform((), 10.0, 14.0))
    wrng = srng.child("windows")

    def windows(count, width_lo, width_hi, first_lo=8):
        out = []
        t = first_lo
        for _ in range(count):
            width = int(wrng.integers(width_lo, width_hi + 1))
            gap = int(wrng.integers(6, 14))
            start = t + gap
            if start + width > length - 2:
                break
            out.append((start, start + width))
            t = start + width
        return out

    spec = dict(extent=extent, length=length, motion=motion, speed=speed,
                target_size=size, modality=modality, noise=0.02)
    twin = dict(distractors=1, distractor_similarity=1.0, distractor_orbit=True,
                color_drift=True, distractor_lag=20)
    if kind == "train":
        variant = index % 3
        if variant == 0:
            spec.update(**twin)
        elif variant == 1:
            # windows sit late enough that a clip exiting one still has room
            # for references well before it
            spec.update(speed=float(srng.child("fast").uniform((), 1.2, 1.8)),
                        occlusion_windows=windows(2, 3, 6, first_lo=16), **twin)
        else:
            spec.update(distractors=1, distractor_similarity=0.5)
        if modality != "none" and index % 2 == 0:
            spec.update(corruption_windows=windows(2, 8, 12))
    elif kind == "eval":
        spec.update(distractors=1, distractor_similarity=0.5)
    elif kind == "occlusion":
        spec.update(speed=float(srng.child("fast").uniform((), 1.2, 1.8)),
                    occlusion_windows=windows(2, 4, 7), **twin)
    else:  # corruption
        spec.update(distractors=1, distractor_similarity=0.5, corruption_windows=windows(2, 9, 13))
    return SceneSpec(**spec)


def generate_suite(out_root, kind, count, seed, modality="none", extent=64, length=60):
    """Write `count` sequences of a suite under out_root/seq_XXX; returns paths."""
    rng = Rng(seed, ("suite", kind, modality))
    root = Path(out_root)
    root.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        spec = suite_spec(kind, i, rng, modality=modality, extent=extent, length=length)
        seq_seed = int(rng.child("seed", i).integers(0, 2 ** 31))
        seq = generate_sequence(spec, seq_seed, name=f"seq_{i:03d}")
        paths.append(write_sequence(seq, root / f"seq_{i:03d}"))
    return paths
