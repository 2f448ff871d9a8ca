"""Configuration dataclasses and the flat key=value config-file format."""

import dataclasses
from dataclasses import dataclass, field


@dataclass
class ModelConfig:
    dim: int = 64                  # token width D
    heads: int = 4
    layers: int = 4                # encoder depth M
    mlp_ratio: int = 4
    patch: int = 8
    ref_size: int = 32             # reference crop extent in pixels
    search_size: int = 64          # search crop extent in pixels
    n_tok: int = 1                 # temporal tokens per stream
    attn: str = "concat"           # concat | separate
    gmp_layers: int = 3
    gmp_heads: int = 4
    frame_embed: bool = True       # per-reference-frame index embedding
    dtype: str = "f8"              # f8 | f4

    def __post_init__(self):
        if self.attn not in ("concat", "separate"):
            raise ValueError(f"attn must be concat or separate, got {self.attn!r}")
        if self.dtype not in ("f8", "f4"):
            raise ValueError(f"dtype must be f8 or f4, got {self.dtype!r}")
        if self.ref_size % self.patch or self.search_size % self.patch:
            raise ValueError(f"crop extents ({self.ref_size}, {self.search_size}) must divide by patch {self.patch}")
        if self.dim % self.heads or self.dim % self.gmp_heads:
            raise ValueError(f"dim {self.dim} must divide by heads {self.heads}/{self.gmp_heads}")

    @property
    def ref_tokens(self):
        return (self.ref_size // self.patch) ** 2

    @property
    def search_tokens(self):
        return (self.search_size // self.patch) ** 2


@dataclass
class TrainConfig:
    tasks: list = field(default_factory=lambda: ["rgb"])
    epochs: int = 10
    clips_per_epoch: int = 2000
    batch_size: int = 8
    lr_backbone: float = 1e-4      # encoder + tokenizer group
    lr_rest: float = 1e-3          # times-10 group: heads, gates, perceiver
    weight_decay: float = 1e-4
    lr_drop_epoch: int = 7         # multiply both rates by 0.1 from this epoch on
    warmup_steps: int = 100
    grad_clip: float = 1.0
    k_refs: int = 3                # reference frames per clip
    n_search: int = 2              # search frames per clip
    sample_range: int = 400        # temporal window for clip sampling
    ref_gap: int = 20              # min age of sampled refs vs the search block (0 = off)
    jitter_center: float = 0.25    # search-crop center jitter, fraction of box side
    jitter_center_wide: float = 2.0  # large center jitter for frames after the first (recovery regime)
    jitter_wide_prob: float = 0.5    # chance a later search crop uses the wide jitter
    color_loss_weight: float = 2.0   # weight of the token appearance anchor (0 = off)
    ref_blank_prob: float = 0.2      # chance a clip's references are blanked to noise
    occlusion_clip_prob: float = 0.35  # chance of preferring a clip that exits an occlusion
    jitter_scale: float = 0.35     # log-uniform scale jitter bound
    seed: int = 0


@dataclass
class TrackerConfig:
    memory_capacity: int = 16
    k_refs: int = 3
    ref_area_factor: float = 2.0
    search_area_factor: float = 5.0
    cosine_window: bool = False    # experimentation only, off by default
    propagate_token: bool = True


TASKS = ("rgb", "rgbd", "rgbt", "rgbe")
AUX_OF_TASK = {"rgb": None, "rgbd": "depth", "rgbt": "thermal", "rgbe": "event"}


def parse_kv_file(path):
    """Read a flat key=value file; '#' starts a comment, blank lines skipped."""
    raw = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            raw[key.strip()] = value.strip()
    return raw


def _coerce(text, ftype):
    if ftype is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if ftype is int:
        return int(text)
    if ftype is float:
        return float(text)
    if ftype is list:
        return [item.strip() for item in text.split(",") if item.strip()]
    return text


def apply_overrides(cfg, raw):
    """Apply key=value overrides to a dataclass instance, with type coercion.

    Unknown keys raise so config typos fail loudly instead of training with
    defaults.
    """
    fields = {f.name: f for f in dataclasses.fields(cfg)}
    for key, text in raw.items():
        if key not in fields:
            raise ValueError(f"unknown config key {key!r} for {type(cfg).__name__}")
        current = getattr(cfg, key)
        ftype = type(current) if current is not None else str
        setattr(cfg, key, _coerce(text, ftype))
    if hasattr(cfg, "__post_init__"):
        cfg.__post_init__()
    return cfg


def split_overrides(raw, *cfgs):
    """Route a mixed key=value dict onto several dataclasses by field name."""
    owners = {}
    for cfg in cfgs:
        for f in dataclasses.fields(cfg):
            owners.setdefault(f.name, cfg)
    unknown = [k for k in raw if k not in owners]
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    for cfg in cfgs:
        mine = {k: v for k, v in raw.items() if owners[k] is cfg}
        apply_overrides(cfg, mine)
    return cfgs


def config_dict(*cfgs):
    """Flat dict of every field of every config, for checkpoint embedding."""
    out = {}
    for cfg in cfgs:
        for f in dataclasses.fields(cfg):
            out[f.name] = getattr(cfg, f.name)
    return out
