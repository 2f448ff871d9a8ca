"""Frame-by-frame inference: reference memory, token propagation, decoding.

The reference memory holds resized template crops. Entry 0 is the initial
ground-truth crop and is never evicted; when the memory overflows, the
oldest non-initial entry leaves. Each step picks k references at equal
temporal intervals over the memory, crops the search region around the
last box, runs one forward pass, decodes the peak into frame coordinates,
appends the new crop to memory and advances the temporal tokens.
"""

from dataclasses import dataclass, field

import numpy as np

from .boxes import BoundingBox
from .config import TrackerConfig
from .heads import cosine_window, decode_box
from .synth import crop_region


def select_references(memory_len, k):
    """Equal-interval memory indices; short memories repeat the first entry."""
    if memory_len <= 0:
        raise ValueError("empty reference memory")
    if memory_len <= k:
        pad = [0] * (k - memory_len)
        return pad + list(range(memory_len))
    if k == 1:
        return [memory_len - 1]
    return [round(i * (memory_len - 1) / (k - 1)) for i in range(k)]


@dataclass
class MemoryEntry:
    rgb: np.ndarray          # (3, ref, ref) template crop
    aux: np.ndarray          # matching aux crop, or None
    frame_idx: int
    initial: bool = False


@dataclass
class TrackState:
    mode: str
    cfg: TrackerConfig
    memory: list
    last_box: BoundingBox
    token_rgb: np.ndarray = None    # propagated content, None before first step
    token_aux: np.ndarray = None
    frame_count: int = 1
    results: list = field(default_factory=list)


def _template(frame_rgb, frame_aux, box, cfg, model_cfg):
    rgb_crop, _ = crop_region(frame_rgb, box, cfg.ref_area_factor, model_cfg.ref_size)
    aux_crop = None
    if frame_aux is not None:
        aux_crop, _ = crop_region(frame_aux, box, cfg.ref_area_factor, model_cfg.ref_size)
    return rgb_crop, aux_crop


def init_track(model, frame_rgb, box, mode, cfg=None, frame_aux=None):
    """Start a track from the ground-truth box of the first frame."""
    cfg = cfg or TrackerConfig()
    if mode == "dual" and frame_aux is None:
        raise ValueError("dual mode needs an auxiliary first frame")
    rgb_crop, aux_crop = _template(frame_rgb, frame_aux, box, cfg, model.cfg)
    entry = MemoryEntry(rgb=rgb_crop, aux=aux_crop, frame_idx=0, initial=True)
    state = TrackState(mode=mode, cfg=cfg, memory=[entry], last_box=box)
    state.results.append((box, 1.0))
    return state


def track_step(model, state, frame_rgb, frame_aux=None):
    """Process one frame; returns (box, score) in frame coordinates."""
    cfg = state.cfg
    if state.mode == "dual" and frame_aux is None:
        raise ValueError("dual mode needs the auxiliary frame")
    picks = select_references(len(state.memory), cfg.k_refs)
    refs_rgb = [state.memory[i].rgb for i in picks]
    refs_aux = [state.memory[i].aux for i in picks] if state.mode == "dual" else None

    search_rgb, mapping = crop_region(frame_rgb, state.last_box, cfg.search_area_factor, model.cfg.search_size)
    search_aux = None
    if state.mode == "dual":
        search_aux, _ = crop_region(frame_aux, state.last_box, cfg.search_area_factor, model.cfg.search_size)

    token_rgb = state.token_rgb if cfg.propagate_token else None
    token_aux = state.token_aux if cfg.propagate_token else None
    out = model.forward_frame(refs_rgb, search_rgb, state.mode, ref_aux=refs_aux, search_aux=search_aux,
                              token_rgb=token_rgb, token_aux=token_aux)

    if cfg.cosine_window:
        win = cosine_window(*out.maps.score.data.shape[1:])
        out.maps.score.data = out.maps.score.data * win
    if not np.all(np.isfinite(out.maps.score.data)):
        raise FloatingPointError(f"non-finite score map at frame {state.frame_count}")
    crop_box, score = decode_box(out.maps, model.cfg.patch, model.cfg.search_size)
    box = mapping.to_frame(crop_box)
    h, w = frame_rgb.shape[-2:]
    box = box.clipped(w, h)

    # advance the propagated state: output content plus the empty token
    if cfg.propagate_token:
        state.token_rgb = out.token_rgb.data + model.empty_token()
        state.token_aux = out.token_aux.data + model.empty_token() if out.token_aux is not None else None

    rgb_crop, aux_crop = _template(frame_rgb, frame_aux, box, cfg, model.cfg)
    state.memory.append(MemoryEntry(rgb=rgb_crop, aux=aux_crop, frame_idx=state.frame_count))
    if len(state.memory) > cfg.memory_capacity:
        state.memory.pop(1)  # oldest non-initial entry; entry 0 stays forever

    state.last_box = box
    state.frame_count += 1
    state.results.append((box, score))
    return box, score


def track_sequence(model, seq, mode, cfg=None):
    """Run a whole sequence from its first ground-truth box.

    seq needs .rgb (F, 3, H, W), .aux (or None) and .box(t). Returns a list
    of (BoundingBox, score), one per frame, the first being the init box.
    """
    cfg = cfg or TrackerConfig()
    aux0 = seq.aux[0] if (mode == "dual" and seq.aux is not None) else None
    if mode == "dual" and aux0 is None:
        raise ValueError("sequence has no auxiliary stream but dual mode was requested")
    state = init_track(model, seq.rgb[0], seq.box(0), mode, cfg=cfg, frame_aux=aux0)
    for t in range(1, seq.length):
        aux_t = seq.aux[t] if mode == "dual" else None
        track_step(model, state, seq.rgb[t], frame_aux=aux_t)
    return state.results
