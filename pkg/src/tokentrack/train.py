"""One-shot training over a task mix, single-threaded and deterministic.

Each step accumulates gradients over a batch of clips, cycling tasks
round-robin (1:1:1 weighting). A clip is k reference frames plus n search
frames drawn ascending from one temporal window; search frames run
sequentially with the temporal token propagated (and backpropagated)
across them. Crops during training jitter around the ground truth so the
model tolerates the off-center crops inference produces.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor, add, backward, mul, sub, tsum
from .boxes import BoundingBox
from .config import AUX_OF_TASK, TrainConfig
from .losses import clip_loss, make_frame_target
from .optim import AdamW, clip_grad_norm, lr_scale
from .synth import crop_region, sample_clip


@dataclass
class TrainLog:
    step_losses: list = field(default_factory=list)
    epoch_means: list = field(default_factory=list)

    def moving_average(self, window=20):
        if not self.step_losses:
            return []
        out = []
        for i in range(len(self.step_losses)):
            lo = max(0, i - window + 1)
            chunk = self.step_losses[lo:i + 1]
            out.append(sum(chunk) / len(chunk))
        return out


def jitter_box(box, rng, center_frac, scale_bound):
    """Random center shift and log-scale perturbation of a gt box."""
    side = math.sqrt(max(box.width * box.height, 1e-6))
    dx = float(rng.uniform((), -center_frac, center_frac)) * side
    dy = float(rng.uniform((), -center_frac, center_frac)) * side
    s = math.exp(float(rng.uniform((), -scale_bound, scale_bound)))
    cx, cy = box.center
    w, h = box.width * s, box.height * s
    return BoundingBox(cx + dx - w / 2, cy + dy - h / 2, w, h)


def box_mean_color(crop, box):
    """Mean color of a crop inside a box (crop pixel coords), or None if empty."""
    arr = np.asarray(crop)
    _, h, w = arr.shape
    x0, y0 = max(0, int(round(box.x_min))), max(0, int(round(box.y_min)))
    x1 = min(w, int(round(box.x_min + box.width)))
    y1 = min(h, int(round(box.y_min + box.height)))
    if x1 <= x0 or y1 <= y0:
        return None
    return arr[:, y0:y1, x0:x1].reshape(arr.shape[0], -1).mean(axis=1)


def token_color_loss(model, outputs, colors):
    """Anchor each frame's outgoing token to the target's current mean color.

    The propagated token is only worth reading if it reliably carries what
    the target looks like right now; this readout gives the writing side a
    direct training signal instead of waiting for one to emerge. Frames
    whose color is unknown (occluded target) pass None and are skipped.
    """
    terms = []
    for out, color in zip(outputs, colors):
        if color is None:
            continue
        want = Tensor(np.asarray(color, dtype=model.np_dtype)[None, :])
        err = sub(model.token_probe(out.token_rgb), want)
        terms.append(tsum(mul(err, err)))
    if not terms:
        return None
    total = terms[0]
    for term in terms[1:]:
        total = add(total, term)
    return mul(total, 1.0 / len(terms))


def build_clip(model, seq, task, cfg, rng):
    """Sample and crop one training clip from a sequence.

    Returns (ref_rgb, searches_rgb, ref_aux, searches_aux, targets, colors)
    where targets are per-search-frame ground truths in crop coordinates and
    colors are per-search-frame mean target colors (None when occluded).
    """
    aux_mod = AUX_OF_TASK[task]
    crng = rng.child("clip")
    if cfg.ref_gap > 0 and seq.length > cfg.ref_gap + cfg.n_search:
        # consecutive search frames with references at least ref_gap frames
        # older: when appearance moves over a sequence, recent looks can then
        # only reach the search frames through the propagated token, which
        # gives the token something references cannot already provide
        occ = getattr(seq, "occluded", None)
        exits = []
        if occ is not None:
            # frames where an occlusion ends: the frame itself is hidden, the
            # next one visible again; starting a clip there exercises carrying
            # identity across the blackout
            exits = [t for t in range(cfg.ref_gap + 1, seq.length - cfg.n_search)
                     if occ[t] and not occ[t + 1]]
        if exits and float(crng.child("occ").uniform(())) < cfg.occlusion_clip_prob:
            s = exits[int(crng.child("pick").integers(0, len(exits)))]
        else:
            s = int(crng.child("start").integers(cfg.ref_gap + 1, seq.length - cfg.n_search + 1))
        search_idx = list(range(s, s + cfg.n_search))
        pool = s - cfg.ref_gap
        extra = [int(v) for v in crng.child("refs").integers(0, pool, (cfg.k_refs - 1,))]
        refs_idx = [0] + sorted(extra)
    else:
        refs_idx, search_idx = sample_clip(seq.length, cfg.k_refs, cfg.n_search, cfg.sample_range, crng)
        # inference always keeps the initial ground-truth crop in its memory, so
        # train with the same distribution: the oldest reference is frame 0
        refs_idx = [0] + list(refs_idx[1:])
    jrng = rng.child("jitter")
    grid = model.cfg.search_size // model.cfg.patch

    # occasionally hand the model references that carry no identity at all, so
    # the propagated token is the only way to know which object to follow
    blank_refs = (cfg.ref_blank_prob > 0
                  and float(crng.child("blank").uniform(())) < cfg.ref_blank_prob)
    ref_rgb, ref_aux = [], []
    for i, t in enumerate(refs_idx):
        jbox = jitter_box(seq.box(t), jrng.child("ref", i), 0.05, 0.1)
        crop, _ = crop_region(seq.rgb[t], jbox, 2.0, model.cfg.ref_size)
        if blank_refs:
            crop = jrng.child("blankpix", i).uniform(crop.shape, 0.25, 0.55)
        ref_rgb.append(crop)
        if aux_mod is not None:
            aux_crop, _ = crop_region(seq.aux[t], jbox, 2.0, model.cfg.ref_size)
            if blank_refs:
                aux_crop = jrng.child("blankaux", i).uniform(aux_crop.shape, 0.25, 0.55)
            ref_aux.append(aux_crop)

    occluded = getattr(seq, "occluded", None)
    searches_rgb, searches_aux, targets, colors = [], [], [], []
    for i, t in enumerate(search_idx):
        gt = seq.box(t)
        # two crop regimes: the first frame is roughly centered (tracking is
        # going fine, and whatever gets written into the token comes from a
        # clean look at the target); later frames are sometimes far off-center
        # so position alone cannot name the target there
        srng = jrng.child("search", i)
        frac = cfg.jitter_center
        if (i > 0 and cfg.jitter_wide_prob > 0
                and float(srng.child("wide").uniform(())) < cfg.jitter_wide_prob):
            frac = cfg.jitter_center_wide
        jbox = jitter_box(gt, srng, frac, cfg.jitter_scale)
        crop, mapping = crop_region(seq.rgb[t], jbox, 5.0, model.cfg.search_size)
        searches_rgb.append(crop)
        if aux_mod is not None:
            aux_crop, _ = crop_region(seq.aux[t], jbox, 5.0, model.cfg.search_size)
            searches_aux.append(aux_crop)
        gt_crop = mapping.to_crop(gt)
        hidden = occluded is not None and bool(occluded[t])
        # hidden frames stay in the clip so the token must be carried across
        # them, but an invisible target provides no meaningful box supervision
        if hidden:
            targets.append(None)
            colors.append(None)
        else:
            targets.append(make_frame_target(gt_crop, model.cfg.patch, grid, grid, model.cfg.search_size))
            colors.append(box_mean_color(crop, gt_crop))
    if all(t is None for t in targets):
        targets[-1] = make_frame_target(mapping.to_crop(seq.box(search_idx[-1])),
                                        model.cfg.patch, grid, grid, model.cfg.search_size)
    if aux_mod is None:
        ref_aux, searches_aux = None, None
    return ref_rgb, searches_rgb, ref_aux, searches_aux, targets, colors


def clip_objective(model, seq, task, cfg, rng):
    """Forward one clip and return (objective Tensor, parts dict)."""
    ref_rgb, searches_rgb, ref_aux, searches_aux, targets, colors = build_clip(model, seq, task, cfg, rng)
    mode = "rgb_only" if AUX_OF_TASK[task] is None else "dual"
    outputs = model.forward_clip(ref_rgb, searches_rgb, mode, ref_aux=ref_aux, searches_aux=searches_aux)
    maps = [o.maps for o in outputs]
    total, parts = clip_loss(maps, targets, model.cfg.patch, model.cfg.search_size)
    anchor = token_color_loss(model, outputs, colors) if cfg.color_loss_weight > 0 else None
    if anchor is not None:
        total = add(total, mul(anchor, cfg.color_loss_weight))
        parts = dict(parts, color=float(anchor.data))
    parts["objective"] = float(total.data)
    return total, parts


def build_optimizer(model, cfg):
    backbone, rest = model.param_groups()
    return AdamW(
        [
            {"params": [p for _, p in backbone], "lr": cfg.lr_backbone},
            {"params": [p for _, p in rest], "lr": cfg.lr_rest},
        ],
        weight_decay=cfg.weight_decay,
    )


def train_one_shot(model, data_by_task, cfg: TrainConfig, rng, progress=None):
    """Train a single parameter set over all of cfg.tasks at once.

    data_by_task maps task name to a list of sequences (anything exposing
    .rgb/.aux/.boxes/.box/.length). Returns a TrainLog. All sampling comes
    from `rng`, so two identical invocations produce identical parameters.
    """
    for task in cfg.tasks:
        if task not in data_by_task or not data_by_task[task]:
            raise ValueError(f"no training data for task {task!r}")
        if AUX_OF_TASK[task] is not None:
            missing = [s.name for s in data_by_task[task] if s.aux is None]
            if missing:
                raise ValueError(f"task {task!r} needs auxiliary frames, missing in {missing[:3]}")

    optimizer = build_optimizer(model, cfg)
    log = TrainLog()
    steps_per_epoch = max(1, cfg.clips_per_epoch // cfg.batch_size)
    clip_counter = 0
    global_step = 0
    for epoch in range(cfg.epochs):
        epoch_losses = []
        for _ in range(steps_per_epoch):
            optimizer.zero_grad()
            step_loss = 0.0
            for _ in range(cfg.batch_size):
                task = cfg.tasks[clip_counter % len(cfg.tasks)]
                seqs = data_by_task[task]
                crng = rng.child("clip", clip_counter)
                seq = seqs[int(crng.integers(0, len(seqs)))]
                with Tape():
                    loss, parts = clip_objective(model, seq, task, cfg, crng)
                    if not math.isfinite(parts["objective"]):
                        raise FloatingPointError(
                            f"non-finite loss at clip {clip_counter} (task {task!r}, "
                            f"rng path {crng.path!r}, sequence {seq.name!r})")
                    scaled = loss * (1.0 / cfg.batch_size)
                    backward(scaled)
                step_loss += parts["total"] / cfg.batch_size
                clip_counter += 1
            clip_grad_norm(model.parameters(), cfg.grad_clip)
            optimizer.step(lr_scale(global_step, epoch, cfg.warmup_steps, cfg.lr_drop_epoch))
            log.step_losses.append(step_loss)
            epoch_losses.append(step_loss)
            global_step += 1
            if progress is not None:
                progress(epoch, global_step, step_loss)
        log.epoch_means.append(sum(epoch_losses) / len(epoch_losses))
    return log
