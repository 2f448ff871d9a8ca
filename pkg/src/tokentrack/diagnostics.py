"""Self-checks exposed both to the test suite and the command line:
family-wise gradient verification and attention-oracle equivalence."""

import numpy as np

from .autodiff import Tensor, add, grad_check, mul
from .boxes import BoundingBox
from .config import ModelConfig
from .encoder import EncoderLayer, SegmentBounds
from .losses import clip_loss, make_frame_target
from .model import TrackModel
from .train import token_color_loss
from .oracle import reference_layer
from .rng import Rng

# name-prefix patterns defining the parameter families under test
FAMILY_PATTERNS = {
    "patch_embed": lambda n: n.startswith("tokenizer.") and ("kernel" in n or "bias" in n),
    "embeddings": lambda n: n.startswith("tokenizer.") and not ("kernel" in n or "bias" in n),
    "attn_qkv": lambda n: ".w" in n and n.startswith("encoder.layers.") and n.split(".")[-2] in ("wq", "wk", "wv"),
    "attn_proj": lambda n: n.startswith("encoder.layers.") and ".wo." in n,
    "layer_norm": lambda n: n.startswith("encoder.layers.") and (".ln1." in n or ".ln2." in n),
    "mlp": lambda n: n.startswith("encoder.layers.") and ".mlp." in n,
    "gate_sigma": lambda n: n.startswith("encoder.gates.") and ".sigma." in n,
    "gate_unit": lambda n: n.startswith("encoder.gates.") and ".gate." in n,
    "gmp": lambda n: n.startswith("gmp."),
    "head": lambda n: n.startswith("head.") or n.startswith("token_probe."),
}


def _family_members(model):
    families = {name: [] for name in FAMILY_PATTERNS}
    for name, p in model.named_parameters():
        for fam, match in FAMILY_PATTERNS.items():
            if match(name):
                families[fam].append((name, p))
                break
        else:
            raise AssertionError(f"parameter {name} belongs to no family")
    return families


def gradcheck_families(cfg=None, seed=0, samples_per_family=50, eps=1e-5):
    """Max relative error per parameter family on a dual-stream clip loss.

    Parameters are nudged off their exact init first: zero-initialized
    gates have identically zero gradients at init, which is a degenerate
    point for relative-error comparison, not a bug.
    """
    cfg = cfg or ModelConfig()
    if cfg.dtype != "f8":
        raise ValueError("gradient checking requires the f8 configuration")
    rng = Rng(seed, ("gradcheck",))
    model = TrackModel(cfg, rng.child("model"))
    noise = rng.child("noise")
    for name, p in model.named_parameters():
        p.data = p.data + noise.child(name).normal(p.data.shape, std=0.05)

    drng = rng.child("data")
    k = 2
    refs_rgb = [drng.child("rr", i).uniform((3, cfg.ref_size, cfg.ref_size)) for i in range(k)]
    refs_aux = [drng.child("ra", i).uniform((3, cfg.ref_size, cfg.ref_size)) for i in range(k)]
    searches_rgb = [drng.child("sr", i).uniform((3, cfg.search_size, cfg.search_size)) for i in range(2)]
    searches_aux = [drng.child("sa", i).uniform((3, cfg.search_size, cfg.search_size)) for i in range(2)]
    grid = cfg.search_size // cfg.patch
    targets = []
    for i in range(2):
        b = 10.0 + 3.0 * i
        gt = BoundingBox(b, b + 2.0, 14.0, 12.0)
        targets.append(make_frame_target(gt, cfg.patch, grid, grid, cfg.search_size))

    colors = [drng.child("col", i).uniform((3,), 0.2, 0.9) for i in range(2)]

    def loss_fn():
        outs = model.forward_clip(refs_rgb, searches_rgb, "dual", ref_aux=refs_aux, searches_aux=searches_aux)
        total, _ = clip_loss([o.maps for o in outs], targets, cfg.patch, cfg.search_size)
        # the same composite the trainer optimizes, so every parameter
        # (the token readout included) receives a gradient
        anchor = token_color_loss(model, outs, colors)
        return add(total, mul(anchor, 2.0))

    families = _family_members(model)
    results = {}
    for fam, members in families.items():
        params = [p for _, p in members]
        if not params:
            raise AssertionError(f"family {fam} matched no parameters")
        per_param = max(1, samples_per_family // len(params) + 1)
        worst = grad_check(loss_fn, params, eps=eps, samples_per_param=per_param,
                           rng=rng.child("coords", fam))
        results[fam] = worst
    return results


def oracle_attention_cases(n_cases=100, seed=0, tolerance=1e-10):
    """Random-case equivalence of the fast attention paths vs naive loops.

    For every case the concatenated layer must match the dense oracle; in
    addition the separated layer's reference segment must equal a plain
    self-attention pass over the references alone. Returns (max_diff,
    per-case list).
    """
    rng = Rng(seed, ("oracle",))
    records = []
    worst = 0.0
    for case in range(n_cases):
        crng = rng.child("case", case)
        dim = int(crng.child("dim").choice(3, 1)[0])
        dim = (16, 32, 64)[dim]
        heads = int(crng.child("heads").choice(3, 1)[0])
        heads = (1, 2, 4)[heads]
        k = 1 + int(crng.child("k").integers(0, 3))
        n_tok = 1 + int(crng.child("ntok").integers(0, 2))
        # keep the joint length at or below 64
        n_ref = 2 + int(crng.child("nref").integers(0, 7))
        max_search = 64 - k * n_ref - n_tok
        n_search = max(1, min(max_search, 1 + int(crng.child("nsearch").integers(0, 16))))
        bounds = SegmentBounds(n_ref=n_ref, k=k, n_search=n_search, n_tok=n_tok)
        layer = EncoderLayer(crng.child("layer"), dim, heads, mlp_ratio=2)
        nrng = crng.child("noise")
        for name, p in layer.named_parameters():
            p.data = p.data + nrng.child(name).normal(p.data.shape, std=0.3)
        x = crng.child("x").normal((bounds.total, dim), std=1.0)

        fast_concat = layer(Tensor(x.copy()), bounds, "concat").data
        slow_concat = reference_layer(layer, x.copy(), heads, variant="concat")
        d1 = float(np.max(np.abs(fast_concat - slow_concat)))

        fast_sep = layer(Tensor(x.copy()), bounds, "separate").data
        slow_sep = reference_layer(layer, x.copy(), heads, variant="separate", bounds=bounds)
        d2 = float(np.max(np.abs(fast_sep - slow_sep)))

        # sub-pass (1): the reference rows of the separated layer equal a
        # plain self-attention layer run on the references alone
        refs_only = layer(Tensor(x[:bounds.refs].copy()), None, "concat").data
        d3 = float(np.max(np.abs(fast_sep[:bounds.refs] - refs_only)))

        case_worst = max(d1, d2, d3)
        worst = max(worst, case_worst)
        records.append({"case": case, "dim": dim, "heads": heads, "length": bounds.total,
                        "concat_diff": d1, "separate_diff": d2, "subpass_diff": d3,
                        "ok": case_worst <= tolerance})
    return worst, records
