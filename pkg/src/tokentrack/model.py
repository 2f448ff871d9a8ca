"""Full tracker model: tokenizer, joint encoder, fusion perceiver, box head.

One parameter set serves every task. rgb-only forwards skip the gates and
the perceiver entirely; dual-stream forwards run both modality streams
through the shared encoder, exchange information through the conditional
gates, and fuse for the head through the perceiver. The temporal token
that leaves a forward pass is the propagated state for the next frame;
advancing it adds the all-zero empty token, so propagation is exactly
state-preserving.
"""

import dataclasses
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ModelConfig, config_dict
from .encoder import SegmentBounds, TokenEncoder, split_output
from .fusion import GatedModalPerceiver, head_input
from .heads import CenterHead, tokens_to_grid
from .nn import DTYPES, Linear, Module
from .rng import Rng
from .tokenizer import Tokenizer, make_temporal_token

MODES = ("rgb_only", "dual")


@dataclass
class FrameOutput:
    maps: object            # HeadMaps over the search grid
    token_rgb: Tensor       # (n_tok, D) propagated state leaving this frame
    token_aux: Tensor       # None in rgb_only mode
    search_rgb: Tensor      # (N_s, D) encoder search features, rgb stream
    fused: Tensor           # perceiver output in dual mode, else None


class TrackModel(Module):
    def __init__(self, cfg: ModelConfig, rng: Rng):
        self.cfg = cfg
        self.np_dtype = DTYPES[cfg.dtype]
        self.tokenizer = Tokenizer(rng.child("tokenizer"), cfg, dtype=self.np_dtype)
        self.encoder = TokenEncoder(rng.child("encoder"), cfg, dtype=self.np_dtype)
        self.gmp = GatedModalPerceiver(rng.child("gmp"), cfg, dtype=self.np_dtype)
        self.head = CenterHead(rng.child("head"), cfg, dtype=self.np_dtype)
        # tiny readout used during training to anchor the propagated token to
        # the target's current appearance; inference never calls it
        self.token_probe = Linear(rng.child("token_probe"), cfg.dim, 3, dtype=self.np_dtype)

    # -- token lifecycle ----------------------------------------------------
    def fresh_token(self):
        return Tensor(make_temporal_token(self.cfg.n_tok, self.cfg.dim, self.np_dtype))

    def empty_token(self):
        """The additive update used when advancing the propagated state."""
        return make_temporal_token(self.cfg.n_tok, self.cfg.dim, self.np_dtype)

    def advance_token(self, token):
        """Next-frame token state: current state plus the empty token."""
        if isinstance(token, Tensor):
            return Tensor(token.data + self.empty_token())
        return np.asarray(token) + self.empty_token()

    # -- forward ------------------------------------------------------------
    def bounds(self, k):
        return SegmentBounds(n_ref=self.cfg.ref_tokens, k=k, n_search=self.cfg.search_tokens, n_tok=self.cfg.n_tok)

    def _assemble(self, ref_crops, search_crop, token, modality):
        parts = [
            self.tokenizer.embed_frame(crop, "reference", modality, frame_idx=i)
            for i, crop in enumerate(ref_crops)
        ]
        parts.append(self.tokenizer.embed_frame(search_crop, "search", modality))
        parts.append(self.tokenizer.token_input(token))
        return concat(parts, axis=0)

    def forward_frame(self, ref_rgb, search_rgb, mode, ref_aux=None, search_aux=None,
                      token_rgb=None, token_aux=None):
        """One search frame. Reference/search crops are (3, H, W) arrays.

        token_* carry the propagated state (content only); None means a
        fresh zero token.
        """
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")
        bounds = self.bounds(len(ref_rgb))
        if token_rgb is None:
            token_rgb = self.fresh_token()
        elif not isinstance(token_rgb, Tensor):
            token_rgb = Tensor(np.asarray(token_rgb, dtype=self.np_dtype))
        x = self._assemble(ref_rgb, search_rgb, token_rgb, "rgb")

        if mode == "rgb_only":
            out = self.encoder.forward_single(x, bounds, self.cfg.attn)
            _, search_feat, token_out = split_output(out, bounds)
            grid = self.cfg.search_size // self.cfg.patch
            maps = self.head(tokens_to_grid(head_input(mode, search_feat), grid, grid))
            return FrameOutput(maps=maps, token_rgb=token_out, token_aux=None,
                               search_rgb=search_feat, fused=None)

        if ref_aux is None or search_aux is None:
            raise ValueError("dual mode needs auxiliary reference and search crops")
        if token_aux is None:
            token_aux = self.fresh_token()
        elif not isinstance(token_aux, Tensor):
            token_aux = Tensor(np.asarray(token_aux, dtype=self.np_dtype))
        x_aux = self._assemble(ref_aux, search_aux, token_aux, "aux")
        out, out_aux = self.encoder.forward_dual(x, x_aux, bounds, self.cfg.attn)
        _, search_feat, token_out = split_output(out, bounds)
        _, search_feat_aux, token_out_aux = split_output(out_aux, bounds)
        fused = self.gmp(search_feat, search_feat_aux, token_out, token_out_aux)
        grid = self.cfg.search_size // self.cfg.patch
        maps = self.head(tokens_to_grid(head_input(mode, search_feat, fused), grid, grid))
        return FrameOutput(maps=maps, token_rgb=token_out, token_aux=token_out_aux,
                           search_rgb=search_feat, fused=fused)

    def forward_clip(self, ref_rgb, searches_rgb, mode, ref_aux=None, searches_aux=None):
        """Sequential pass over a clip's search frames with token propagation.

        Gradients flow through the propagated tokens across frames. Returns
        the list of per-frame outputs in order.
        """
        token_rgb = None
        token_aux = None
        outputs = []
        for t, search in enumerate(searches_rgb):
            aux = searches_aux[t] if searches_aux is not None else None
            out = self.forward_frame(ref_rgb, search, mode, ref_aux=ref_aux, search_aux=aux,
                                     token_rgb=token_rgb, token_aux=token_aux)
            outputs.append(out)
            # in-graph propagation: adding the zero empty token keeps state
            token_rgb = out.token_rgb + self.empty_token()
            token_aux = out.token_aux + self.empty_token() if out.token_aux is not None else None
        return outputs

    # -- parameter bookkeeping ----------------------------------------------
    def param_groups(self):
        """(backbone, rest): feature extractor at base rate, new modules at 10x.

        The conditional gates, perceiver and head are the fast group; the
        tokenizer, embeddings and encoder layers form the backbone group.
        """
        backbone, rest = [], []
        for name, p in self.named_parameters():
            if name.startswith(("gmp.", "head.", "token_probe.")) or ".gates." in name or name.startswith("encoder.gates"):
                rest.append((name, p))
            else:
                backbone.append((name, p))
        return backbone, rest


def build_model(cfg=None, seed=0):
    cfg = cfg or ModelConfig()
    return TrackModel(cfg, Rng(seed, ("model",)))


def save_model(model, path, extra=None):
    """Write parameters plus the full effective config to a checkpoint."""
    cfg = config_dict(model.cfg)
    if extra:
        cfg.update(extra)
    params = {name: p.data for name, p in model.named_parameters()}
    save_checkpoint(path, params, cfg, width=8 if model.cfg.dtype == "f8" else 4)


def load_model(path, attn_override=None):
    """Rebuild a model from a checkpoint; returns (model, stored config dict)."""
    cfg_dump, params, _ = load_checkpoint(path)
    names = {f.name for f in dataclasses.fields(ModelConfig)}
    cfg = ModelConfig(**{k: v for k, v in cfg_dump.items() if k in names})
    if attn_override is not None:
        cfg.attn = attn_override
        cfg.__post_init__()
    model = TrackModel(cfg, Rng(0, ("model",)))
    model.load_state_dict(params)
    return model, cfg_dump
