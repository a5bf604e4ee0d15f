"""Finite-difference verification of the exported training composites.

Builds tiny float64 models and checks analytic gradients against central
differences for: V2LC forward + contrastive loss, fusion + LC augmentation +
regression MAE, and fusion + classification cross-entropy.
"""

from __future__ import annotations

import torch

from . import fusion as fz
from . import nn, v2lc


def check_v2lc(eps: float = 1e-5, seed: int = 0) -> float:
    cfg = v2lc.V2LCConfig(d_model=8, layers=1, heads=2, max_tokens=6,
                          max_comment_tokens=4, frames_per_segment=3, seed=seed)
    vocab_size, frame_dim = 16, 5
    # block_scale keeps GELU/softmax pre-activations out of their flat tails,
    # where true gradients fall below the finite-difference noise floor
    model = v2lc.init_v2lc(cfg, vocab_size, frame_dim, dtype=torch.float64,
                           block_scale=0.3)
    frozen = v2lc.init_frozen_encoder(cfg, vocab_size, dtype=torch.float64)
    gen = torch.Generator().manual_seed(seed + 1)
    tokens = [torch.randint(0, vocab_size, (cfg.max_tokens,), generator=gen).tolist()
              for _ in range(2)]
    frames = [torch.randn(cfg.frames_per_segment, frame_dim, generator=gen,
                          dtype=torch.float64) for _ in range(2)]
    comment_tokens = [torch.randint(0, vocab_size, (cfg.max_comment_tokens,),
                                    generator=gen).tolist() for _ in range(4)]
    with torch.no_grad():
        c = torch.stack([v2lc.encode_comment_tokens(t, frozen, cfg)
                         for t in comment_tokens])
    ownership = [[0, 1], [2, 3]]
    targets = v2lc.build_targets(ownership, c, theta=0.9)

    def loss_fn() -> torch.Tensor:
        s = torch.stack([v2lc.encode_segment(tokens[i], frames[i], model, cfg).s
                         for i in range(2)])
        return v2lc.contrastive_loss(s, c, targets, model.tau)

    return nn.finite_diff_check(loss_fn, nn.trainable(model), eps=eps)


def _tiny_fusion(task: fz.TaskSpec, seed: int, use_lc: bool):
    cfg = fz.FusionConfig(d_model=8, heads=2, head_hidden=8, use_lc=use_lc, seed=seed)
    params = fz.init_fusion(cfg, vocab_size=10, d_a=5, d_v=6, d_lc=7,
                            n_out=task.n_out, dtype=torch.float64, block_scale=0.3)
    with torch.no_grad():
        params.head_w1 *= 0.5  # same conditioning constraint for the head GELU
    gen = torch.Generator().manual_seed(seed + 2)
    tokens = torch.randint(0, 10, (4,), generator=gen)
    f_a = torch.randn(4, 5, generator=gen, dtype=torch.float64)
    f_v = torch.randn(3, 6, generator=gen, dtype=torch.float64)
    lc_seq = torch.randn(2, 7, generator=gen, dtype=torch.float64)
    return cfg, params, tokens, f_a, f_v, lc_seq


def _fusion_features(cfg, params, tokens, f_a, f_v, lc_seq):
    feats = fz.ModalityFeatures(
        f_t=params.text_embed[tokens],
        f_a=f_a @ params.acoustic_w + params.acoustic_b,
        f_v=f_v @ params.visual_w + params.visual_b)
    state = fz.cross_modality_fuse(feats, params, cfg.heads)
    if cfg.use_lc:
        return fz.augment_with_lc(state, lc_seq, params, cfg.heads)
    return state.z


def check_fusion_regression(eps: float = 1e-5, seed: int = 0) -> float:
    task = fz.TaskSpec(kind="regression")
    cfg, params, tokens, f_a, f_v, lc_seq = _tiny_fusion(task, seed, use_lc=True)

    def loss_fn() -> torch.Tensor:
        out = fz.predict(_fusion_features(cfg, params, tokens, f_a, f_v, lc_seq),
                         task, params)
        return (out - 0.7).abs()  # MAE against a fixed target away from zero

    return nn.finite_diff_check(loss_fn, nn.trainable(params), eps=eps)


def check_fusion_classification(eps: float = 1e-5, seed: int = 0) -> float:
    task = fz.TaskSpec(kind="classification", class_names=["a", "b", "c"])
    cfg, params, tokens, f_a, f_v, lc_seq = _tiny_fusion(task, seed, use_lc=False)
    target = torch.tensor([1])

    def loss_fn() -> torch.Tensor:
        logits = fz.predict(_fusion_features(cfg, params, tokens, f_a, f_v, lc_seq),
                            task, params)
        return torch.nn.functional.cross_entropy(logits.unsqueeze(0), target)

    return nn.finite_diff_check(loss_fn, nn.trainable(params), eps=eps)


def run_all(eps: float = 1e-5, seed: int = 0) -> dict[str, float]:
    return {
        "v2lc_contrastive": check_v2lc(eps, seed),
        "fusion_regression_mae": check_fusion_regression(eps, seed),
        "fusion_classification_ce": check_fusion_classification(eps, seed),
    }
