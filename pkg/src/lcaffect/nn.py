"""Differentiable dense-tensor core: attention primitives, optimizer, gradient checks.

Forward math is written from matmul/softmax primitives so every equation is
visible; reverse-mode gradients come from torch autograd. The finite-difference
checker below is an independent oracle that never touches autograd on its
numeric side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, is_dataclass
from typing import Callable, Iterator, Sequence

import torch

from .errors import NonFiniteValue, NotScalarLoss, ShapeMismatch


@dataclass
class ProjectionParams:
    """Query/key/value/output projections of one attention operation."""
    wq: torch.Tensor
    wk: torch.Tensor
    wv: torch.Tensor
    wo: torch.Tensor


@dataclass
class LayerNormParams:
    gain: torch.Tensor
    bias: torch.Tensor


@dataclass
class TransformerBlockParams:
    """Pre-norm residual block: attention + GELU FFN of width 4*d."""
    ln1: LayerNormParams
    attn: ProjectionParams
    ln2: LayerNormParams
    w1: torch.Tensor
    b1: torch.Tensor
    w2: torch.Tensor
    b2: torch.Tensor


@dataclass
class OptimizerState:
    m: list[torch.Tensor]
    v: list[torch.Tensor]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


# --------------------------------------------------------------------------
# Initialization

def init_projection(d: int, gen: torch.Generator, dtype=torch.float32,
                    scale: float = 0.02) -> ProjectionParams:
    def w():
        return (torch.randn(d, d, generator=gen, dtype=torch.float64) * scale) \
            .to(dtype).requires_grad_(True)
    return ProjectionParams(wq=w(), wk=w(), wv=w(), wo=w())


def init_layer_norm(d: int, dtype=torch.float32) -> LayerNormParams:
    return LayerNormParams(gain=torch.ones(d, dtype=dtype, requires_grad=True),
                           bias=torch.zeros(d, dtype=dtype, requires_grad=True))


def init_block(d: int, gen: torch.Generator, dtype=torch.float32,
               scale: float = 0.02) -> TransformerBlockParams:
    def w(*shape):
        return (torch.randn(*shape, generator=gen, dtype=torch.float64) * scale) \
            .to(dtype).requires_grad_(True)
    return TransformerBlockParams(
        ln1=init_layer_norm(d, dtype),
        attn=init_projection(d, gen, dtype, scale),
        ln2=init_layer_norm(d, dtype),
        w1=w(d, 4 * d), b1=torch.zeros(4 * d, dtype=dtype, requires_grad=True),
        w2=w(4 * d, d), b2=torch.zeros(d, dtype=dtype, requires_grad=True),
    )


def init_matrix(rows: int, cols: int, gen: torch.Generator, dtype=torch.float32,
                scale: float = 0.02) -> torch.Tensor:
    return (torch.randn(rows, cols, generator=gen, dtype=torch.float64) * scale) \
        .to(dtype).requires_grad_(True)


# --------------------------------------------------------------------------
# Forward primitives

def _check_finite(x: torch.Tensor, what: str) -> torch.Tensor:
    if not torch.isfinite(x).all():
        raise NonFiniteValue(f"non-finite values in {what}")
    return x


def attention(q_src: torch.Tensor, kv_src: torch.Tensor, params: ProjectionParams,
              heads: int = 1) -> torch.Tensor:
    """Scaled dot-product multi-head attention; self-attention when q_src is kv_src."""
    if q_src.ndim != 2 or kv_src.ndim != 2:
        raise ShapeMismatch("attention expects 2-D [L, d] inputs")
    d = q_src.shape[1]
    if kv_src.shape[1] != d or params.wq.shape != (d, d):
        raise ShapeMismatch(
            f"attention dims disagree: q {tuple(q_src.shape)}, kv {tuple(kv_src.shape)}, "
            f"wq {tuple(params.wq.shape)}")
    if d % heads != 0:
        raise ShapeMismatch(f"d={d} not divisible by heads={heads}")
    if q_src.shape[0] < 1 or kv_src.shape[0] < 1:
        raise ShapeMismatch("attention needs at least one query and one key")
    dh = d // heads
    q = q_src @ params.wq
    k = kv_src @ params.wk
    v = kv_src @ params.wv
    lq, lkv = q.shape[0], k.shape[0]
    # [H, L, dh]
    qh = q.view(lq, heads, dh).transpose(0, 1)
    kh = k.view(lkv, heads, dh).transpose(0, 1)
    vh = v.view(lkv, heads, dh).transpose(0, 1)
    logits = qh @ kh.transpose(1, 2) / math.sqrt(dh)
    weights = torch.softmax(logits, dim=-1)
    out = (weights @ vh).transpose(0, 1).reshape(lq, d) @ params.wo
    return _check_finite(out, "attention output")


def layer_norm(x: torch.Tensor, params: LayerNormParams, eps: float = 1e-5) -> torch.Tensor:
    """Row-wise (x - mean) / sqrt(population_var + eps) * gain + bias."""
    mu = x.mean(dim=-1, keepdim=True)
    var = x.var(dim=-1, keepdim=True, unbiased=False)
    return (x - mu) / torch.sqrt(var + eps) * params.gain + params.bias


def transformer_block(seq: torch.Tensor, bp: TransformerBlockParams,
                      heads: int = 1) -> torch.Tensor:
    """Pre-norm residual block: x + SelfAttn(LN(x)), then + FFN(LN(.))."""
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise ShapeMismatch("transformer_block expects a non-empty [L, d] sequence")
    h = layer_norm(seq, bp.ln1)
    x = seq + attention(h, h, bp.attn, heads)
    h = layer_norm(x, bp.ln2)
    ff = torch.nn.functional.gelu(h @ bp.w1 + bp.b1) @ bp.w2 + bp.b2
    return _check_finite(x + ff, "transformer_block output")


def mean_pool(seq: torch.Tensor) -> torch.Tensor:
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise ShapeMismatch("mean_pool expects a non-empty [L, d] sequence")
    return seq.mean(dim=0)


def l2_normalize(x: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    return x / torch.clamp(x.norm(dim=-1, keepdim=True), min=eps)


def sinusoidal_positions(length: int, d: int, dtype=torch.float32) -> torch.Tensor:
    """Standard sin/cos positional encoding table [length, d]."""
    pos = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    idx = torch.arange(0, d, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, idx / d)
    table = torch.zeros(length, d, dtype=torch.float64)
    table[:, 0::2] = torch.sin(angle)
    table[:, 1::2] = torch.cos(angle[:, : d // 2])
    return table.to(dtype)


# --------------------------------------------------------------------------
# Parameter trees

def iter_params(obj, prefix: str = "") -> Iterator[tuple[str, torch.Tensor]]:
    """Walk a dataclass/list/dict/tensor tree yielding (dotted name, tensor)."""
    if isinstance(obj, torch.Tensor):
        yield prefix, obj
    elif is_dataclass(obj):
        for f in fields(obj):
            yield from iter_params(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from iter_params(item, f"{prefix}.{i}" if prefix else str(i))
    elif isinstance(obj, dict):
        for key in sorted(obj):
            yield from iter_params(obj[key], f"{prefix}.{key}" if prefix else str(key))


def trainable(obj) -> list[torch.Tensor]:
    return [t for _, t in iter_params(obj) if t.requires_grad]


# --------------------------------------------------------------------------
# Gradients and optimization

def gradients(loss: torch.Tensor, params: Sequence[torch.Tensor]) -> list[torch.Tensor]:
    """Reverse-mode gradients; parameters off the loss path get zero gradients."""
    if loss.ndim != 0:
        raise NotScalarLoss(f"loss has shape {tuple(loss.shape)}, expected scalar")
    grads = torch.autograd.grad(loss, list(params), allow_unused=True)
    return [g if g is not None else torch.zeros_like(p)
            for g, p in zip(grads, params)]


def init_optimizer(params: Sequence[torch.Tensor], lr: float = 1e-3,
                   beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8) -> OptimizerState:
    return OptimizerState(m=[torch.zeros_like(p) for p in params],
                          v=[torch.zeros_like(p) for p in params],
                          step=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params: Sequence[torch.Tensor], grads: Sequence[torch.Tensor],
              state: OptimizerState) -> None:
    """One standard Adam update with bias correction, in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch("adam_step: params/grads/state lengths disagree")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state.m, state.v):
            if p.shape != g.shape:
                raise ShapeMismatch(f"adam_step: grad shape {tuple(g.shape)} "
                                    f"vs param {tuple(p.shape)}")
            m.mul_(state.beta1).add_(g, alpha=1.0 - state.beta1)
            v.mul_(state.beta2).addcmul_(g, g, value=1.0 - state.beta2)
            p.addcdiv_(m / bc1, (v / bc2).sqrt() + state.eps, value=-state.lr)


def finite_diff_check(loss_fn: Callable[[], torch.Tensor],
                      params: Sequence[torch.Tensor], eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Every scalar parameter is perturbed individually; relative error is
    |a - n| / max(|a|, |n|, 1e-8). Run in float64.
    """
    loss = loss_fn()
    if loss.ndim != 0:
        raise NotScalarLoss("finite_diff_check needs a scalar loss")
    analytic = gradients(loss, params)
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.view(-1)
        gflat = g.reshape(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + eps
            f_plus = loss_fn().item()
            with torch.no_grad():
                flat[i] = orig - eps
            f_minus = loss_fn().item()
            with torch.no_grad():
                flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = gflat[i].item()
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst
