"""Video-to-Live-Comment encoder, contrastive objective, and pre-training loop."""

from __future__ import annotations

import json
import unicodedata
from collections import Counter
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from . import nn
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import Batch, CorpusConfig, Segment, TranscriptEntry, sample_epoch
from .errors import (DataError, EmptyMedia, EmptyPositiveRow,
                     NonPositiveTemperature, ShapeMismatch)
from .framefile import FrameFile, frame_row_at

PAD_ID = 0
UNK_ID = 1


@dataclass
class V2LCConfig:
    d_model: int = 64
    layers: int = 2
    heads: int = 4
    vocab_size: int = 4096
    max_tokens: int = 32
    max_comment_tokens: int = 8
    sigma_s: float = 8.0
    frames_per_segment: int = 8
    theta: float = 0.9
    tau_init: float = 14.3
    tau_max: float = 100.0
    batch_n: int = 8
    comments_per_segment: int = 5
    epochs: int = 10
    lr: float = 1e-3
    seed: int = 0


# --------------------------------------------------------------------------
# Tokenization

def _is_cjk(ch: str) -> bool:
    code = ord(ch)
    return (0x3400 <= code <= 0x9FFF or 0xF900 <= code <= 0xFAFF
            or 0x20000 <= code <= 0x2FFFF or 0x3040 <= code <= 0x30FF)


def text_units(text: str) -> list[str]:
    """Character units for CJK text, whitespace words otherwise."""
    if any(_is_cjk(ch) for ch in text):
        return [ch for ch in text if not ch.isspace()]
    return text.split()


def build_vocab(texts: Sequence[str], max_size: int = 4096) -> dict[str, int]:
    counts = Counter()
    for text in texts:
        counts.update(text_units(text))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    vocab = {"<pad>": PAD_ID, "<unk>": UNK_ID}
    for unit, _ in ranked[: max_size - 2]:
        vocab[unit] = len(vocab)
    return vocab


def tokenize(text: str, vocab: dict[str, int], max_tokens: int) -> tuple[list[int], int]:
    """Token id sequence truncated/padded to max_tokens, plus the real length."""
    units = text_units(text)[:max_tokens]
    ids = [vocab.get(u, UNK_ID) for u in units]
    n = len(ids)
    ids.extend([PAD_ID] * (max_tokens - n))
    return ids, n


# --------------------------------------------------------------------------
# Model parameters

@dataclass
class TextFrameEncoderParams:
    """The trainable V2LC side: token/frame embeddings, two cross-attention
    streams, and the shared transformer stack with a learned temperature."""
    tok_embed: torch.Tensor        # [vocab, d]
    frame_proj_w: torch.Tensor     # [frame_dim, d]
    frame_proj_b: torch.Tensor     # [d]
    cross_text_over_frames: nn.ProjectionParams
    cross_frames_over_text: nn.ProjectionParams
    blocks: list[nn.TransformerBlockParams]
    tau: torch.Tensor              # scalar inverse temperature


@dataclass
class CommentEncoderParams:
    """Frozen comment encoder: seeded once, never updated."""
    tok_embed: torch.Tensor
    blocks: list[nn.TransformerBlockParams]


@dataclass
class CrossModalState:
    s_t: torch.Tensor  # [L_t, d]
    s_f: torch.Tensor  # [L_f, d]
    s: torch.Tensor    # [d], unit norm


def init_v2lc(cfg: V2LCConfig, vocab_size: int, frame_dim: int,
              dtype=torch.float32, block_scale: float = 0.02) -> TextFrameEncoderParams:
    gen = torch.Generator().manual_seed(cfg.seed * 2654435761 % (2**63) + 17)
    d = cfg.d_model
    return TextFrameEncoderParams(
        tok_embed=nn.init_matrix(vocab_size, d, gen, dtype, scale=0.5),
        frame_proj_w=nn.init_matrix(frame_dim, d, gen, dtype, scale=0.2),
        frame_proj_b=torch.zeros(d, dtype=dtype, requires_grad=True),
        cross_text_over_frames=nn.init_projection(d, gen, dtype, scale=0.2),
        cross_frames_over_text=nn.init_projection(d, gen, dtype, scale=0.2),
        blocks=[nn.init_block(d, gen, dtype, scale=block_scale)
                for _ in range(cfg.layers)],
        tau=torch.tensor(cfg.tau_init, dtype=dtype, requires_grad=True),
    )


def init_frozen_encoder(cfg: V2LCConfig, vocab_size: int,
                        dtype=torch.float32) -> CommentEncoderParams:
    gen = torch.Generator().manual_seed(cfg.seed * 2654435761 % (2**63) + 9091)
    d = cfg.d_model
    params = CommentEncoderParams(
        tok_embed=nn.init_matrix(vocab_size, d, gen, dtype, scale=1.0),
        blocks=[nn.init_block(d, gen, dtype, scale=0.2) for _ in range(cfg.layers)],
    )
    for _, t in nn.iter_params(params):
        t.requires_grad_(False)
    return params


# --------------------------------------------------------------------------
# Encoders

def encode_segment(token_ids: Sequence[int], frames: torch.Tensor,
                   params: TextFrameEncoderParams, cfg: V2LCConfig) -> CrossModalState:
    """Cross-attention-to-concatenation encoder producing a unit-norm embedding.

    Text queries attend over frames and vice versa; the two streams are
    concatenated along the sequence axis, run through the transformer stack,
    mean-pooled, and L2-normalized.
    """
    dtype = params.tok_embed.dtype
    if frames.ndim != 2 or frames.shape[1] != params.frame_proj_w.shape[0]:
        raise ShapeMismatch(f"frame features {tuple(frames.shape)} do not match "
                            f"projection {tuple(params.frame_proj_w.shape)}")
    ids = torch.as_tensor(list(token_ids), dtype=torch.long)
    text_seq = params.tok_embed[ids] + nn.sinusoidal_positions(len(ids), cfg.d_model, dtype)
    frame_seq = frames.to(dtype) @ params.frame_proj_w + params.frame_proj_b
    frame_seq = frame_seq + nn.sinusoidal_positions(frame_seq.shape[0], cfg.d_model, dtype)
    s_t = nn.attention(text_seq, frame_seq, params.cross_text_over_frames, cfg.heads)
    s_f = nn.attention(frame_seq, text_seq, params.cross_frames_over_text, cfg.heads)
    x = torch.cat([s_t, s_f], dim=0)
    for bp in params.blocks:
        x = nn.transformer_block(x, bp, cfg.heads)
    s = nn.l2_normalize(nn.mean_pool(x))
    return CrossModalState(s_t=s_t, s_f=s_f, s=s)


def encode_comment_tokens(token_ids: Sequence[int], params: CommentEncoderParams,
                          cfg: V2LCConfig) -> torch.Tensor:
    dtype = params.tok_embed.dtype
    ids = torch.as_tensor(list(token_ids), dtype=torch.long)
    x = params.tok_embed[ids] + nn.sinusoidal_positions(len(ids), cfg.d_model, dtype)
    for bp in params.blocks:
        x = nn.transformer_block(x, bp, cfg.heads)
    return nn.l2_normalize(nn.mean_pool(x))


def encode_comments(texts: Sequence[str], params: CommentEncoderParams,
                    vocab: dict[str, int], cfg: V2LCConfig) -> torch.Tensor:
    """Frozen-encoder embeddings, one unit-norm row per comment. No gradients."""
    with torch.no_grad():
        rows = [encode_comment_tokens(tokenize(t, vocab, cfg.max_comment_tokens)[0],
                                      params, cfg)
                for t in texts]
        return torch.stack(rows)


# --------------------------------------------------------------------------
# Targets and loss

def build_targets(ownership: Sequence[Sequence[int]], comment_emb: torch.Tensor,
                  theta: float) -> torch.Tensor:
    """N x K multi-hot targets: owned comments plus near-duplicates above theta.

    targets[i][j] = 1 iff segment i owns comment j, or cosine(C_j, C_m) > theta
    for some comment m owned by i. Computed from frozen embeddings only.
    """
    n = len(ownership)
    k_total = comment_emb.shape[0]
    with torch.no_grad():
        sim = comment_emb @ comment_emb.T
        targets = torch.zeros(n, k_total, dtype=comment_emb.dtype)
        for i, cols in enumerate(ownership):
            cols_t = torch.as_tensor(list(cols), dtype=torch.long)
            expanded = (sim[:, cols_t].max(dim=1).values > theta)
            expanded[cols_t] = True
            targets[i] = expanded.to(comment_emb.dtype)
    return targets


def contrastive_loss(s: torch.Tensor, c: torch.Tensor, targets: torch.Tensor,
                     tau: torch.Tensor | float) -> torch.Tensor:
    """Multi-positive InfoNCE, segment -> comment direction only.

    Rows average -log softmax over their positive columns; the batch loss is
    the mean over rows. With a single positive per row this reduces to the
    plain CLIP-style objective.
    """
    tau_val = float(tau.detach()) if isinstance(tau, torch.Tensor) else float(tau)
    if tau_val <= 0:
        raise NonPositiveTemperature(f"tau = {tau_val}")
    pos_counts = targets.sum(dim=1)
    if (pos_counts < 1).any():
        raise EmptyPositiveRow("a target row has no positive comment")
    logits = (s @ c.T) * tau
    logp = torch.log_softmax(logits, dim=1)
    per_row = -(targets * logp).sum(dim=1) / pos_counts
    return per_row.mean()


# --------------------------------------------------------------------------
# Training

@dataclass
class PretrainResult:
    checkpoint_path: str
    loss_trace: list[float]
    val_recall_at_1: list[float]
    vocab: dict[str, int]


def _segment_tensors(seg: Segment, vocab: dict[str, int], cfg: V2LCConfig,
                     dtype=torch.float32) -> tuple[list[int], torch.Tensor]:
    ids, _ = tokenize(seg.transcript_text, vocab, cfg.max_tokens)
    return ids, torch.as_tensor(np.asarray(seg.frame_features, dtype=np.float32)).to(dtype)


def model_tensors(model: TextFrameEncoderParams) -> dict[str, np.ndarray]:
    return {name: t.detach().to(torch.float32).numpy()
            for name, t in nn.iter_params(model)}


def load_model_tensors(model: TextFrameEncoderParams, tensors: dict[str, np.ndarray]) -> None:
    named = dict(nn.iter_params(model))
    if set(named) != set(tensors):
        missing = set(named) ^ set(tensors)
        raise DataError(f"checkpoint tensor names do not match model: {sorted(missing)}")
    with torch.no_grad():
        for name, t in named.items():
            t.copy_(torch.as_tensor(tensors[name].reshape(t.shape), dtype=t.dtype))


def pretrain(train: Sequence[Segment], val: Sequence[Segment], cfg: V2LCConfig,
             out_path: str | Path,
             log_fn: Optional[Callable[[dict], None]] = None) -> PretrainResult:
    """Contrastive pre-training over sampled (segment, comment) batches.

    Deterministic for a fixed (corpus, config) on one build/platform. Writes a
    checkpoint with a config echo plus a sidecar JSON holding the vocabulary.
    """
    torch.set_num_threads(1)
    texts = [s.transcript_text for s in train]
    texts += [c.text for s in train for c in s.comments]
    vocab = build_vocab(texts, cfg.vocab_size)
    frame_dim = int(train[0].frame_features.shape[1])
    model = init_v2lc(cfg, len(vocab), frame_dim)
    frozen = init_frozen_encoder(cfg, len(vocab))
    params = nn.trainable(model)
    opt = nn.init_optimizer(params, lr=cfg.lr)
    sample_cfg = CorpusConfig(comments_per_segment=cfg.comments_per_segment,
                              batch_segments=cfg.batch_n, seed=cfg.seed)

    comment_cache: dict[str, torch.Tensor] = {}

    def frozen_embed(texts_: list[str]) -> torch.Tensor:
        rows = []
        for t in texts_:
            if t not in comment_cache:
                comment_cache[t] = encode_comments([t], frozen, vocab, cfg)[0]
            rows.append(comment_cache[t])
        return torch.stack(rows)

    loss_trace: list[float] = []
    recalls: list[float] = []
    step = 0
    for epoch in range(cfg.epochs):
        for batch in sample_epoch(train, sample_cfg, epoch):
            s = torch.stack([encode_segment(*_segment_tensors(seg, vocab, cfg),
                                            model, cfg).s
                             for seg in batch.segments])
            c = frozen_embed([cm.text for cm in batch.comments])
            targets = build_targets(batch.ownership, c, cfg.theta)
            loss = contrastive_loss(s, c, targets, model.tau)
            grads = nn.gradients(loss, params)
            nn.adam_step(params, grads, opt)
            with torch.no_grad():
                model.tau.clamp_(min=1e-4, max=cfg.tau_max)
            loss_trace.append(float(loss.detach()))
            if log_fn:
                log_fn({"event": "step", "epoch": epoch, "step": step,
                        "loss": loss_trace[-1], "tau": float(model.tau.detach())})
            step += 1
        r1, _ = retrieval_eval(model, frozen, vocab, cfg, val)
        recalls.append(r1)
        if log_fn:
            log_fn({"event": "epoch", "epoch": epoch, "val_recall_at_1": r1})

    out_path = str(out_path)
    save_checkpoint(out_path, model_tensors(model), config={
        "kind": "v2lc", **asdict(cfg), "frame_dim": frame_dim, "vocab_len": len(vocab)})
    Path(out_path + ".meta.json").write_text(
        json.dumps({"vocab": vocab, "config": asdict(cfg),
                    "frozen_encoder_seed": cfg.seed}, sort_keys=True),
        encoding="utf-8")
    return PretrainResult(checkpoint_path=out_path, loss_trace=loss_trace,
                          val_recall_at_1=recalls, vocab=vocab)


@dataclass
class LoadedV2LC:
    model: TextFrameEncoderParams
    frozen: CommentEncoderParams
    vocab: dict[str, int]
    cfg: V2LCConfig


def load_pretrained(path: str | Path) -> LoadedV2LC:
    tensors, config = load_checkpoint(path)
    meta = json.loads(Path(str(path) + ".meta.json").read_text(encoding="utf-8"))
    cfg_fields = {f: config[f] for f in V2LCConfig.__dataclass_fields__ if f in config}
    cfg = V2LCConfig(**cfg_fields)
    vocab = meta["vocab"]
    model = init_v2lc(cfg, len(vocab), int(config["frame_dim"]))
    load_model_tensors(model, tensors)
    frozen = init_frozen_encoder(cfg, len(vocab))
    return LoadedV2LC(model=model, frozen=frozen, vocab=vocab, cfg=cfg)


# --------------------------------------------------------------------------
# Retrieval probe

def retrieval_eval(model: TextFrameEncoderParams, frozen: CommentEncoderParams,
                   vocab: dict[str, int], cfg: V2LCConfig, segments: Sequence[Segment],
                   n_candidates: int = 64, n_probes: Optional[int] = None,
                   seed: int = 0x9E3) -> tuple[float, float]:
    """recall@1 / recall@5 of the true comment among seeded distractors."""
    segs = [s for s in segments if s.comments]
    if len(segs) < 2:
        return 0.0, 0.0
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, seed]))
    probes = n_probes if n_probes is not None else len(segs)
    hits1 = hits5 = 0
    with torch.no_grad():
        for p in range(probes):
            i = int(rng.integers(len(segs))) if n_probes is not None else p % len(segs)
            seg = segs[i]
            true = seg.comments[int(rng.integers(len(seg.comments)))]
            distractors: list[str] = []
            while len(distractors) < n_candidates - 1:
                j = int(rng.integers(len(segs)))
                if j == i:
                    continue
                other = segs[j]
                distractors.append(other.comments[int(rng.integers(len(other.comments)))].text)
            texts = [true.text] + distractors
            c = encode_comments(texts, frozen, vocab, cfg)
            s = encode_segment(*_segment_tensors(seg, vocab, cfg), model, cfg).s
            scores = c @ s
            rank = int((scores > scores[0]).sum()) + 1
            hits1 += rank <= 1
            hits5 += rank <= 5
    return hits1 / probes, hits5 / probes


# --------------------------------------------------------------------------
# Synthetic live-comment feature extraction

@dataclass
class MediaClip:
    """An utterance with a transcript and frame features but no live comments."""
    duration_s: float
    transcript: list[TranscriptEntry] = field(default_factory=list)
    frames: Optional[FrameFile] = None


def extract_lc_features(media: MediaClip, loaded: LoadedV2LC) -> np.ndarray:
    """Encode sigma-second windows (stride sigma/2) into unit-norm rows [W, d].

    Utterances shorter than sigma are padded to one window: frame sampling
    clamps to the edge rows and the transcript is used unchanged.
    """
    cfg = loaded.cfg
    if media.duration_s <= 0:
        raise EmptyMedia("media duration must be positive")
    sigma = cfg.sigma_s
    stride = sigma / 2.0
    n_windows = max(1, int(np.floor((media.duration_s - sigma) / stride + 1e-9)) + 1)
    rows = []
    with torch.no_grad():
        for w in range(n_windows):
            start = w * stride
            entries = sorted((e for e in media.transcript
                              if e.start_s < start + sigma and e.end_s > start),
                             key=lambda e: e.start_s)
            text = " ".join(e.text for e in entries)
            ids, _ = tokenize(text, loaded.vocab, cfg.max_tokens)
            if media.frames is not None:
                frames = np.stack([
                    frame_row_at(media.frames,
                                 start + (i + 0.5) * sigma / cfg.frames_per_segment)
                    for i in range(cfg.frames_per_segment)]).astype(np.float32)
            else:
                frames = np.zeros((cfg.frames_per_segment,
                                   loaded.model.frame_proj_w.shape[0]), dtype=np.float32)
            state = encode_segment(ids, torch.as_tensor(frames), loaded.model, cfg)
            rows.append(state.s.numpy())
    return np.stack(rows)
