"""Tri-modal fusion encoder, live-comment augmentation, task heads, fine-tuning."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from . import nn
from .errors import DataError, DegenerateLabels, ShapeMismatch
from .framefile import read_frames
from .metrics import weighted_prf, regression_stats
from .v2lc import (LoadedV2LC, MediaClip, build_vocab, extract_lc_features,
                   tokenize)
from .corpus import TranscriptEntry


@dataclass
class TaskSpec:
    kind: str                          # "regression" | "classification"
    label_range: tuple[float, float] = (-1.0, 1.0)
    class_names: list[str] = field(default_factory=list)

    @property
    def n_out(self) -> int:
        return 1 if self.kind == "regression" else len(self.class_names)


@dataclass
class FusionConfig:
    d_model: int = 32
    heads: int = 4
    max_text_tokens: int = 16
    head_hidden: int = 32
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 20
    patience: int = 5
    train_fraction: float = 0.8
    val_fraction: float = 0.1
    use_lc: bool = False
    seed: int = 0


@dataclass
class ModalityFeatures:
    """Per-modality sequences already projected to the shared dimension d."""
    f_t: torch.Tensor
    f_a: torch.Tensor
    f_v: torch.Tensor


@dataclass
class FusionState:
    z_t: torch.Tensor  # [L_t, d]
    z_a: torch.Tensor  # [L_a, d]
    z_v: torch.Tensor  # [L_v, d]
    z: torch.Tensor    # [3d]


@dataclass
class StreamParams:
    """One modality stream: cross-attention over the other two, then self-attention."""
    cross: nn.ProjectionParams
    self_block: nn.TransformerBlockParams


@dataclass
class FusionParams:
    text_embed: torch.Tensor           # text adapter: [vocab, d]
    acoustic_w: torch.Tensor           # [d_a, d]
    acoustic_b: torch.Tensor
    visual_w: torch.Tensor             # [d_v, d]
    visual_b: torch.Tensor
    stream_t: StreamParams
    stream_a: StreamParams
    stream_v: StreamParams
    lc_w: torch.Tensor                 # LC adapter: [d_lc, d]
    lc_b: torch.Tensor
    lc_block: nn.TransformerBlockParams
    head_w1: torch.Tensor
    head_b1: torch.Tensor
    head_w2: torch.Tensor
    head_b2: torch.Tensor


def init_fusion(cfg: FusionConfig, vocab_size: int, d_a: int, d_v: int, d_lc: int,
                n_out: int, dtype=torch.float32,
                block_scale: float = 0.02) -> FusionParams:
    gen = torch.Generator().manual_seed(cfg.seed * 2654435761 % (2**63) + 4242)
    d = cfg.d_model

    def stream():
        return StreamParams(cross=nn.init_projection(d, gen, dtype, scale=0.2),
                            self_block=nn.init_block(d, gen, dtype, scale=block_scale))

    head_in = 4 * d if cfg.use_lc else 3 * d
    return FusionParams(
        text_embed=nn.init_matrix(vocab_size, d, gen, dtype, scale=0.5),
        acoustic_w=nn.init_matrix(d_a, d, gen, dtype, scale=0.2),
        acoustic_b=torch.zeros(d, dtype=dtype, requires_grad=True),
        visual_w=nn.init_matrix(d_v, d, gen, dtype, scale=0.2),
        visual_b=torch.zeros(d, dtype=dtype, requires_grad=True),
        stream_t=stream(), stream_a=stream(), stream_v=stream(),
        lc_w=nn.init_matrix(max(d_lc, 1), d, gen, dtype, scale=0.2),
        lc_b=torch.zeros(d, dtype=dtype, requires_grad=True),
        lc_block=nn.init_block(d, gen, dtype, scale=block_scale),
        head_w1=nn.init_matrix(head_in, cfg.head_hidden, gen, dtype, scale=0.2),
        head_b1=torch.zeros(cfg.head_hidden, dtype=dtype, requires_grad=True),
        head_w2=nn.init_matrix(cfg.head_hidden, n_out, gen, dtype, scale=0.2),
        head_b2=torch.zeros(n_out, dtype=dtype, requires_grad=True),
    )


def cross_modality_fuse(m: ModalityFeatures, params: FusionParams,
                        heads: int = 1) -> FusionState:
    """Each modality queries the sequence-axis concatenation of the other two,
    passes through a self-attention block, and the mean-pooled streams are
    concatenated into Z. No positional encodings are added here."""
    d = m.f_t.shape[1]
    if m.f_a.shape[1] != d or m.f_v.shape[1] != d:
        raise ShapeMismatch("modality feature dims disagree")
    pairs = (
        (m.f_t, torch.cat([m.f_a, m.f_v], dim=0), params.stream_t),
        (m.f_a, torch.cat([m.f_v, m.f_t], dim=0), params.stream_a),
        (m.f_v, torch.cat([m.f_t, m.f_a], dim=0), params.stream_v),
    )
    zs = []
    for q_src, kv_src, stream in pairs:
        x = nn.attention(q_src, kv_src, stream.cross, heads)
        zs.append(nn.transformer_block(x, stream.self_block, heads))
    z = torch.cat([nn.mean_pool(zs[0]), nn.mean_pool(zs[1]), nn.mean_pool(zs[2])])
    return FusionState(z_t=zs[0], z_a=zs[1], z_v=zs[2], z=z)


def augment_with_lc(state: FusionState, lc_seq: torch.Tensor, params: FusionParams,
                    heads: int = 1) -> torch.Tensor:
    """Self-attend the synthetic live-comment rows, mean-pool, concat with Z -> [4d]."""
    if lc_seq.ndim != 2 or lc_seq.shape[0] < 1:
        raise ShapeMismatch("lc_seq must be a non-empty [W, d_lc] matrix")
    x = lc_seq.to(params.lc_w.dtype) @ params.lc_w + params.lc_b
    x = nn.transformer_block(x, params.lc_block, heads)
    return torch.cat([state.z, nn.mean_pool(x)])


def predict(features: torch.Tensor, task: TaskSpec, params: FusionParams,
            inference: bool = False) -> torch.Tensor:
    """Two feed-forward layers with GELU between; regression output is clamped
    to the label range at inference only so training gradients are unaffected."""
    if features.shape[0] != params.head_w1.shape[0]:
        raise ShapeMismatch(f"head expects {params.head_w1.shape[0]} features, "
                            f"got {features.shape[0]}")
    h = torch.nn.functional.gelu(features @ params.head_w1 + params.head_b1)
    out = h @ params.head_w2 + params.head_b2
    if task.kind == "regression":
        out = out[0]
        if inference:
            out = out.clamp(*task.label_range)
    return out


# --------------------------------------------------------------------------
# Downstream dataset

@dataclass
class UtteranceSample:
    id: str
    label: float | str
    text: str
    acoustic: np.ndarray   # [L_a, d_a]
    visual: np.ndarray     # [L_v, d_v]
    media: Optional[MediaClip] = None


def load_downstream_jsonl(path: str | Path) -> list[UtteranceSample]:
    """One JSON object per line: {"id", "label", "text", "acoustic_file",
    "visual_file", optional "media": {"duration_s", "transcript", "frames_file"}}.
    Acoustic/visual/frame files use the LCAF binary layout."""
    path = Path(path)
    base = path.parent
    samples: list[UtteranceSample] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                media = None
                if "media" in obj:
                    mb = obj["media"]
                    media = MediaClip(
                        duration_s=float(mb["duration_s"]),
                        transcript=[TranscriptEntry(float(e["start"]), float(e["end"]),
                                                    str(e["text"]), str(e.get("lang", "zh")))
                                    for e in mb.get("transcript", [])],
                        frames=read_frames(base / mb["frames_file"]))
                samples.append(UtteranceSample(
                    id=str(obj["id"]), label=obj["label"],
                    text=str(obj.get("text", "")),
                    acoustic=read_frames(base / obj["acoustic_file"]).features,
                    visual=read_frames(base / obj["visual_file"]).features,
                    media=media))
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: bad utterance: {exc}") from exc
    return samples


# --------------------------------------------------------------------------
# Fine-tuning

@dataclass
class FinetuneResult:
    params: FusionParams
    vocab: dict[str, int]
    task: TaskSpec
    history: list[dict]
    best_epoch: int
    test_preds: list
    test_labels: list


def _forward_sample(sample: UtteranceSample, tokens: Sequence[int],
                    lc_seq: Optional[np.ndarray], params: FusionParams,
                    task: TaskSpec, cfg: FusionConfig,
                    inference: bool = False) -> torch.Tensor:
    dtype = params.text_embed.dtype
    ids = torch.as_tensor(list(tokens), dtype=torch.long)
    f_t = params.text_embed[ids]
    f_a = torch.as_tensor(sample.acoustic, dtype=dtype) @ params.acoustic_w + params.acoustic_b
    f_v = torch.as_tensor(sample.visual, dtype=dtype) @ params.visual_w + params.visual_b
    state = cross_modality_fuse(ModalityFeatures(f_t, f_a, f_v), params, cfg.heads)
    if cfg.use_lc:
        if lc_seq is None:
            raise DataError(f"sample {sample.id}: LC augmentation enabled but no media")
        feats = augment_with_lc(state, torch.as_tensor(lc_seq), params, cfg.heads)
    else:
        feats = state.z
    return predict(feats, task, params, inference=inference)


def _split_indices(n: int, cfg: FusionConfig) -> tuple[list[int], list[int], list[int]]:
    order = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xF17])).permutation(n)
    n_train = int(round(cfg.train_fraction * n))
    n_val = int(round(cfg.val_fraction * n))
    return (list(order[:n_train]), list(order[n_train:n_train + n_val]),
            list(order[n_train + n_val:]))


def _val_metric(preds: list, labels: list, task: TaskSpec) -> float:
    if task.kind == "regression":
        corr, _, _ = regression_stats(preds, labels)
        return corr
    _, _, f1 = weighted_prf(preds, labels)
    return f1


def finetune(samples: Sequence[UtteranceSample], task: TaskSpec, cfg: FusionConfig,
             lc: Optional[LoadedV2LC] = None,
             log_fn=None) -> FinetuneResult:
    """Adam fine-tuning with early stopping (patience on the validation metric:
    Pearson correlation for regression, weighted F1 for classification).

    LC features are extracted once up front and cached; the V2LC encoder stays
    frozen throughout."""
    torch.set_num_threads(1)
    if cfg.use_lc and lc is None:
        raise DataError("use_lc=True requires a loaded V2LC checkpoint")
    idx_train, idx_val, idx_test = _split_indices(len(samples), cfg)
    vocab = build_vocab([samples[i].text for i in idx_train], max_size=4096)
    tokens = [tokenize(s.text, vocab, cfg.max_text_tokens)[0] for s in samples]

    lc_cache: list[Optional[np.ndarray]] = [None] * len(samples)
    if cfg.use_lc:
        for i, s in enumerate(samples):
            if s.media is None:
                raise DataError(f"sample {s.id}: LC augmentation enabled but no media")
            lc_cache[i] = extract_lc_features(s.media, lc)

    d_lc = lc.cfg.d_model if lc is not None else 1
    params = init_fusion(cfg, len(vocab), samples[0].acoustic.shape[1],
                         samples[0].visual.shape[1], d_lc, task.n_out)
    train_params = nn.trainable(params)
    opt = nn.init_optimizer(train_params, lr=cfg.lr)

    if task.kind == "classification":
        class_ids = {c: i for i, c in enumerate(task.class_names)}

    def sample_loss(i: int) -> torch.Tensor:
        out = _forward_sample(samples[i], tokens[i], lc_cache[i], params, task, cfg)
        if task.kind == "regression":
            return (out - float(samples[i].label)).abs()
        target = torch.as_tensor(class_ids[samples[i].label])
        return torch.nn.functional.cross_entropy(out.unsqueeze(0), target.unsqueeze(0))

    def evaluate(indices: list[int]) -> tuple[list, list]:
        preds, labels = [], []
        with torch.no_grad():
            for i in indices:
                out = _forward_sample(samples[i], tokens[i], lc_cache[i], params,
                                      task, cfg, inference=True)
                if task.kind == "regression":
                    preds.append(float(out))
                    labels.append(float(samples[i].label))
                else:
                    preds.append(task.class_names[int(out.argmax())])
                    labels.append(samples[i].label)
        return preds, labels

    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7A1]))
    history: list[dict] = []
    best_metric, best_epoch, best_state = -np.inf, -1, None
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(idx_train))
        total = 0.0
        for b0 in range(0, len(order), cfg.batch_size):
            chunk = [idx_train[j] for j in order[b0:b0 + cfg.batch_size]]
            loss = torch.stack([sample_loss(i) for i in chunk]).mean()
            grads = nn.gradients(loss, train_params)
            nn.adam_step(train_params, grads, opt)
            total += float(loss.detach()) * len(chunk)
        val_preds, val_labels = evaluate(idx_val)
        metric = _val_metric(val_preds, val_labels, task)
        record = {"epoch": epoch, "train_loss": total / max(len(idx_train), 1),
                  "val_metric": metric}
        history.append(record)
        if log_fn:
            log_fn({"event": "epoch", **record})
        if metric > best_metric:
            best_metric, best_epoch = metric, epoch
            best_state = [p.detach().clone() for p in train_params]
        elif epoch - best_epoch >= cfg.patience:
            break
    if best_state is not None:
        with torch.no_grad():
            for p, b in zip(train_params, best_state):
                p.copy_(b)
    test_preds, test_labels = evaluate(idx_test)
    return FinetuneResult(params=params, vocab=vocab, task=task, history=history,
                          best_epoch=best_epoch, test_preds=test_preds,
                          test_labels=test_labels)


# --------------------------------------------------------------------------
# Linear probe

def linear_probe(features: np.ndarray, labels: Sequence, seed: int = 0,
                 lr: float = 0.1, iters: int = 500,
                 l2: float = 1e-4) -> tuple[float, float]:
    """Multinomial logistic regression by full-batch gradient descent,
    evaluated on a held-out 20% split. Returns (accuracy, weighted F1)."""
    x = np.asarray(features, dtype=np.float64)
    labels = list(labels)
    classes = sorted(set(labels), key=str)
    if len(classes) < 2:
        raise DegenerateLabels("linear_probe needs at least two classes")
    cid = {c: i for i, c in enumerate(classes)}
    y = np.array([cid[l] for l in labels])
    n = x.shape[0]
    order = np.random.default_rng(np.random.SeedSequence([seed, 0x11B])).permutation(n)
    n_train = int(round(0.8 * n))
    tr, te = order[:n_train], order[n_train:]
    mu, sd = x[tr].mean(axis=0), x[tr].std(axis=0) + 1e-8
    xs = (x - mu) / sd
    xb = np.hstack([xs, np.ones((n, 1))])
    w = np.zeros((xb.shape[1], len(classes)))
    y_onehot = np.eye(len(classes))[y]
    for _ in range(iters):
        logits = xb[tr] @ w
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        grad = xb[tr].T @ (p - y_onehot[tr]) / len(tr) + l2 * w
        w -= lr * grad
    pred = (xb[te] @ w).argmax(axis=1)
    acc = float(np.mean(pred == y[te]))
    _, _, f1 = weighted_prf([classes[i] for i in pred], [classes[i] for i in y[te]])
    return acc, f1
