"""Seeded synthetic corpora for desk-scale verification.

A fixed "world" maps each latent (topic, valence) pair to a token block and a
per-modality embedding. Token strings and embedding maps depend only on
structural constants (not the run seed), so a V2LC encoder pre-trained on a
generated corpus recognizes the media blocks of any generated downstream
dataset. Comments open with three tokens that are a deterministic function of
the latent, which is what lets a frozen random text encoder cluster them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import CorpusConfig
from .framefile import write_frames

VALENCE_GRID = [round(-1.0 + 0.25 * i, 2) for i in range(9)]  # 9-point grid

_WORLD_FRAME = 0x1CAF01
_WORLD_ACOUSTIC = 0x1CAF02
_WORLD_VISUAL = 0x1CAF03


@dataclass(frozen=True)
class LatentState:
    topic: int
    valence_idx: int  # index into VALENCE_GRID

    @property
    def valence(self) -> float:
        return VALENCE_GRID[self.valence_idx]


def latent_embedding(kind: int, latent: LatentState, dim: int) -> np.ndarray:
    """Fixed random embedding of (topic, valence); independent of the run seed."""
    rng = np.random.default_rng(
        np.random.SeedSequence([kind, latent.topic, latent.valence_idx, dim]))
    return rng.normal(size=dim)


def transcript_tokens(latent: LatentState, rng: np.random.Generator,
                      n_signal: int = 6, n_noise: int = 2) -> list[str]:
    block = [f"w{latent.topic}_{latent.valence_idx}_{j}" for j in range(6)]
    toks = [block[int(rng.integers(len(block)))] for _ in range(n_signal)]
    toks += [f"nz{int(rng.integers(100))}" for _ in range(n_noise)]
    return toks


def comment_text(latent: LatentState, rng: np.random.Generator) -> str:
    prefix = [f"c{latent.topic}_{latent.valence_idx}_{j}" for j in range(3)]
    suffix = [f"nz{int(rng.integers(100))}" for _ in range(2)]
    return " ".join(prefix + suffix)


def _balanced_latents(n: int, n_topics: int, rng: np.random.Generator) -> list[LatentState]:
    topics = [i % n_topics for i in range(n)]
    valences = [i % len(VALENCE_GRID) for i in range(n)]
    rng.shuffle(topics)
    rng.shuffle(valences)
    return [LatentState(t, v) for t, v in zip(topics, valences)]


def _danmaku_xml(comments: list[tuple[float, str]]) -> bytes:
    lines = ["<?xml version=\"1.0\" encoding=\"UTF-8\"?>", "<i>"]
    for time_s, text in comments:
        p = f"{time_s:.3f},1,25,16777215,1600000000,0,synth,0"
        lines.append(f'  <d p="{p}">{text}</d>')
    lines.append("</i>")
    return "\n".join(lines).encode("utf-8")


def gen_pretrain_corpus(out_dir: str | Path, n_videos: int = 16,
                        segments_per_video: int = 16, n_topics: int = 8,
                        seed: int = 0, cfg: CorpusConfig | None = None,
                        frame_dim: int = 16, fps: float = 1.0) -> str:
    """Emit a synthetic corpus (manifest + danmaku XML + transcript JSONL +
    LCAF frames) whose segments carry latent (topic, valence) signal in every
    channel. Returns the manifest path."""
    if n_videos < 1 or n_topics < 2:
        raise ValueError("need n_videos >= 1 and n_topics >= 2")
    cfg = cfg or CorpusConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6E6]))
    sigma = cfg.sigma_s
    trim = cfg.trim_user_generated_s
    latents = _balanced_latents(n_videos * segments_per_video, n_topics, rng)
    manifest = {"videos": []}
    for vi in range(n_videos):
        vid = f"synth{vi:04d}"
        duration = trim + segments_per_video * sigma + trim
        seg_latents = latents[vi * segments_per_video:(vi + 1) * segments_per_video]

        comments: list[tuple[float, str]] = []
        transcript = []
        for w, latent in enumerate(seg_latents):
            start = trim + w * sigma
            transcript.append({"start": round(start, 3), "end": round(start + sigma, 3),
                               "text": " ".join(transcript_tokens(latent, rng)),
                               "lang": "en"})
            for _ in range(int(rng.integers(cfg.min_comments_per_segment,
                                            cfg.min_comments_per_segment + 4))):
                t = start + float(rng.uniform(0, sigma - 1e-3))
                comments.append((round(t, 3), comment_text(latent, rng)))
        comments.sort(key=lambda c: c[0])

        n_frames = int(np.ceil(duration * fps))
        frames = np.zeros((n_frames, frame_dim), dtype=np.float32)
        for i in range(n_frames):
            t = i / fps
            w = min(max(int((t - trim) // sigma), 0), segments_per_video - 1)
            frames[i] = (latent_embedding(_WORLD_FRAME, seg_latents[w], frame_dim)
                         + 0.3 * rng.normal(size=frame_dim))

        (out / f"{vid}.xml").write_bytes(_danmaku_xml(comments))
        with open(out / f"{vid}.jsonl", "w", encoding="utf-8") as fh:
            for entry in transcript:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
        write_frames(out / f"{vid}.lcaf", frames, fps)
        manifest["videos"].append({
            "id": vid, "category": "user_generated", "duration_s": duration,
            "comments_file": f"{vid}.xml", "transcript_file": f"{vid}.jsonl",
            "frames_file": f"{vid}.lcaf"})
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=1),
                             encoding="utf-8")
    return str(manifest_path)


def gen_downstream(out_dir: str | Path, n: int = 2000, task: str = "regression",
                   noise_profile: str = "clean", seed: int = 0, n_topics: int = 8,
                   frame_dim: int = 16, d_a: int = 12, d_v: int = 12,
                   sigma_s: float = 8.0) -> str:
    """Emit a labeled downstream dataset in the fusion-module JSONL format.

    Labels are the valence (regression) or the topic (classification). The
    "degraded" profile drowns the text/acoustic/visual views in noise while
    the media block stays clean, so LC augmentation carries exclusive signal.
    Returns the dataset path."""
    if n < 100:
        raise ValueError("gen_downstream needs n >= 100")
    if noise_profile not in ("clean", "degraded"):
        raise ValueError(f"unknown noise profile {noise_profile!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD01]))
    latents = _balanced_latents(n, n_topics, rng)
    degraded = noise_profile == "degraded"
    sig, noise = (0.25, 1.5) if degraded else (1.0, 0.3)
    l_a = l_v = 6
    duration = 12.0
    fps = 1.0
    dataset_path = out / "dataset.jsonl"
    with open(dataset_path, "w", encoding="utf-8") as fh:
        for i, latent in enumerate(latents):
            uid = f"utt{i:05d}"
            if degraded:
                toks = transcript_tokens(latent, rng, n_signal=1, n_noise=9)
            else:
                toks = transcript_tokens(latent, rng, n_signal=8, n_noise=2)
            acoustic = (sig * latent_embedding(_WORLD_ACOUSTIC, latent, d_a)
                        + noise * rng.normal(size=(l_a, d_a))).astype(np.float32)
            visual = (sig * latent_embedding(_WORLD_VISUAL, latent, d_v)
                      + noise * rng.normal(size=(l_v, d_v))).astype(np.float32)
            media_frames = (latent_embedding(_WORLD_FRAME, latent, frame_dim)
                            + 0.1 * rng.normal(size=(int(duration * fps), frame_dim))
                            ).astype(np.float32)
            write_frames(out / f"{uid}_a.lcaf", acoustic, fps=1.0)
            write_frames(out / f"{uid}_v.lcaf", visual, fps=1.0)
            write_frames(out / f"{uid}_m.lcaf", media_frames, fps)
            label = latent.valence if task == "regression" else f"topic{latent.topic}"
            media_text = " ".join(transcript_tokens(latent, rng, n_signal=6, n_noise=1))
            record = {
                "id": uid, "label": label, "text": " ".join(toks),
                "acoustic_file": f"{uid}_a.lcaf", "visual_file": f"{uid}_v.lcaf",
                "media": {"duration_s": duration,
                          "transcript": [{"start": 0.0, "end": duration,
                                          "text": media_text, "lang": "en"}],
                          "frames_file": f"{uid}_m.lcaf"},
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    return str(dataset_path)


def class_names(n_topics: int = 8) -> list[str]:
    return [f"topic{t}" for t in range(n_topics)]
