"""Live-comment corpus toolkit: parsing, alignment, segmentation, sampling, stats."""

from __future__ import annotations

import json
import xml.etree.ElementTree as ET
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, NotXml, TooFewSegments, VideoTooShort
from .framefile import FrameFile, frame_row_at, read_frames

CATEGORIES = ("user_generated", "tv_show", "movie")


@dataclass(frozen=True)
class LiveComment:
    """One timestamped viewer message aligned to a video timeline."""
    time_s: float
    text: str
    mode: int = 1
    color: int = 0xFFFFFF
    sender: str = ""


@dataclass(frozen=True)
class TranscriptEntry:
    start_s: float
    end_s: float
    text: str
    lang: str = "zh"


@dataclass
class VideoRecord:
    id: str
    category: str
    duration_s: float
    comments: list[LiveComment] = field(default_factory=list)
    transcript: list[TranscriptEntry] = field(default_factory=list)
    frames: Optional[FrameFile] = None
    frames_ref: str = ""
    # effective playable range after trimming; None until trim_and_filter
    range_start_s: Optional[float] = None
    range_end_s: Optional[float] = None


@dataclass
class Segment:
    """A sigma-second window of one video: transcript text, frame rows, comments."""
    video_id: str
    index: int
    start_s: float
    end_s: float
    transcript_text: str
    frame_features: np.ndarray  # [frames_per_segment, frame_dim]
    comments: list[LiveComment]

    @property
    def key(self) -> str:
        return f"{self.video_id}#{self.index}"


@dataclass
class CorpusConfig:
    sigma_s: float = 8.0
    frames_per_segment: int = 8
    min_comment_chars: int = 2
    min_comments_per_segment: int = 5
    comments_per_segment: int = 5  # k
    validation_fraction: float = 0.10
    trim_user_generated_s: float = 15.0
    trim_movie_s: float = 300.0
    trim_tv_show_s: float = 90.0
    batch_segments: int = 8  # N
    seed: int = 0

    def trim_for(self, category: str) -> float:
        return {
            "user_generated": self.trim_user_generated_s,
            "movie": self.trim_movie_s,
            "tv_show": self.trim_tv_show_s,
        }[category]


@dataclass
class ParseReport:
    parsed: int = 0
    skipped: int = 0


@dataclass
class FilterReport:
    kept: int = 0
    removed_out_of_range: int = 0
    removed_short_text: int = 0

    @property
    def removed(self) -> int:
        return self.removed_out_of_range + self.removed_short_text


@dataclass
class Batch:
    """One contrastive training batch: N segments, K = k*N sampled comments."""
    segments: list[Segment]
    comments: list[LiveComment]
    ownership: list[list[int]]  # per segment, its k comment column indices

    @property
    def n(self) -> int:
        return len(self.segments)

    @property
    def k_total(self) -> int:
        return len(self.comments)


def parse_danmaku_xml(data: bytes) -> tuple[list[LiveComment], ParseReport]:
    """Parse a danmaku XML document into LiveComments sorted by time.

    Each comment is a <d p="time,mode,fontsize,color,timestamp,pool,sender,rowid">
    element; entries with malformed `p` attributes or empty bodies are skipped
    and counted in the report.
    """
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise NotXml(f"unparseable danmaku document: {exc}") from exc
    report = ParseReport()
    out: list[LiveComment] = []
    for el in root.iter("d"):
        text = (el.text or "").strip()
        fields = (el.get("p") or "").split(",")
        if not text or len(fields) < 8:
            report.skipped += 1
            continue
        try:
            time_s = float(fields[0])
            mode = int(fields[1])
            color = int(fields[3])
        except ValueError:
            report.skipped += 1
            continue
        if time_s < 0:
            report.skipped += 1
            continue
        out.append(LiveComment(time_s=time_s, text=text, mode=mode,
                               color=color, sender=fields[6]))
        report.parsed += 1
    out.sort(key=lambda c: c.time_s)  # stable: ties keep document order
    return out, report


def trim_and_filter(video: VideoRecord, cfg: CorpusConfig) -> tuple[VideoRecord, FilterReport]:
    """Drop comments inside the per-category trim windows or with too-short text.

    The effective playable range [trim, duration - trim] is recorded on the
    returned record. Idempotent: re-applying to the output changes nothing.
    """
    trim = cfg.trim_for(video.category)
    if video.duration_s <= 2 * trim:
        raise VideoTooShort(
            f"video {video.id}: duration {video.duration_s}s <= 2x trim {trim}s")
    lo, hi = trim, video.duration_s - trim
    report = FilterReport()
    kept: list[LiveComment] = []
    for c in video.comments:
        if not (lo <= c.time_s <= hi):
            report.removed_out_of_range += 1
        elif len(c.text) < cfg.min_comment_chars:
            report.removed_short_text += 1
        else:
            kept.append(c)
    report.kept = len(kept)
    trimmed = replace(video, comments=kept, range_start_s=lo, range_end_s=hi)
    return trimmed, report


def segment_video(video: VideoRecord, cfg: CorpusConfig) -> list[Segment]:
    """Cut the trimmed range into consecutive sigma-second windows.

    Incomplete tail windows are dropped. Comments use half-open windows
    [start, end); transcript entries join a window when their [start, end)
    intersects it; frame rows are sampled at window-midpoint positions
    start + (i + 0.5) * sigma / frames_per_segment.
    """
    if video.range_start_s is None or video.range_end_s is None:
        raise DataError(f"video {video.id}: segment_video requires a trimmed video")
    sigma = cfg.sigma_s
    lo, hi = video.range_start_s, video.range_end_s
    n_windows = int(np.floor((hi - lo) / sigma + 1e-9))
    segments: list[Segment] = []
    for w in range(n_windows):
        start = lo + w * sigma
        end = start + sigma
        comments = [c for c in video.comments if start <= c.time_s < end]
        entries = [e for e in video.transcript if e.start_s < end and e.end_s > start]
        entries.sort(key=lambda e: e.start_s)
        text = " ".join(e.text for e in entries)
        if video.frames is not None:
            rows = [frame_row_at(video.frames,
                                 start + (i + 0.5) * sigma / cfg.frames_per_segment)
                    for i in range(cfg.frames_per_segment)]
            feats = np.stack(rows).astype(np.float32)
        else:
            feats = np.zeros((cfg.frames_per_segment, 1), dtype=np.float32)
        segments.append(Segment(video_id=video.id, index=w, start_s=start, end_s=end,
                                transcript_text=text, frame_features=feats,
                                comments=comments))
    return segments


def drop_sparse_segments(segments: Sequence[Segment], cfg: CorpusConfig) -> list[Segment]:
    """Keep only segments with at least min_comments_per_segment comments."""
    return [s for s in segments if len(s.comments) >= cfg.min_comments_per_segment]


def split_validation(segments: Sequence[Segment],
                     cfg: CorpusConfig) -> tuple[list[Segment], list[Segment]]:
    """Deterministic seeded shuffle; first ceil(fraction * n) go to validation."""
    n = len(segments)
    if n < 10:
        raise TooFewSegments(f"need >= 10 segments to split, got {n}")
    order = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5911])).permutation(n)
    n_val = int(np.ceil(cfg.validation_fraction * n))
    val = [segments[i] for i in order[:n_val]]
    train = [segments[i] for i in order[n_val:]]
    return train, val


def _segment_entropy(seed: int, epoch: int, seg: Segment) -> np.random.Generator:
    ident = zlib.crc32(seg.key.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, ident]))


def sample_epoch(segments: Sequence[Segment], cfg: CorpusConfig, epoch: int) -> list[Batch]:
    """Build the contrastive batches for one epoch.

    Each segment contributes exactly k comments drawn without replacement by a
    generator seeded from (cfg.seed, epoch, segment identity); segment order is
    reshuffled per epoch; trailing groups with fewer than 2 segments are dropped.
    """
    k = cfg.comments_per_segment
    order = np.random.default_rng(
        np.random.SeedSequence([cfg.seed, epoch, 0xBA7C])).permutation(len(segments))
    batches: list[Batch] = []
    for b0 in range(0, len(order), cfg.batch_segments):
        group = [segments[i] for i in order[b0:b0 + cfg.batch_segments]]
        if len(group) < 2:
            continue
        comments: list[LiveComment] = []
        ownership: list[list[int]] = []
        for seg in group:
            rng = _segment_entropy(cfg.seed, epoch, seg)
            picks = rng.choice(len(seg.comments), size=k, replace=False)
            cols = list(range(len(comments), len(comments) + k))
            comments.extend(seg.comments[int(i)] for i in picks)
            ownership.append(cols)
        batches.append(Batch(segments=group, comments=comments, ownership=ownership))
    return batches


def corpus_stats(videos: Sequence[VideoRecord]) -> dict:
    """Table-style statistics per category and overall."""
    def bucket(vs: Sequence[VideoRecord]) -> dict:
        if not vs:
            return {"empty": True, "n_videos": 0, "n_comments": 0,
                    "total_duration_h": 0.0, "avg_duration_s": 0.0,
                    "avg_comments_per_video": 0.0, "avg_chars_per_comment": 0.0}
        n_comments = sum(len(v.comments) for v in vs)
        total_dur = sum(v.duration_s for v in vs)
        total_chars = sum(len(c.text) for v in vs for c in v.comments)
        return {
            "empty": False,
            "n_videos": len(vs),
            "n_comments": n_comments,
            "total_duration_h": total_dur / 3600.0,
            "avg_duration_s": total_dur / len(vs),
            "avg_comments_per_video": n_comments / len(vs),
            "avg_chars_per_comment": (total_chars / n_comments) if n_comments else 0.0,
        }

    report = {cat: bucket([v for v in videos if v.category == cat]) for cat in CATEGORIES}
    report["overall"] = bucket(list(videos))
    return report


# --------------------------------------------------------------------------
# File-format loaders (transcript JSONL, corpus manifest)

def load_transcript_jsonl(path: str | Path) -> list[TranscriptEntry]:
    entries: list[TranscriptEntry] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                entry = TranscriptEntry(start_s=float(obj["start"]), end_s=float(obj["end"]),
                                        text=str(obj["text"]), lang=str(obj.get("lang", "zh")))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: bad transcript entry: {exc}") from exc
            if entry.start_s >= entry.end_s:
                raise DataError(f"{path}:{lineno}: start >= end")
            entries.append(entry)
    entries.sort(key=lambda e: e.start_s)
    return entries


def load_manifest(path: str | Path) -> list[VideoRecord]:
    """Load a corpus manifest JSON and every referenced comment/transcript/frame file."""
    path = Path(path)
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: bad manifest: {exc}") from exc
    base = path.parent
    videos: list[VideoRecord] = []
    for entry in manifest.get("videos", []):
        try:
            vid = str(entry["id"])
            category = str(entry["category"])
            duration = float(entry["duration_s"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: bad video entry: {exc}") from exc
        if category not in CATEGORIES:
            raise DataError(f"{path}: video {vid}: unknown category {category!r}")
        if duration <= 0:
            raise DataError(f"{path}: video {vid}: non-positive duration")
        comments, _ = parse_danmaku_xml((base / entry["comments_file"]).read_bytes())
        for c in comments:
            if c.time_s > duration:
                raise DataError(f"{path}: video {vid}: comment at {c.time_s}s past duration")
        transcript = load_transcript_jsonl(base / entry["transcript_file"])
        frames = read_frames(base / entry["frames_file"])
        videos.append(VideoRecord(id=vid, category=category, duration_s=duration,
                                  comments=comments, transcript=transcript,
                                  frames=frames, frames_ref=str(entry["frames_file"])))
    return videos


def prepare_corpus(videos: Sequence[VideoRecord],
                   cfg: CorpusConfig) -> tuple[list[Segment], list[Segment]]:
    """trim -> segment -> drop sparse -> validation split, over a whole corpus."""
    segments: list[Segment] = []
    for video in videos:
        trimmed, _ = trim_and_filter(video, cfg)
        segments.extend(segment_video(trimmed, cfg))
    segments = drop_sparse_segments(segments, cfg)
    return split_validation(segments, cfg)
