"""Command-line entry point orchestrating the pipeline end to end.

Subcommands: stats, gen-synth, pretrain, extract, finetune, eval, gradcheck.
Numeric settings come from a JSON config (unknown keys rejected); flags carry
only paths, the seed, and subcommand switches. Exit codes: 0 success,
2 config error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import fusion as fz
from . import gradcheck, metrics, synthgen, v2lc
from .corpus import CorpusConfig, corpus_stats, load_manifest, prepare_corpus
from .errors import ConfigError, DataError, LcaffectError
from .framefile import write_frames

CONFIG_DEFAULTS: dict = {
    # corpus
    "sigma_s": 8.0,
    "frames_per_segment": 8,
    "min_comment_chars": 2,
    "min_comments_per_segment": 5,
    "comments_per_segment": 5,
    "validation_fraction": 0.10,
    "trim_user_generated_s": 15.0,
    "trim_movie_s": 300.0,
    "trim_tv_show_s": 90.0,
    "batch_segments": 8,
    # v2lc
    "d_model": 64,
    "layers": 2,
    "heads": 4,
    "vocab_size": 4096,
    "max_tokens": 32,
    "max_comment_tokens": 8,
    "theta": 0.9,
    "tau_init": 14.3,
    "tau_max": 100.0,
    "epochs": 10,
    "lr": 1e-3,
    # fusion / fine-tuning
    "fusion_d_model": 32,
    "fusion_heads": 4,
    "fusion_max_text_tokens": 16,
    "head_hidden": 32,
    "fusion_lr": 1e-3,
    "batch_size": 32,
    "max_epochs": 20,
    "patience": 5,
    "task": "regression",
    "class_names": [],
    "label_range": [-1.0, 1.0],
    "acc2_mode": "neg_vs_nonneg",
    # synthetic generators
    "gen_kind": "pretrain",
    "n_videos": 16,
    "segments_per_video": 16,
    "n_topics": 8,
    "n_samples": 2000,
    "noise_profile": "clean",
    "frame_dim": 16,
    # general
    "seed": 0,
    "precision": "f32",
}


def load_config(path: str | None, seed_override: int | None = None) -> dict:
    cfg = dict(CONFIG_DEFAULTS)
    if path:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        unknown = sorted(set(user) - set(CONFIG_DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update(user)
    if seed_override is not None:
        cfg["seed"] = seed_override
    return cfg


def corpus_config(cfg: dict) -> CorpusConfig:
    return CorpusConfig(
        sigma_s=cfg["sigma_s"], frames_per_segment=cfg["frames_per_segment"],
        min_comment_chars=cfg["min_comment_chars"],
        min_comments_per_segment=cfg["min_comments_per_segment"],
        comments_per_segment=cfg["comments_per_segment"],
        validation_fraction=cfg["validation_fraction"],
        trim_user_generated_s=cfg["trim_user_generated_s"],
        trim_movie_s=cfg["trim_movie_s"], trim_tv_show_s=cfg["trim_tv_show_s"],
        batch_segments=cfg["batch_segments"], seed=cfg["seed"])


def v2lc_config(cfg: dict) -> v2lc.V2LCConfig:
    return v2lc.V2LCConfig(
        d_model=cfg["d_model"], layers=cfg["layers"], heads=cfg["heads"],
        vocab_size=cfg["vocab_size"], max_tokens=cfg["max_tokens"],
        max_comment_tokens=cfg["max_comment_tokens"], sigma_s=cfg["sigma_s"],
        frames_per_segment=cfg["frames_per_segment"], theta=cfg["theta"],
        tau_init=cfg["tau_init"], tau_max=cfg["tau_max"],
        batch_n=cfg["batch_segments"],
        comments_per_segment=cfg["comments_per_segment"],
        epochs=cfg["epochs"], lr=cfg["lr"], seed=cfg["seed"])


def fusion_config(cfg: dict, use_lc: bool) -> fz.FusionConfig:
    return fz.FusionConfig(
        d_model=cfg["fusion_d_model"], heads=cfg["fusion_heads"],
        max_text_tokens=cfg["fusion_max_text_tokens"],
        head_hidden=cfg["head_hidden"], lr=cfg["fusion_lr"],
        batch_size=cfg["batch_size"], max_epochs=cfg["max_epochs"],
        patience=cfg["patience"], use_lc=use_lc, seed=cfg["seed"])


def task_spec(cfg: dict) -> fz.TaskSpec:
    if cfg["task"] not in ("regression", "classification"):
        raise ConfigError(f"unknown task {cfg['task']!r}")
    if cfg["task"] == "classification" and not cfg["class_names"]:
        raise ConfigError("classification task needs class_names")
    return fz.TaskSpec(kind=cfg["task"], label_range=tuple(cfg["label_range"]),
                       class_names=list(cfg["class_names"]))


def _emit(obj: dict) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# Subcommands

def cmd_stats(args) -> int:
    videos = load_manifest(args.manifest)
    report = corpus_stats(videos)
    text = json.dumps(report, sort_keys=True, indent=1)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text)
    return 0


def cmd_gen_synth(args) -> int:
    cfg = load_config(args.config, args.seed)
    if cfg["gen_kind"] == "pretrain":
        path = synthgen.gen_pretrain_corpus(
            args.out, n_videos=cfg["n_videos"],
            segments_per_video=cfg["segments_per_video"], n_topics=cfg["n_topics"],
            seed=cfg["seed"], cfg=corpus_config(cfg), frame_dim=cfg["frame_dim"])
    elif cfg["gen_kind"] == "downstream":
        path = synthgen.gen_downstream(
            args.out, n=cfg["n_samples"], task=cfg["task"],
            noise_profile=cfg["noise_profile"], seed=cfg["seed"],
            n_topics=cfg["n_topics"], frame_dim=cfg["frame_dim"])
    else:
        raise ConfigError(f"unknown gen_kind {cfg['gen_kind']!r}")
    _emit({"event": "generated", "kind": cfg["gen_kind"], "path": path})
    if args.report:
        _report_probes(args, cfg)
    return 0


def _report_probes(args, cfg: dict) -> None:
    """Generator acceptance probes: single-modality and LC-feature linear probes."""
    data_dir = Path(args.out)
    ds_path = data_dir / "dataset.jsonl"
    if not ds_path.exists():
        return
    samples = fz.load_downstream_jsonl(ds_path)
    labels = [s.label for s in samples]
    if all(isinstance(l, (int, float)) for l in labels):
        labels = ["neg" if l < 0 else "nonneg" for l in labels]
    for name, feats in (
            ("acoustic", np.stack([s.acoustic.mean(axis=0) for s in samples])),
            ("visual", np.stack([s.visual.mean(axis=0) for s in samples]))):
        acc, f1 = fz.linear_probe(feats, labels, seed=cfg["seed"])
        _emit({"event": "probe", "features": name, "accuracy": acc, "weighted_f1": f1})
    if args.checkpoint:
        loaded = v2lc.load_pretrained(args.checkpoint)
        lc_feats = np.stack([v2lc.extract_lc_features(s.media, loaded).mean(axis=0)
                             for s in samples])
        acc, f1 = fz.linear_probe(lc_feats, labels, seed=cfg["seed"])
        _emit({"event": "probe", "features": "lc", "accuracy": acc, "weighted_f1": f1})


def cmd_pretrain(args) -> int:
    cfg = load_config(args.config, args.seed)
    videos = load_manifest(args.manifest)
    train, val = prepare_corpus(videos, corpus_config(cfg))
    result = v2lc.pretrain(train, val, v2lc_config(cfg), args.out, log_fn=_emit)
    _emit({"event": "done", "checkpoint": result.checkpoint_path,
           "final_val_recall_at_1": result.val_recall_at_1[-1]})
    return 0


def cmd_extract(args) -> int:
    loaded = v2lc.load_pretrained(args.checkpoint)
    samples = fz.load_downstream_jsonl(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    index = {}
    for s in samples:
        if s.media is None:
            raise DataError(f"sample {s.id}: no media block for LC extraction")
        feats = v2lc.extract_lc_features(s.media, loaded)
        path = out / f"{s.id}_lc.lcaf"
        write_frames(path, feats, fps=2.0 / loaded.cfg.sigma_s)
        index[s.id] = path.name
    (out / "lc_index.json").write_text(json.dumps(index, sort_keys=True),
                                       encoding="utf-8")
    _emit({"event": "extracted", "n": len(index), "out": str(out)})
    return 0


def cmd_finetune(args) -> int:
    cfg = load_config(args.config, args.seed)
    samples = fz.load_downstream_jsonl(args.data)
    task = task_spec(cfg)
    use_lc = bool(args.checkpoint) and not args.no_lc
    loaded = v2lc.load_pretrained(args.checkpoint) if use_lc else None
    result = fz.finetune(samples, task, fusion_config(cfg, use_lc), lc=loaded,
                         log_fn=_emit)
    if task.kind == "regression":
        report = metrics.regression_report(result.test_preds, result.test_labels,
                                           acc2_mode=cfg["acc2_mode"])
    else:
        report = metrics.classification_report(result.test_preds, result.test_labels)
    payload = {"event": "done", "best_epoch": result.best_epoch,
               "test_metrics": report.to_dict()}
    _emit(payload)
    if args.out:
        Path(args.out).write_text(json.dumps(payload, sort_keys=True),
                                  encoding="utf-8")
    return 0


def cmd_eval(args) -> int:
    try:
        obj = json.loads(Path(args.preds).read_text(encoding="utf-8"))
        preds, labels = obj["preds"], obj["labels"]
        kind = obj.get("task", "regression")
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"bad predictions file {args.preds}: {exc}") from exc
    if kind == "regression":
        report = metrics.regression_report(
            preds, labels, acc2_mode=obj.get("acc2_mode", "neg_vs_nonneg"),
            include_acc7=bool(obj.get("include_acc7", False)))
    else:
        report = metrics.classification_report(preds, labels)
    print(report.format_table())
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), sort_keys=True),
                                  encoding="utf-8")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = load_config(args.config, args.seed)
    results = gradcheck.run_all(seed=cfg["seed"])
    ok = all(v < 1e-4 for v in results.values())
    for name, err in results.items():
        _emit({"event": "gradcheck", "composite": name, "max_rel_error": err,
               "pass": err < 1e-4})
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lcaffect")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **flags):
        p = sub.add_parser(name)
        for flag, required in flags.items():
            if flag in ("report", "no_lc"):
                p.add_argument(f"--{flag.replace('_', '-')}", action="store_true")
            elif flag == "seed":
                p.add_argument("--seed", type=int, default=None)
            else:
                p.add_argument(f"--{flag.replace('_', '-')}", required=required)
        p.set_defaults(fn=fn)
        return p

    add("stats", cmd_stats, manifest=True, out=False)
    add("gen-synth", cmd_gen_synth, config=False, out=True, seed=False,
        report=False, checkpoint=False)
    add("pretrain", cmd_pretrain, config=False, manifest=True, out=True, seed=False)
    add("extract", cmd_extract, checkpoint=True, data=True, out=True)
    add("finetune", cmd_finetune, config=False, data=True, checkpoint=False,
        out=False, seed=False, no_lc=False)
    add("eval", cmd_eval, preds=True, out=False)
    add("gradcheck", cmd_gradcheck, config=False, seed=False)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except LcaffectError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
