"""Acceptance gate: nine checks, each printing one PASS/FAIL line.

The heavy fixtures (synthetic corpus, smoke-trained checkpoint) are shared
session-wide; the stated runtime budgets apply to the marked work only.
"""

import json
import math
import time

import numpy as np
import pytest
import torch

from lcaffect import cli, gradcheck, nn, synthgen, v2lc
from lcaffect.fusion import (FusionConfig, ModalityFeatures, TaskSpec,
                             cross_modality_fuse, finetune, init_fusion,
                             load_downstream_jsonl)
from lcaffect.metrics import acc2, weighted_prf
from lcaffect.v2lc import build_targets, contrastive_loss

from test_fusion import numpy_fuse_oracle
from test_v2lc import targets_oracle


def report(capsys, num, ok, detail):
    with capsys.disabled():
        print(f"\nACCEPTANCE {num}: {'PASS' if ok else 'FAIL'} — {detail}")
    assert ok, detail


def test_1_target_matrix_oracle(capsys):
    rng = np.random.default_rng(0xACC1)
    t0 = time.time()
    checked = 0
    for case in range(200):
        n = int(rng.integers(2, 9))
        k_per = int(rng.integers(1, 6))
        ownership = [list(range(i * k_per, (i + 1) * k_per)) for i in range(n)]
        gen = torch.Generator().manual_seed(int(rng.integers(1 << 30)))
        c = nn.l2_normalize(torch.randn(n * k_per, 8, generator=gen,
                                        dtype=torch.float64))
        theta = [0.5, 0.9, 0.99][case % 3]
        got = build_targets(ownership, c, theta)
        if not torch.equal(got, targets_oracle(ownership, c, theta)):
            report(capsys, 1, False, f"mismatch at case {case}, theta={theta}")
        checked += 1
    elapsed = time.time() - t0
    report(capsys, 1, checked == 200 and elapsed < 10,
           f"target matrix equals brute-force oracle on {checked} batches "
           f"(theta in {{0.5, 0.9, 0.99}}) in {elapsed:.1f}s")


def test_2_loss_reduction_identity(capsys):
    s = torch.eye(2, dtype=torch.float64)
    hand = float(contrastive_loss(s, s, torch.eye(2).double(), 1.0))
    want = math.log(1 + math.exp(-1))
    if abs(hand - want) > 1e-6:
        report(capsys, 2, False, f"hand case gave {hand:.6f}, want {want:.6f}")

    rng = np.random.default_rng(0xACC2)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 9))
        k = int(rng.integers(n, 5 * n + 1))
        gen = torch.Generator().manual_seed(int(rng.integers(1 << 30)))
        se = nn.l2_normalize(torch.randn(n, 16, generator=gen, dtype=torch.float64))
        ce = nn.l2_normalize(torch.randn(k, 16, generator=gen, dtype=torch.float64))
        pos = rng.permutation(k)[:n]
        targets = torch.zeros(n, k, dtype=torch.float64)
        targets[torch.arange(n), torch.as_tensor(pos)] = 1.0
        tau = float(rng.uniform(0.5, 30))
        got = float(contrastive_loss(se, ce, targets, tau))
        direct = float(torch.nn.functional.cross_entropy(
            (se @ ce.T) * tau, torch.as_tensor(pos)))
        worst = max(worst, abs(got - direct))
    report(capsys, 2, worst < 1e-9,
           f"single-positive loss matches direct transcription, max |diff| = "
           f"{worst:.2e} over 100 cases; hand case = {hand:.6f}")


def test_3_gradient_correctness(capsys):
    t0 = time.time()
    results = gradcheck.run_all()
    elapsed = time.time() - t0
    worst = max(results.values())
    detail = ", ".join(f"{k}={v:.2e}" for k, v in results.items())
    report(capsys, 3, worst < 1e-4 and elapsed < 120,
           f"finite-difference checks: {detail} in {elapsed:.0f}s")


def test_4_fusion_fidelity(capsys):
    rng = np.random.default_rng(0xACC4)
    worst = 0.0
    for case in range(50):
        d = int(rng.choice([8, 16, 32]))
        heads = int(rng.choice([1, 2, 4]))
        cfg = FusionConfig(d_model=d, heads=heads, seed=case)
        params = init_fusion(cfg, vocab_size=8, d_a=6, d_v=5, d_lc=7, n_out=1,
                             dtype=torch.float64, block_scale=0.3)
        gen = torch.Generator().manual_seed(case)
        m = ModalityFeatures(
            f_t=torch.randn(int(rng.integers(1, 9)), d, generator=gen,
                            dtype=torch.float64),
            f_a=torch.randn(int(rng.integers(1, 9)), d, generator=gen,
                            dtype=torch.float64),
            f_v=torch.randn(int(rng.integers(1, 9)), d, generator=gen,
                            dtype=torch.float64))
        got = cross_modality_fuse(m, params, heads).z.detach().numpy()
        want = numpy_fuse_oracle(m, params, heads)
        worst = max(worst, float(np.abs(got - want).max()))
    report(capsys, 4, worst < 1e-12,
           f"fusion forward matches independent numpy transcription, "
           f"max |diff| = {worst:.2e} over 50 shape combinations")


def test_5_pretraining_smoke(capsys, synth_corpus, smoke_model):
    train, val, _ = synth_corpus
    result, loaded = smoke_model
    r1 = result.val_recall_at_1[-1]

    # untrained baseline at the same architecture must sit at chance
    cfg = v2lc.V2LCConfig(d_model=32, layers=2, heads=4, max_tokens=12,
                          max_comment_tokens=6, seed=1234)
    model = v2lc.init_v2lc(cfg, len(loaded.vocab),
                           int(train[0].frame_features.shape[1]))
    base_r1, _ = v2lc.retrieval_eval(model, loaded.frozen, loaded.vocab, cfg,
                                     train, n_candidates=64, n_probes=500)
    chance = 1 / 64
    sigma = math.sqrt(chance * (1 - chance) / 500)
    baseline_ok = abs(base_r1 - chance) <= 3 * sigma
    report(capsys, 5, r1 >= 0.25 and baseline_ok,
           f"smoke recall@1 = {r1:.3f} (need >= 0.25, chance {chance:.4f}); "
           f"untrained baseline {base_r1:.4f} within 3 sigma of chance: "
           f"{baseline_ok}")


def test_6_downstream_synthetic(capsys, tmp_path_factory, smoke_model):
    _, loaded = smoke_model
    root = tmp_path_factory.mktemp("downstream")
    task = TaskSpec(kind="regression")
    t0 = time.time()

    def run(profile, n, seed, use_lc, lr):
        path = synthgen.gen_downstream(root / f"{profile}{seed}{int(use_lc)}",
                                       n=n, task="regression",
                                       noise_profile=profile, seed=seed)
        samples = load_downstream_jsonl(path)
        cfg = FusionConfig(seed=seed, use_lc=use_lc, max_epochs=15, lr=lr)
        result = finetune(samples, task, cfg, lc=loaded if use_lc else None)
        return acc2(result.test_preds, result.test_labels)

    clean = run("clean", 2000, 0, use_lc=False, lr=1e-3)
    gains = []
    for seed in (0, 1, 2):
        vanilla = run("degraded", 1000, seed, use_lc=False, lr=3e-3)
        with_lc = run("degraded", 1000, seed, use_lc=True, lr=3e-3)
        gains.append(with_lc - vanilla)
    mean_gain = sum(gains) / len(gains)
    elapsed = time.time() - t0
    report(capsys, 6,
           clean >= 0.90 and mean_gain >= 0.05 and elapsed <= 600,
           f"clean vanilla Acc2 = {clean:.3f} (need >= 0.90); degraded LC gain "
           f"= {mean_gain * 100:+.1f} points over 3 seeds (need >= +5) "
           f"in {elapsed:.0f}s")


def test_7_metric_suite(capsys):
    _, _, f1 = weighted_prf(np.array([0, 1, 1, 1]), np.array([0, 0, 1, 1]))
    hand_ok = abs(f1 - 0.7333) < 1e-4

    rng = np.random.default_rng(0xACC7)
    worst = 0.0
    for _ in range(1000):
        n_cls = int(rng.integers(2, 7))
        y_true = rng.integers(0, n_cls, size=int(rng.integers(10, 60)))
        y_pred = rng.integers(0, n_cls, size=len(y_true))
        p, r, f = weighted_prf(y_pred, y_true)
        # confusion-matrix oracle
        ep = er = ef = 0.0
        for c in range(n_cls):
            support = int((y_true == c).sum())
            if support == 0:
                continue
            tp = int(((y_true == c) & (y_pred == c)).sum())
            fp = int(((y_true != c) & (y_pred == c)).sum())
            pc = tp / (tp + fp) if tp + fp else 0.0
            rc = tp / support
            fc = 2 * pc * rc / (pc + rc) if pc + rc else 0.0
            w = support / len(y_true)
            ep, er, ef = ep + w * pc, er + w * rc, ef + w * fc
        worst = max(worst, abs(p - ep), abs(r - er), abs(f - ef))
    report(capsys, 7, hand_ok and worst < 1e-12,
           f"hand weighted F1 = {f1:.4f} (want 0.7333); confusion-matrix "
           f"oracle max |diff| = {worst:.2e} over 1000 instances")


def test_8_pipeline_determinism(capsys, tmp_path_factory):
    def pipeline(root):
        gen_cfg = root / "gen.json"
        gen_cfg.write_text(json.dumps({"n_videos": 2, "segments_per_video": 6}))
        assert cli.main(["gen-synth", "--config", str(gen_cfg),
                         "--out", str(root / "corpus"), "--seed", "5"]) == 0
        train_cfg = root / "train.json"
        train_cfg.write_text(json.dumps({
            "d_model": 16, "layers": 1, "heads": 2, "epochs": 2,
            "max_tokens": 8, "max_comment_tokens": 4}))
        ck = root / "v2lc.bin"
        assert cli.main(["pretrain", "--config", str(train_cfg),
                         "--manifest", str(root / "corpus" / "manifest.json"),
                         "--out", str(ck), "--seed", "5"]) == 0
        ds_cfg = root / "ds.json"
        ds_cfg.write_text(json.dumps({"gen_kind": "downstream",
                                      "n_samples": 100}))
        assert cli.main(["gen-synth", "--config", str(ds_cfg),
                         "--out", str(root / "ds"), "--seed", "5"]) == 0
        assert cli.main(["extract", "--checkpoint", str(ck),
                         "--data", str(root / "ds" / "dataset.jsonl"),
                         "--out", str(root / "lc")]) == 0
        ft_cfg = root / "ft.json"
        ft_cfg.write_text(json.dumps({"fusion_d_model": 8, "fusion_heads": 2,
                                      "max_epochs": 2, "batch_size": 16}))
        metrics_out = root / "metrics.json"
        assert cli.main(["finetune", "--config", str(ft_cfg),
                         "--data", str(root / "ds" / "dataset.jsonl"),
                         "--checkpoint", str(ck), "--out", str(metrics_out),
                         "--seed", "5"]) == 0
        lc_files = b"".join(p.read_bytes()
                            for p in sorted((root / "lc").iterdir()))
        return ck.read_bytes(), lc_files, metrics_out.read_bytes()

    a = pipeline(tmp_path_factory.mktemp("runA"))
    b = pipeline(tmp_path_factory.mktemp("runB"))
    same = [x == y for x, y in zip(a, b)]
    report(capsys, 8, all(same),
           f"two identically seeded pipeline runs: checkpoint bytes equal = "
           f"{same[0]}, extracted features equal = {same[1]}, metric JSON "
           f"equal = {same[2]}")


def test_9_data_rule_conformance(capsys):
    from lcaffect.corpus import (CorpusConfig, LiveComment, Segment,
                                 VideoRecord, sample_epoch, segment_video,
                                 split_validation, trim_and_filter)
    cfg = CorpusConfig()
    checks = []

    video = VideoRecord(id="v", category="user_generated", duration_s=100.0,
                        comments=[LiveComment(t, "好看") for t in (5, 20, 95)])
    out, _ = trim_and_filter(video, cfg)
    checks.append(("trim 15s", [c.time_s for c in out.comments] == [20]))

    video = VideoRecord(id="v", category="movie", duration_s=7200.0,
                        comments=[LiveComment(200.0, "好看")])
    out, _ = trim_and_filter(video, cfg)
    checks.append(("trim 5min", out.comments == []))

    video = VideoRecord(id="v", category="user_generated", duration_s=100.0,
                        comments=[LiveComment(20.0, "好"), LiveComment(21.0, "好看")])
    out, _ = trim_and_filter(video, cfg)
    checks.append(("min 2 chars", [c.text for c in out.comments] == ["好看"]))

    video = VideoRecord(id="v", category="user_generated", duration_s=100.0,
                        comments=[])
    video.range_start_s, video.range_end_s = 0.0, 100.0
    checks.append(("sigma=8 count", len(segment_video(video, cfg)) == 12))

    def seg(i, n_comments):
        return Segment("v", i, 8.0 * i, 8.0 * (i + 1), "t", np.zeros((8, 1)),
                       [LiveComment(8.0 * i + j * 0.1, "xx")
                        for j in range(n_comments)])

    from lcaffect.corpus import drop_sparse_segments
    kept = drop_sparse_segments([seg(0, 4), seg(1, 5)], cfg)
    checks.append(("min-5-comment drop",
                   [s.index for s in kept] == [1]))

    segs = [seg(i, 6) for i in range(16)]
    batches = sample_epoch(segs, cfg, epoch=0)
    checks.append(("K=5N batches",
                   all(b.k_total == 5 * b.n for b in batches)
                   and any(b.k_total == 40 for b in batches)))

    train, val = split_validation([seg(i, 6) for i in range(100)], cfg)
    checks.append(("10% split", len(val) == 10 and len(train) == 90))

    ok = all(passed for _, passed in checks)
    failed = [name for name, passed in checks if not passed]
    report(capsys, 9, ok,
           f"data-rule examples all exact ({len(checks)} checks)"
           + (f"; failed: {failed}" if failed else ""))
