"""Shared fixtures: one synthetic corpus and one smoke-trained checkpoint per session."""

import pytest

from lcaffect import synthgen, v2lc
from lcaffect.corpus import CorpusConfig, load_manifest, prepare_corpus

SMOKE_SEED = 7


@pytest.fixture(scope="session")
def synth_corpus(tmp_path_factory):
    """256-segment pretrain corpus over 8 topics: (train, val, manifest_path)."""
    root = tmp_path_factory.mktemp("corpus")
    manifest = synthgen.gen_pretrain_corpus(root, n_videos=16,
                                            segments_per_video=16,
                                            n_topics=8, seed=SMOKE_SEED)
    videos = load_manifest(manifest)
    train, val = prepare_corpus(videos, CorpusConfig(seed=SMOKE_SEED))
    return train, val, manifest


@pytest.fixture(scope="session")
def smoke_model(tmp_path_factory, synth_corpus):
    """30-epoch smoke pretraining run shared by retrieval and downstream tests."""
    train, val, _ = synth_corpus
    out = tmp_path_factory.mktemp("smoke") / "v2lc.bin"
    cfg = v2lc.V2LCConfig(d_model=32, layers=2, heads=4, epochs=30,
                          max_tokens=12, max_comment_tokens=6, lr=3e-3,
                          seed=SMOKE_SEED)
    result = v2lc.pretrain(train, val, cfg, out)
    return result, v2lc.load_pretrained(result.checkpoint_path)
