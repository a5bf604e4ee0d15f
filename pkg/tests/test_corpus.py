import numpy as np
import pytest

from lcaffect import corpus as cp
from lcaffect.errors import NotXml, TooFewSegments, VideoTooShort
from lcaffect.framefile import FrameFile


def make_video(duration=100.0, times=(), category="user_generated", texts=None,
               transcript=(), frames=None):
    texts = texts or ["好看"] * len(times)
    comments = [cp.LiveComment(time_s=t, text=x) for t, x in zip(times, texts)]
    return cp.VideoRecord(id="v0", category=category, duration_s=duration,
                          comments=comments, transcript=list(transcript),
                          frames=frames)


class TestParseDanmaku:
    def test_single_entry_field_mapping(self):
        doc = b'<i><d p="12.5,1,25,16777215,1600000000,0,abc,1">233</d></i>'
        comments, report = cp.parse_danmaku_xml(doc)
        assert len(comments) == 1
        c = comments[0]
        assert (c.time_s, c.text, c.mode, c.color) == (12.5, "233", 1, 16777215)
        assert c.sender == "abc"
        assert report.skipped == 0

    def test_empty_document(self):
        comments, report = cp.parse_danmaku_xml(b"<i></i>")
        assert comments == [] and report.skipped == 0

    def test_sorted_by_time(self):
        doc = (b'<i><d p="9.0,1,25,0,0,0,a,1">late</d>'
               b'<d p="3.0,1,25,0,0,0,b,2">early</d></i>')
        comments, _ = cp.parse_danmaku_xml(doc)
        assert [c.time_s for c in comments] == [3.0, 9.0]

    def test_malformed_and_empty_skipped(self):
        doc = (b'<i><d p="1.0,x,25,0,0,0,a,1">bad mode</d>'
               b'<d p="2.0,1,25,0,0,0,a,2"></d>'
               b'<d p="3.0,1">short p</d>'
               b'<d p="4.0,1,25,7,0,0,a,3">ok</d></i>')
        comments, report = cp.parse_danmaku_xml(doc)
        assert [c.text for c in comments] == ["ok"]
        assert report.skipped == 3

    def test_not_xml(self):
        with pytest.raises(NotXml):
            cp.parse_danmaku_xml(b"this is not xml <<<")

    def test_stable_tie_order(self):
        doc = (b'<i><d p="5.0,1,25,0,0,0,a,1">first</d>'
               b'<d p="5.0,1,25,0,0,0,a,2">second</d></i>')
        comments, _ = cp.parse_danmaku_xml(doc)
        assert [c.text for c in comments] == ["first", "second"]


class TestTrimAndFilter:
    def test_user_generated_window(self):
        video = make_video(100, times=(5, 20, 95))
        out, report = cp.trim_and_filter(video, cp.CorpusConfig())
        assert [c.time_s for c in out.comments] == [20]
        assert (out.range_start_s, out.range_end_s) == (15, 85)
        assert report.removed_out_of_range == 2

    def test_short_text_removed(self):
        video = make_video(100, times=(20, 30), texts=["好", "好看"])
        out, report = cp.trim_and_filter(video, cp.CorpusConfig())
        assert [c.text for c in out.comments] == ["好看"]
        assert report.removed_short_text == 1

    def test_movie_trim(self):
        video = make_video(7200, times=(200,), category="movie")
        out, _ = cp.trim_and_filter(video, cp.CorpusConfig())
        assert out.comments == []
        assert (out.range_start_s, out.range_end_s) == (300, 6900)

    def test_too_short(self):
        with pytest.raises(VideoTooShort):
            cp.trim_and_filter(make_video(29.0), cp.CorpusConfig())

    def test_idempotent(self):
        video = make_video(100, times=(5, 20, 40, 95))
        cfg = cp.CorpusConfig()
        once, _ = cp.trim_and_filter(video, cfg)
        twice, rep = cp.trim_and_filter(once, cfg)
        assert twice.comments == once.comments
        assert rep.removed == 0

    def test_comment_conservation(self):
        video = make_video(100, times=(5, 20, 30, 95), texts=["好看", "x", "好看", "好看"])
        out, report = cp.trim_and_filter(video, cp.CorpusConfig())
        assert len(out.comments) + report.removed == len(video.comments)


class TestSegmentVideo:
    def _trimmed(self, duration, times=(), transcript=(), frames=None,
                 category="user_generated"):
        video = make_video(duration, times=times, transcript=transcript,
                          frames=frames, category=category)
        out, _ = cp.trim_and_filter(video, cp.CorpusConfig())
        return out

    def test_window_count_untrimmed_range(self):
        video = make_video(100)
        video.range_start_s, video.range_end_s = 0.0, 100.0
        segs = cp.segment_video(video, cp.CorpusConfig())
        assert len(segs) == 12
        assert [s.start_s for s in segs] == [8.0 * i for i in range(12)]

    def test_window_count_trimmed(self):
        segs = cp.segment_video(self._trimmed(100), cp.CorpusConfig())
        assert len(segs) == 8
        assert segs[0].start_s == 15 and segs[-1].start_s == 71

    def test_frame_midpoint_rule(self):
        frames = FrameFile(features=np.arange(100, dtype=np.float32)[:, None], fps=1.0)
        segs = cp.segment_video(self._trimmed(100, frames=frames), cp.CorpusConfig())
        # timestamps 15.5 .. 22.5 at 1 fps -> rows 15..22
        assert segs[0].frame_features[:, 0].tolist() == [15, 16, 17, 18, 19, 20, 21, 22]
        assert segs[0].frame_features.shape == (8, 1)

    def test_comment_windows_half_open(self):
        segs = cp.segment_video(self._trimmed(100, times=(22.9, 23.0)), cp.CorpusConfig())
        assert [c.time_s for c in segs[0].comments] == [22.9]
        assert [c.time_s for c in segs[1].comments] == [23.0]

    def test_partition_property(self):
        times = tuple(np.linspace(16, 80, 50))
        segs = cp.segment_video(self._trimmed(100, times=times), cp.CorpusConfig())
        seen = [c.time_s for s in segs for c in s.comments]
        assert len(seen) == len(set(seen))
        for s in segs:
            assert s.end_s - s.start_s == pytest.approx(8.0)
            assert s.start_s >= 15 and s.end_s <= 85

    def test_transcript_overlap_join(self):
        transcript = [cp.TranscriptEntry(14.0, 16.0, "a"),
                      cp.TranscriptEntry(20.0, 26.0, "b"),
                      cp.TranscriptEntry(23.0, 24.0, "c")]
        segs = cp.segment_video(self._trimmed(100, transcript=transcript),
                                cp.CorpusConfig())
        assert segs[0].transcript_text == "a b"    # window [15, 23)
        assert segs[1].transcript_text == "b c"    # window [23, 31)


class TestDropSparse:
    def test_threshold(self):
        cfg = cp.CorpusConfig()
        four = cp.Segment("v", 0, 0, 8, "", np.zeros((8, 1)),
                          [cp.LiveComment(i, "xx") for i in range(4)])
        five = cp.Segment("v", 1, 8, 16, "", np.zeros((8, 1)),
                          [cp.LiveComment(8 + i * 0.1, "xx") for i in range(5)])
        assert cp.drop_sparse_segments([four, five], cfg) == [five]

    def test_empty(self):
        assert cp.drop_sparse_segments([], cp.CorpusConfig()) == []


def _segments(n, n_comments=6):
    return [cp.Segment("v", i, 8.0 * i, 8.0 * (i + 1), f"t{i}", np.zeros((8, 1)),
                       [cp.LiveComment(8.0 * i + j * 0.5, f"c{i}_{j}")
                        for j in range(n_comments)])
            for i in range(n)]


class TestSplitValidation:
    def test_fractions(self):
        train, val = cp.split_validation(_segments(100), cp.CorpusConfig())
        assert len(val) == 10 and len(train) == 90

    def test_ceiling(self):
        train, val = cp.split_validation(_segments(11), cp.CorpusConfig())
        assert len(val) == 2 and len(train) == 9

    def test_deterministic_and_disjoint(self):
        segs = _segments(30)
        t1, v1 = cp.split_validation(segs, cp.CorpusConfig(seed=5))
        t2, v2 = cp.split_validation(segs, cp.CorpusConfig(seed=5))
        assert [s.key for s in t1] == [s.key for s in t2]
        assert [s.key for s in v1] == [s.key for s in v2]
        assert {s.key for s in t1} | {s.key for s in v1} == {s.key for s in segs}
        assert not ({s.key for s in t1} & {s.key for s in v1})

    def test_too_few(self):
        with pytest.raises(TooFewSegments):
            cp.split_validation(_segments(9), cp.CorpusConfig())


class TestSampleEpoch:
    def test_batch_k(self):
        batches = cp.sample_epoch(_segments(16), cp.CorpusConfig(), epoch=0)
        assert all(b.k_total == 5 * b.n for b in batches)
        full = [b for b in batches if b.n == 8]
        assert all(b.k_total == 40 for b in full)

    def test_exactly_k_comments_all_selected(self):
        segs = _segments(8, n_comments=5)
        batches = cp.sample_epoch(segs, cp.CorpusConfig(), epoch=3)
        for b in batches:
            for seg, cols in zip(b.segments, b.ownership):
                picked = sorted(b.comments[c].text for c in cols)
                assert picked == sorted(c.text for c in seg.comments)

    def test_deterministic(self):
        segs = _segments(20)
        b1 = cp.sample_epoch(segs, cp.CorpusConfig(seed=9), epoch=2)
        b2 = cp.sample_epoch(segs, cp.CorpusConfig(seed=9), epoch=2)
        assert [[c.text for c in b.comments] for b in b1] == \
               [[c.text for c in b.comments] for b in b2]

    def test_ownership_partitions_columns(self):
        for b in cp.sample_epoch(_segments(20), cp.CorpusConfig(), epoch=0):
            cols = [c for own in b.ownership for c in own]
            assert sorted(cols) == list(range(b.k_total))

    def test_without_replacement(self):
        for b in cp.sample_epoch(_segments(8, n_comments=7), cp.CorpusConfig(), epoch=0):
            for seg, cols in zip(b.segments, b.ownership):
                texts = [b.comments[c].text for c in cols]
                assert len(set(texts)) == len(texts)


class TestCorpusStats:
    def test_means(self):
        videos = [make_video(10, times=(1, 2, 3), texts=["ab"] * 3),
                  make_video(20, times=(1, 2, 3, 4, 5), texts=["abcd"] * 5)]
        stats = cp.corpus_stats(videos)["user_generated"]
        assert stats["avg_duration_s"] == 15
        assert stats["avg_comments_per_video"] == 4

    def test_avg_chars(self):
        videos = [make_video(10, times=(1, 2), texts=["ab", "abcd"])]
        stats = cp.corpus_stats(videos)["overall"]
        assert stats["avg_chars_per_comment"] == 3.0

    def test_empty_category_flag(self):
        stats = cp.corpus_stats([make_video(10)])
        assert stats["movie"]["empty"] is True
        assert stats["movie"]["n_videos"] == 0
