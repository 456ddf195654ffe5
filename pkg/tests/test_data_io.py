import numpy as np
import pytest

from pnstrace import data_io
from pnstrace.data_io import DatasetConfig, RawTrack, downsample, frame_step, leave_one_out_split, parse_tsv, sliding_windows
from pnstrace.errors import NonNumericCoordinate, ParseError, UnknownSubset
from pnstrace.synth import generate


def walker(agent, frames, x0=0.0, y0=0.0):
    return [RawTrack(agent, f, x0 + 0.1 * f, y0) for f in frames]


class TestParse:
    def test_two_records(self):
        rows = parse_tsv("0 1 1.0 2.0\n10 1 1.5 2.0")
        assert rows == [RawTrack(1, 0, 1.0, 2.0), RawTrack(1, 10, 1.5, 2.0)]

    def test_empty(self):
        assert parse_tsv("") == []

    def test_sorted_by_agent_then_frame(self):
        rows = parse_tsv("10 2 0 0\n0 2 0 0\n5 1 0 0\n")
        assert [(r.agent, r.frame) for r in rows] == [(1, 5), (2, 0), (2, 10)]

    def test_three_columns(self):
        with pytest.raises(ParseError) as err:
            parse_tsv("0 1 1.0 2.0\n\n10 1 1.5\n")
        assert err.value.line == 3

    def test_non_numeric_coordinate(self):
        with pytest.raises(NonNumericCoordinate) as err:
            parse_tsv("0 1 abc 2.0\n")
        assert err.value.line == 1

    def test_duplicate_sample(self):
        with pytest.raises(ParseError):
            parse_tsv("0 1 0 0\n0 1 1 1\n")

    def test_load_file(self, tmp_path):
        p = tmp_path / "a.txt"
        p.write_text("0\t1\t1.0\t2.0\n")
        assert len(data_io.load_tsv(p)) == 1


class TestDownsample:
    def test_identity(self):
        tracks = walker(1, range(0, 50))
        assert downsample(tracks, 1) == tracks

    def test_25hz_to_2p5hz(self):
        tracks = walker(1, range(0, 100))
        out = downsample(tracks, 10)
        assert [r.frame for r in out] == list(range(0, 100, 10))

    def test_subset(self, rng):
        frames = sorted(rng.choice(500, 120, replace=False))
        tracks = walker(3, frames)
        out = downsample(tracks, int(rng.integers(1, 7)), base_step=2)
        assert {r.frame for r in out} <= set(frames)


class TestWindows:
    def test_presets(self):
        assert (data_io.PRESETS["eth_ucy"].t_h, data_io.PRESETS["eth_ucy"].t_f) == (8, 12)
        assert (data_io.PRESETS["nuscenes"].t_h, data_io.PRESETS["nuscenes"].t_f) == (4, 12)

    def test_non_integer_steps_rejected(self):
        with pytest.raises(ValueError):
            DatasetConfig(2.5, 3.0, 4.8)

    def test_exactly_one_window(self):
        tracks = walker(1, range(0, 200, 10))
        scenes = sliding_windows(tracks, data_io.PRESETS["eth_ucy"])
        assert len(scenes) == 1
        assert (scenes[0].t_h, scenes[0].t_f) == (8, 12)

    def test_stride_and_neighbors(self):
        tracks = sorted(walker(1, range(0, 250, 10)) + walker(2, range(30, 120, 10), y0=2.0))
        cfg = DatasetConfig(2.5, 3.2, 4.8, window_stride=2)
        scenes = sliding_windows(tracks, cfg)
        # 25 frames give 6 window starts for agent 1; stride 2 keeps 3
        assert len(scenes) == 3
        first = scenes[0]
        assert first.agent_ids == (1, 2)
        assert first.presence[1].sum() == 9
        assert frame_step(tracks) == 10

    def test_nuscenes_preset(self):
        tracks = walker(4, range(0, 16))
        scenes = sliding_windows(tracks, data_io.PRESETS["nuscenes"], step=1)
        assert len(scenes) == 1 and scenes[0].t_h == 4 and scenes[0].dt == 0.5

    def test_deterministic(self, rng):
        tracks = sorted(walker(a, range(0, 300, 10), y0=a) for a in range(4))
        tracks = [r for group in tracks for r in group]
        a = sliding_windows(tracks, data_io.PRESETS["eth_ucy"])
        b = sliding_windows(list(reversed(tracks)), data_io.PRESETS["eth_ucy"])
        assert len(a) == len(b) and all(x.equals(y) for x, y in zip(a, b))


class TestSplit:
    SUBSETS = {name: [object() for _ in range(n)] for name, n in
               [("Eth", 3), ("Hotel", 4), ("Uni", 5), ("Zara1", 2), ("Zara2", 6)]}

    def test_leave_one_out(self):
        train, test = leave_one_out_split(self.SUBSETS, "Eth")
        assert len(test) == 3
        assert len(train) == 17
        assert not {id(s) for s in train} & {id(s) for s in test}

    def test_counts_add_up(self):
        for name in self.SUBSETS:
            train, test = leave_one_out_split(self.SUBSETS, name)
            assert len(train) + len(test) == sum(map(len, self.SUBSETS.values()))

    def test_unknown(self):
        with pytest.raises(UnknownSubset):
            leave_one_out_split(self.SUBSETS, "Students")

    def test_load_subsets(self, tmp_path):
        for name in ("a", "b"):
            lines = [f"{f} 1 {0.1 * f} 0" for f in range(0, 200, 10)]
            (tmp_path / f"{name}.txt").write_text("\n".join(lines))
        subsets = data_io.load_subsets([tmp_path / "b.txt", tmp_path / "a.txt"], data_io.PRESETS["eth_ucy"])
        assert list(subsets) == ["a", "b"] and len(subsets["a"]) == 1


class TestArchive:
    def test_round_trip(self, tmp_path):
        synth = generate(5, seed=3)
        path = tmp_path / "s.json"
        data_io.save_archive(path, [s.scene for s in synth], {"k": 1})
        data_io.save_truth(data_io.truth_path(str(path)), synth)
        scenes, meta = data_io.load_archive(path)
        assert meta == {"k": 1}
        assert all(a.equals(b.scene) for a, b in zip(scenes, synth))
        truth = data_io.load_truth(data_io.truth_path(str(path)))
        assert all(np.array_equal(t, s.true_predecessor) for t, s in zip(truth, synth))

    def test_byte_identical(self, tmp_path):
        scenes = [s.scene for s in generate(4, seed=9)]
        data_io.save_archive(tmp_path / "a.json", scenes)
        data_io.save_archive(tmp_path / "b.json", scenes)
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    @pytest.mark.parametrize("text", ["{", '{"format": "other"}', '{"format": "pnstrace-scenes", "version": 1, "scenes": [{}]}'])
    def test_malformed(self, tmp_path, text):
        p = tmp_path / "bad.json"
        p.write_text(text)
        with pytest.raises(ParseError):
            data_io.load_archive(p)

    def test_label_records(self):
        s = generate(1, seed=1, family="arc")[0].scene
        rows = data_io.label_records(s, np.array([1, -1]), np.array([0.5, np.nan]))
        assert rows == [{"step": 1, "agent": 1, "distance": 0.5}, {"step": 2, "agent": None, "distance": None}]
