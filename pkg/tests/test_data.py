import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedta.data import (EventStream, FrameSequence, SyntheticSpec, bin_to_frames,
                        channel_bin, coarsen, default_spec, generate_synthetic,
                        load_frames, normalize_rate, partition_iid, save_frames)


def make_stream(times, channels, duration=1.0, n_channels=1, label=0):
    return EventStream(times=np.asarray(times, float),
                       channels=np.asarray(channels, np.int64),
                       duration=duration, n_channels=n_channels, label=label)


def random_stream(rng, n_events=50, n_channels=4, duration=1.0):
    return make_stream(rng.uniform(0, duration, n_events),
                       rng.integers(0, n_channels, n_events),
                       duration=duration, n_channels=n_channels)


class TestBinning:
    def test_hand_binned_counts(self):
        stream = make_stream([0.1, 0.15, 0.9], [0, 0, 0], duration=1.0)
        seq = bin_to_frames(stream, 0.5)
        assert seq.frames.tolist() == [[2.0], [1.0]]
        assert seq.resolution_factor == 1

    def test_empty_stream(self):
        seq = bin_to_frames(make_stream([], [], duration=1.0, n_channels=3), 0.25)
        assert seq.frames.shape == (4, 3)
        assert np.all(seq.frames == 0)

    def test_trailing_partial_window(self):
        stream = make_stream([0.55], [0], duration=0.6)
        seq = bin_to_frames(stream, 0.25)
        assert seq.frames.shape[0] == 3  # two full windows + partial
        assert seq.frames[2, 0] == 1.0

    @given(seed=st.integers(0, 300), window=st.sampled_from([0.1, 0.25, 0.5]))
    @settings(max_examples=40, deadline=None)
    def test_mass_conservation(self, seed, window):
        stream = random_stream(np.random.default_rng(seed))
        assert bin_to_frames(stream, window).frames.sum() == len(stream.times)


class TestCoarsen:
    def test_identity(self):
        seq = FrameSequence(np.arange(8.0).reshape(4, 2), 1, 0)
        assert coarsen(seq, 1) is seq

    def test_block_sums(self):
        seq = FrameSequence(np.array([[1.0], [2.0], [3.0], [4.0]]), 1, 0)
        out = coarsen(seq, 2)
        assert out.frames.tolist() == [[3.0], [7.0]]
        assert out.resolution_factor == 2

    def test_trailing_partial_block(self):
        seq = FrameSequence(np.array([[1.0], [2.0], [3.0]]), 1, 0)
        out = coarsen(seq, 2)
        assert out.frames.tolist() == [[3.0], [3.0]]

    def test_two_halvings_equal_one_quartering(self):
        rng = np.random.default_rng(0)
        seq = FrameSequence(rng.integers(0, 5, (16, 3)).astype(float), 1, 2)
        a = coarsen(coarsen(seq, 2), 2)
        b = coarsen(seq, 4)
        np.testing.assert_array_equal(a.frames, b.frames)
        assert a.resolution_factor == b.resolution_factor == 4

    def test_resolution_paths_commute_with_binning(self):
        rng = np.random.default_rng(1)
        stream = random_stream(rng, n_events=200, duration=1.0)
        a = coarsen(bin_to_frames(stream, 0.05), 4)
        b = bin_to_frames(stream, 0.2)
        np.testing.assert_array_equal(a.frames, b.frames)


class TestChannelBin:
    def test_identity(self):
        seq = FrameSequence(np.ones((3, 5)), 1, 0)
        assert channel_bin(seq, 1) is seq

    def test_700_to_140_channels(self):
        seq = FrameSequence(np.ones((2, 700)), 1, 0)
        out = channel_bin(seq, 5)
        assert out.frames.shape == (2, 140)
        assert np.all(out.frames == 5.0)

    def test_mass_conserved_with_partial_group(self):
        rng = np.random.default_rng(2)
        seq = FrameSequence(rng.integers(0, 4, (6, 7)).astype(float), 1, 0)
        out = channel_bin(seq, 3)
        assert out.frames.shape == (6, 3)
        assert out.frames.sum() == seq.frames.sum()


class TestNormalizeRate:
    def test_base_resolution_untouched(self):
        seq = FrameSequence(np.ones((3, 2)), 1, 0)
        assert normalize_rate(seq) is seq

    def test_coarse_counts_become_averages(self):
        seq = FrameSequence(np.full((2, 2), 8.0), 4, 1)
        out = normalize_rate(seq)
        assert np.all(out.frames == 2.0)
        assert out.resolution_factor == 4


class TestPartition:
    def _dataset(self, per_class=10, n_classes=3):
        return [FrameSequence(np.zeros((2, 1)), 1, label=c)
                for c in range(n_classes) for _ in range(per_class)]

    def test_single_shard_is_a_permutation(self):
        ds = self._dataset()
        shards = partition_iid(ds, 1, np.random.default_rng(0))
        assert len(shards) == 1
        assert sorted(id(s) for s in shards[0]) == sorted(id(s) for s in ds)

    def test_exact_split(self):
        ds = self._dataset(per_class=100, n_classes=4)
        shards = partition_iid(ds, 5, np.random.default_rng(0))
        for shard in shards:
            counts = np.bincount([s.label for s in shard], minlength=4)
            assert counts.tolist() == [20, 20, 20, 20]

    @given(per_class=st.integers(3, 24), n_shards=st.integers(1, 3),
           seed=st.integers(0, 100))
    @settings(max_examples=40, deadline=None)
    def test_partition_properties(self, per_class, n_shards, seed):
        ds = self._dataset(per_class=per_class)
        shards = partition_iid(ds, n_shards, np.random.default_rng(seed))
        seen = [s for shard in shards for s in shard]
        assert len(seen) == len(ds) and len({id(s) for s in seen}) == len(ds)
        counts = np.array([[sum(1 for s in shard if s.label == c) for c in range(3)]
                           for shard in shards])
        assert (counts.max(axis=0) - counts.min(axis=0)).max() <= 1

    def test_too_many_shards(self):
        with pytest.raises(ValueError):
            partition_iid(self._dataset(per_class=2), 3, np.random.default_rng(0))


class TestSynthetic:
    def test_zero_rates_give_empty_streams(self):
        spec = SyntheticSpec(n_classes=2, n_channels=3, duration=1.0, base_window=0.1,
                             rate_profiles=np.zeros((2, 3, 10)), samples_per_class=4)
        streams = generate_synthetic(spec, np.random.default_rng(0))
        assert len(streams) == 8
        assert all(len(s.times) == 0 for s in streams)

    def test_poisson_mean(self):
        spec = SyntheticSpec(n_classes=1, n_channels=1, duration=1.0, base_window=0.1,
                             rate_profiles=np.full((1, 1, 10), 10.0),
                             samples_per_class=1000)
        streams = generate_synthetic(spec, np.random.default_rng(3))
        counts = [len(s.times) for s in streams]
        # lambda = 10; tolerance 3*sigma/sqrt(n) = 3*sqrt(10)/sqrt(1000) = 0.3
        assert abs(np.mean(counts) - 10.0) < 0.3

    def test_seeded_determinism(self):
        spec = default_spec(n_classes=3, n_channels=4, samples_per_class=2)
        a = generate_synthetic(spec, np.random.default_rng(9))
        b = generate_synthetic(spec, np.random.default_rng(9))
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(sa.times, sb.times)
            np.testing.assert_array_equal(sa.channels, sb.channels)

    def test_events_within_bounds(self):
        spec = default_spec(n_classes=2, n_channels=4, samples_per_class=3)
        for s in generate_synthetic(spec, np.random.default_rng(1)):
            assert np.all((s.times >= 0) & (s.times < s.duration))
            assert np.all((s.channels >= 0) & (s.channels < s.n_channels))

    def test_classes_share_mean_rate(self):
        # class information lives in timing, not in the channel-mean rate
        spec = default_spec()
        per_class_mean = spec.rate_profiles.mean(axis=(1, 2))
        assert per_class_mean.std() / per_class_mean.mean() < 0.02


class TestColumnarFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        seqs = [FrameSequence(rng.random((5, 3)), 1, label=int(i % 2))
                for i in range(4)]
        path = tmp_path / "frames.bin"
        save_frames(path, seqs)
        loaded = load_frames(path)
        assert len(loaded) == 4
        for a, b in zip(seqs, loaded):
            np.testing.assert_array_equal(a.frames, b.frames)
            assert a.label == b.label and b.resolution_factor == 1

    def test_byte_layout(self, tmp_path):
        seqs = [FrameSequence(np.array([[1.5, 2.5]]), 1, label=7)]
        path = tmp_path / "frames.bin"
        save_frames(path, seqs)
        raw = path.read_bytes()
        header = np.frombuffer(raw[:24], dtype="<i8")
        assert header.tolist() == [1, 1, 2]
        np.testing.assert_array_equal(np.frombuffer(raw[24:40], dtype="<f8"),
                                      [1.5, 2.5])
        assert np.frombuffer(raw[40:48], dtype="<i8")[0] == 7
