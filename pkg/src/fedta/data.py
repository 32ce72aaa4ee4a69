"""Synthetic event-stream datasets and the frame pipeline.

Events are (time, channel) pairs drawn from per-class piecewise-constant
Poisson rate profiles.  Frames are event counts per (window, channel) bin;
coarser client resolutions are produced by summing consecutive frame blocks,
so total event mass is conserved along every path through the pipeline.

The default desk-scale task encodes class identity in the temporal phase
structure of the rate profiles (all classes share the same time-averaged
rate per channel), so classification genuinely requires temporal features
and coarsening degrades the fine-grained part of the signal.
"""

import math
import struct
from dataclasses import dataclass
from typing import List

import numpy as np

HEADER_STRUCT = struct.Struct("<3q")  # n_samples, time, channels (little-endian int64)


@dataclass(frozen=True)
class EventStream:
    """A labelled spike/event recording before binning."""

    times: np.ndarray  # (n_events,) float64 seconds, in [0, duration)
    channels: np.ndarray  # (n_events,) int64
    duration: float
    n_channels: int
    label: int


@dataclass(frozen=True)
class FrameSequence:
    """Time-major real frames plus the temporal-resolution factor they carry."""

    frames: np.ndarray  # (time, channels) float64
    resolution_factor: int
    label: int


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator description: one Poisson rate profile per class.

    ``rate_profiles`` has shape (n_classes, n_channels, n_segments); segment
    s covers [s, s+1) * (duration / n_segments) seconds at a constant rate.
    """

    n_classes: int
    n_channels: int
    duration: float
    base_window: float
    rate_profiles: np.ndarray
    samples_per_class: int

    def __post_init__(self):
        if np.any(self.rate_profiles < 0):
            raise ValueError("rates must be non-negative")
        n_windows = self.duration / self.base_window
        if abs(n_windows - round(n_windows)) > 1e-9:
            raise ValueError("duration must be divisible by base_window")


def default_spec(n_classes: int = 10, n_channels: int = 32, duration: float = 1.0,
                 base_window: float = 0.01, samples_per_class: int = 100,
                 base_rate: float = 40.0, profile_seed: int = 7) -> SyntheticSpec:
    """Desk-scale default task.

    Each class modulates the base rate with a slow and a fast sinusoid whose
    frequencies depend on the class and whose phases vary per channel; the
    time average is the same for every class and channel, so classes are
    separated by timing rather than by mean rate.
    """
    rng = np.random.default_rng(np.random.SeedSequence([profile_seed]))
    n_segments = int(round(duration / base_window))
    t = (np.arange(n_segments) + 0.5) * (duration / n_segments)
    profiles = np.empty((n_classes, n_channels, n_segments))
    for c in range(n_classes):
        f_slow = 2.0 + (c % 5)
        f_fast = 10.0 + 3.0 * (c % 3)
        phase_slow = rng.uniform(0.0, 2.0 * math.pi, size=n_channels)
        phase_fast = rng.uniform(0.0, 2.0 * math.pi, size=n_channels)
        slow = np.sin(2.0 * math.pi * f_slow * t[None, :] + phase_slow[:, None])
        fast = np.sin(2.0 * math.pi * f_fast * t[None, :] + phase_fast[:, None])
        profiles[c] = base_rate * (1.0 + 0.6 * slow + 0.35 * fast)
    profiles = np.clip(profiles, 0.0, None)
    return SyntheticSpec(n_classes=n_classes, n_channels=n_channels,
                         duration=duration, base_window=base_window,
                         rate_profiles=profiles, samples_per_class=samples_per_class)


def generate_synthetic(spec: SyntheticSpec, rng: np.random.Generator) -> List[EventStream]:
    """Draw ``samples_per_class`` streams per class, in class-major order."""
    n_segments = spec.rate_profiles.shape[2]
    seg_dur = spec.duration / n_segments
    seg_start = np.arange(n_segments) * seg_dur
    streams = []
    for label in range(spec.n_classes):
        rates = spec.rate_profiles[label]
        for _ in range(spec.samples_per_class):
            counts = rng.poisson(rates * seg_dur)  # (channels, segments)
            total = int(counts.sum())
            times = np.empty(total)
            channels = np.empty(total, dtype=np.int64)
            pos = 0
            for ch in range(spec.n_channels):
                for s in range(n_segments):
                    k = counts[ch, s]
                    if k == 0:
                        continue
                    times[pos:pos + k] = seg_start[s] + rng.random(k) * seg_dur
                    channels[pos:pos + k] = ch
                    pos += k
            order = np.argsort(times, kind="stable")
            streams.append(EventStream(times=times[order], channels=channels[order],
                                       duration=spec.duration,
                                       n_channels=spec.n_channels, label=label))
    return streams


def bin_to_frames(stream: EventStream, window: float) -> FrameSequence:
    """Count events per (window, channel) bin; a trailing partial window
    becomes the final frame."""
    if window <= 0:
        raise ValueError("window must be positive")
    n_frames = int(math.ceil(stream.duration / window - 1e-12))
    frames = np.zeros((n_frames, stream.n_channels))
    if stream.times.size:
        idx = np.minimum((stream.times / window).astype(np.int64), n_frames - 1)
        np.add.at(frames, (idx, stream.channels), 1.0)
    return FrameSequence(frames=frames, resolution_factor=1, label=stream.label)


def coarsen(seq: FrameSequence, factor: int) -> FrameSequence:
    """Sum consecutive blocks of ``factor`` frames; the trailing partial block
    is summed into a final frame.  Multiplies the resolution factor."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor == 1:
        return seq
    n_time = seq.frames.shape[0]
    n_out = (n_time + factor - 1) // factor
    pad = n_out * factor - n_time
    frames = seq.frames
    if pad:
        frames = np.concatenate([frames, np.zeros((pad, frames.shape[1]))])
    out = frames.reshape(n_out, factor, -1).sum(axis=1)
    return FrameSequence(frames=out, resolution_factor=seq.resolution_factor * factor,
                         label=seq.label)


def channel_bin(seq: FrameSequence, group: int) -> FrameSequence:
    """Sum adjacent channel groups; the trailing partial group is kept."""
    if group < 1:
        raise ValueError("group must be >= 1")
    if group == 1:
        return seq
    n_ch = seq.frames.shape[1]
    n_out = (n_ch + group - 1) // group
    pad = n_out * group - n_ch
    frames = seq.frames
    if pad:
        frames = np.concatenate([frames, np.zeros((frames.shape[0], pad))], axis=1)
    out = frames.reshape(frames.shape[0], n_out, group).sum(axis=2)
    return FrameSequence(frames=out, resolution_factor=seq.resolution_factor,
                         label=seq.label)


def normalize_rate(seq: FrameSequence) -> FrameSequence:
    """Counts divided by the resolution factor: events per base window.

    Coarse sequences become piecewise averages of the fine ones, so the
    value scale a network sees is resolution-independent (the sampled-signal
    premise under which the dynamics adaptation rules are derived).  The
    experiment pipeline applies this after coarsening, just before frames
    reach a model.
    """
    if seq.resolution_factor == 1:
        return seq
    return FrameSequence(frames=seq.frames / seq.resolution_factor,
                         resolution_factor=seq.resolution_factor, label=seq.label)


def partition_iid(dataset: List[FrameSequence], n_shards: int,
                  rng: np.random.Generator) -> List[List[FrameSequence]]:
    """Per class, shuffle and deal samples round-robin so shard class counts
    differ by at most one."""
    if n_shards < 1:
        raise ValueError("n_shards must be >= 1")
    by_class = {}
    for i, seq in enumerate(dataset):
        by_class.setdefault(seq.label, []).append(i)
    shards = [[] for _ in range(n_shards)]
    for label in sorted(by_class):
        idx = by_class[label]
        if len(idx) < n_shards:
            raise ValueError(f"class {label} has {len(idx)} samples < {n_shards} shards")
        perm = rng.permutation(len(idx))
        for j, p in enumerate(perm):
            shards[j % n_shards].append(idx[p])
    return [[dataset[i] for i in shard] for shard in shards]


def save_frames(path, sequences: List[FrameSequence]) -> None:
    """Write the columnar frame file (layout documented in the README):
    header of three little-endian int64 (n_samples, time, channels), then all
    frames as row-major float64, then all labels as int64."""
    n = len(sequences)
    if n == 0:
        raise ValueError("nothing to save")
    t, c = sequences[0].frames.shape
    frames = np.stack([s.frames for s in sequences]).astype("<f8")
    labels = np.array([s.label for s in sequences], dtype="<i8")
    with open(path, "wb") as fh:
        fh.write(HEADER_STRUCT.pack(n, t, c))
        fh.write(frames.tobytes())
        fh.write(labels.tobytes())


def load_frames(path) -> List[FrameSequence]:
    """Read the columnar frame file written by :func:`save_frames`; sequences
    come back at resolution factor 1."""
    with open(path, "rb") as fh:
        n, t, c = HEADER_STRUCT.unpack(fh.read(HEADER_STRUCT.size))
        frames = np.frombuffer(fh.read(n * t * c * 8), dtype="<f8").reshape(n, t, c)
        labels = np.frombuffer(fh.read(n * 8), dtype="<i8")
    return [FrameSequence(frames=frames[i].copy(), resolution_factor=1,
                          label=int(labels[i])) for i in range(n)]
