"""Time-binned empirical estimation of upstream arrival distributions."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .model import ArrivalPmf


@dataclass(frozen=True)
class BinPartition:
    """Half-open intervals ``[boundaries[k], boundaries[k+1])`` covering ``0..T``."""

    boundaries: tuple[int, ...]

    def __post_init__(self):
        b = tuple(int(x) for x in self.boundaries)
        object.__setattr__(self, "boundaries", b)
        if len(b) < 2 or b[0] != 0:
            raise ValidationError("bin boundaries must start at 0 and hold at least two entries")
        for lo, hi in zip(b, b[1:]):
            if hi <= lo:
                raise ValidationError(f"empty or reversed bin [{lo}, {hi})")

    @property
    def horizon(self) -> int:
        return self.boundaries[-1] - 1

    @property
    def num_bins(self) -> int:
        return len(self.boundaries) - 1

    def intervals(self):
        return list(zip(self.boundaries, self.boundaries[1:]))

    def bin_of(self) -> np.ndarray:
        """Bin index for every step ``0..T``."""
        idx = np.empty(self.horizon + 1, dtype=int)
        for k, (lo, hi) in enumerate(self.intervals()):
            idx[lo:hi] = k
        return idx

    @classmethod
    def uniform(cls, horizon: int, width: int = 60) -> "BinPartition":
        """Bins of ``width`` steps; the final bin absorbs the remainder up to ``T``."""
        if width < 1:
            raise ValidationError("bin width must be >= 1")
        b = list(range(0, horizon + 1, width))
        if len(b) > 1 and horizon + 1 - b[-1] < width:
            b.pop()
        b.append(horizon + 1)
        return cls(tuple(b))

    @classmethod
    def single(cls, horizon: int) -> "BinPartition":
        return cls((0, horizon + 1))


@dataclass(frozen=True, eq=False)
class ArrivalSamples:
    """Observed upstream arrivals, ``counts[e, t]`` for episode ``e`` and step ``t``."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.array(self.counts)
        if c.ndim != 2 or c.size == 0:
            raise ValidationError("samples must be a non-empty (episodes, steps) table")
        if np.any(c < 0) or not np.all(np.equal(np.mod(c, 1), 0)):
            raise ValidationError("sample counts must be non-negative integers")
        c = c.astype(np.int64)
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def episodes(self) -> int:
        return self.counts.shape[0]

    @property
    def horizon(self) -> int:
        return self.counts.shape[1] - 1


def fit_empirical_pmf(samples: ArrivalSamples, bins: BinPartition) -> ArrivalPmf:
    """Frequency estimate of the arrival pmf, pooled within each time bin.

    Every step in a bin gets the relative frequency of each count over all
    (step, episode) pairs of that bin. Counts never observed get probability 0.
    """
    if bins.horizon != samples.horizon:
        raise ValidationError(
            f"bins cover t=0..{bins.horizon}, samples cover t=0..{samples.horizon}")
    top = int(samples.counts.max())
    probs = np.zeros((samples.horizon + 1, top + 1))
    for lo, hi in bins.intervals():
        block = samples.counts[:, lo:hi].ravel()
        if block.size == 0:
            raise ValidationError(f"bin [{lo}, {hi}) holds no samples")
        freq = np.bincount(block, minlength=top + 1) / block.size
        probs[lo:hi] = freq
    return ArrivalPmf(probs)


def load_samples_csv(path) -> ArrivalSamples:
    """Read ``episode,time_step,count`` rows; every (episode, step) must appear once."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"episode", "time_step", "count"} - set(reader.fieldnames or ())
        if missing:
            raise ValidationError(f"{path}: missing columns {sorted(missing)}")
        for line, row in enumerate(reader, start=2):
            try:
                rows.append((int(row["episode"]), int(row["time_step"]), int(row["count"])))
            except ValueError as exc:
                raise ValidationError(f"{path}:{line}: {exc}") from None
    if not rows:
        raise ValidationError(f"{path}: no samples")
    episodes = sorted({r[0] for r in rows})
    steps = max(r[1] for r in rows) + 1
    eidx = {e: i for i, e in enumerate(episodes)}
    counts = np.full((len(episodes), steps), -1, dtype=np.int64)
    for e, t, k in rows:
        counts[eidx[e], t] = k
    if np.any(counts < 0):
        e, t = np.argwhere(counts < 0)[0]
        raise ValidationError(f"{path}: no sample for episode {episodes[e]}, step {t}")
    return ArrivalSamples(counts)


def save_samples_csv(samples: ArrivalSamples, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "time_step", "count"])
        for e in range(samples.episodes):
            for t, k in enumerate(samples.counts[e]):
                w.writerow([e, t, int(k)])


def save_pmf_csv(pmf: ArrivalPmf, path) -> None:
    """Write nonzero entries as ``t,value,probability`` rows."""
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "value", "probability"])
        for t in range(pmf.horizon + 1):
            for k in np.flatnonzero(pmf.probs[t]):
                w.writerow([t, int(k), repr(float(pmf.probs[t, k]))])


def load_pmf_csv(path) -> ArrivalPmf:
    entries = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            entries.append((int(row["t"]), int(row["value"]), float(row["probability"])))
    if not entries:
        raise ValidationError(f"{path}: empty pmf")
    T = max(e[0] for e in entries)
    K = max(e[1] for e in entries)
    p = np.zeros((T + 1, K + 1))
    for t, k, q in entries:
        p[t, k] = q
    return ArrivalPmf(p)
