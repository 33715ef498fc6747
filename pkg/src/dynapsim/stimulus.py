"""Deterministic spatiotemporal input patterns as timestamped spike events.

Patterns are immutable event lists on virtual source tags; all generators are
pure, so identical arguments give identical patterns. Events are kept sorted
by time with ties ordered by tag.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

log = logging.getLogger(__name__)

DEFAULT_TAIL = 0.1  # seconds of quiet time appended after the last event


@dataclass(frozen=True, order=True)
class SpikeEvent:
    t: float
    tag: int

    def __post_init__(self):
        if self.t < 0:
            raise ValueError("event time must be non-negative")


@dataclass(frozen=True)
class Pattern:
    """Ordered spike events plus the pattern duration (>= last event time).

    trial_starts marks the onset of each repeat when the pattern was built by
    repeat_pattern; a single-trial pattern has one start at 0.
    """

    events: tuple[SpikeEvent, ...]
    duration: float
    trial_starts: tuple[float, ...] = (0.0,)

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(sorted(self.events)))
        if self.events and self.duration < self.events[-1].t:
            raise ValueError("duration must cover the last event")

    @property
    def span(self) -> float:
        """Time of the last event (0 for an empty pattern)."""
        return self.events[-1].t if self.events else 0.0

    def shifted(self, offset: float) -> "Pattern":
        return Pattern(
            events=tuple(SpikeEvent(e.t + offset, e.tag) for e in self.events),
            duration=self.duration + offset,
            trial_starts=tuple(t + offset for t in self.trial_starts),
        )

    def tags(self) -> set[int]:
        return {e.tag for e in self.events}


def gen_single(tag: int, tail: float = DEFAULT_TAIL) -> Pattern:
    """One spike at t = 0."""
    return Pattern(events=(SpikeEvent(0.0, tag),), duration=tail)


def gen_pair(isi: float, tag_a: int, tag_b: int, tail: float = DEFAULT_TAIL) -> Pattern:
    """A spike pair separated by isi, one spike per channel."""
    if isi < 0:
        raise ValueError("isi must be non-negative")
    return Pattern(
        events=(SpikeEvent(0.0, tag_a), SpikeEvent(isi, tag_b)),
        duration=isi + tail,
    )


def gen_triplet(
    isi: float,
    exc_tags: tuple[int, int, int],
    inh_tag: int,
    tail: float = DEFAULT_TAIL,
) -> Pattern:
    """Three staggered excitatory spikes plus one inhibitory spike.

    Excitatory events at 0, isi and 2*isi (so the first and third are
    separated by twice the isi); the inhibitory spike is simultaneous with
    the first excitatory one.
    """
    if isi < 0:
        raise ValueError("isi must be non-negative")
    e1, e2, e3 = exc_tags
    return Pattern(
        events=(
            SpikeEvent(0.0, e1),
            SpikeEvent(isi, e2),
            SpikeEvent(2 * isi, e3),
            SpikeEvent(0.0, inh_tag),
        ),
        duration=2 * isi + tail,
    )


def repeat_pattern(
    p: Pattern, n: int, gap: float, longest_tau: float | None = None
) -> Pattern:
    """Concatenate n copies, the k-th offset by k * (p.duration + gap).

    Trial boundaries are recorded so spike counts can be attributed per trial.
    If the longest time constant of the run is known, a gap shorter than five
    of them is flagged (states would not relax between trials).
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if gap < 0:
        raise ValueError("gap must be non-negative")
    if longest_tau is not None and gap < 5 * longest_tau:
        warnings.warn(
            f"inter-trial gap {gap} s is below 5x the longest time constant "
            f"({longest_tau} s); trials may interact",
            stacklevel=2,
        )
    period = p.duration + gap
    events = []
    starts = []
    for k in range(n):
        offset = k * period
        starts.append(offset)
        events.extend(SpikeEvent(e.t + offset, e.tag) for e in p.events)
    return Pattern(events=tuple(events), duration=(n - 1) * period + p.duration, trial_starts=tuple(starts))


def concat(a: Pattern, b: Pattern, offset: float) -> Pattern:
    """a followed by b shifted to start at `offset`."""
    shifted = b.shifted(offset)
    return Pattern(
        events=a.events + shifted.events,
        duration=max(a.duration, shifted.duration),
        trial_starts=a.trial_starts,
    )


def write_csv(pattern: Pattern, path: str | Path) -> None:
    """Persist as two columns (t_seconds, tag) for replay."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_seconds", "tag"])
        for e in pattern.events:
            writer.writerow([f"{e.t:.9g}", e.tag])


def read_csv(path: str | Path, tail: float = DEFAULT_TAIL) -> Pattern:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["t_seconds", "tag"]:
            raise ValueError(f"unexpected pattern CSV header: {header}")
        events = tuple(SpikeEvent(float(t), int(tag)) for t, tag in reader)
    span = max((e.t for e in events), default=0.0)
    return Pattern(events=events, duration=span + tail)
