"""Disynaptic delay elements and their FDHM delay characterization.

A delay element pairs a slow excitatory and a subtractive inhibitory synapse
on one input tag: the fast inhibition masks the slower excitation, so a
single input spike produces a hyperpolarizing dip followed by a delayed EPSP.
The delay is measured from the onset of inhibition (half-maximum crossing of
the dip, FDHM style) to the EPSP maximum, or to the first output spike when
the delayed excitation fires the neuron.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dynamics import DT_DEFAULT, NeuronParams
from .engine import RunResult, SynapseBank, run_single_neuron, stack_dpi_params, stack_neuron_params
from .errors import DegenerateDelayElement, NoInhibitionDetected, NoReboundDetected
from .fabric import Address, CamSlot, Fabric, SynapseType
from .stimulus import Pattern

# Calibration target for the nominal single-spike element delay.
DELAY_TARGET_S = 0.015

BASELINE_WINDOW_S = 5e-3
NOISE_FLOOR_MIN_V = 1e-6
PRE_STIMULUS_S = 0.01
POST_STIMULUS_S = 0.1


@dataclass(frozen=True)
class DelayElement:
    """One excitatory-inhibitory synapse pair listening on a common tag."""

    neuron: Address
    exc_slot: CamSlot
    inh_slot: CamSlot
    input_tag: int
    tau_exc: float
    tau_inh: float

    @property
    def degenerate(self) -> bool:
        return self.tau_exc <= self.tau_inh


@dataclass(frozen=True)
class MembraneTrace:
    """Uniformly sampled membrane potential with recorded output spike times."""

    dt: float
    samples: np.ndarray
    spike_times: tuple[float, ...] = ()

    @property
    def t(self) -> np.ndarray:
        return (np.arange(self.samples.size) + 1) * self.dt


@dataclass(frozen=True)
class DelayMeasurement:
    onset: float
    peak_time: float
    delay: float
    spiked: bool
    baseline: float
    dip_depth: float
    rebound_height: float


@dataclass(frozen=True)
class PopulationEntry:
    """Per-element characterization outcome; errors tagged, not raised."""

    neuron: Address
    exc_slot: int
    inh_slot: int
    spiked: bool
    measurement: DelayMeasurement | None = None
    error: str | None = None


def build_delay_element(
    neuron: Address,
    exc_slot_idx: int,
    inh_slot_idx: int,
    input_tag: int,
    fabric: Fabric,
    *,
    force: bool = False,
) -> DelayElement:
    """Register the synapse pair and validate tau_exc > tau_inh after mismatch.

    A degenerate ordering raises unless force is set (negative-result studies
    keep the element, flagged).
    """
    tau_exc = fabric.dpi_params_for(neuron, exc_slot_idx, SynapseType.EXC_SLOW).tau
    tau_inh = fabric.dpi_params_for(neuron, inh_slot_idx, SynapseType.INH_SUBTRACTIVE).tau
    if tau_exc <= tau_inh and not force:
        raise DegenerateDelayElement(
            f"effective tau_exc {tau_exc:.4g} s <= tau_inh {tau_inh:.4g} s at {neuron}"
        )
    exc = fabric.configure_connection(neuron, exc_slot_idx, input_tag, SynapseType.EXC_SLOW)
    inh = fabric.configure_connection(neuron, inh_slot_idx, input_tag, SynapseType.INH_SUBTRACTIVE)
    return DelayElement(
        neuron=neuron, exc_slot=exc, inh_slot=inh, input_tag=input_tag,
        tau_exc=tau_exc, tau_inh=tau_inh,
    )


def build_core_population(
    fabric: Fabric,
    chip: int,
    core: int,
    input_tag: int,
    exc_slot: int = 0,
    inh_slot: int = 1,
) -> list[DelayElement]:
    """One delay element on every neuron of the core, degenerate ones kept."""
    return [
        build_delay_element(
            Address(chip, core, n), exc_slot, inh_slot, input_tag, fabric, force=True
        )
        for n in range(256)
    ]


def simulate_elements(
    fabric: Fabric,
    items: Sequence[tuple[Address, int, int]],
    input_tag: int,
    pattern: Pattern,
    *,
    dt: float = DT_DEFAULT,
    t_pre: float = PRE_STIMULUS_S,
    duration: float | None = None,
    simplified: bool = False,
    neuron_template: NeuronParams | None = None,
    record: bool = True,
) -> RunResult:
    """Batch-run one (exc_slot, inh_slot) element per instance, common stimulus."""
    template = fabric.neuron_template if neuron_template is None else neuron_template
    neurons = []
    exc_list, inh_list = [], []
    for addr, exc_slot, inh_slot in items:
        c_mm, gl_mm = fabric.neuron_factors(addr)
        neurons.append(template.with_mismatch(c_mm, gl_mm))
        exc_list.append(fabric.dpi_params_for(addr, exc_slot, SynapseType.EXC_SLOW))
        inh_list.append(fabric.dpi_params_for(addr, inh_slot, SynapseType.INH_SUBTRACTIVE))
    banks = [
        SynapseBank(tag=input_tag, params=stack_dpi_params(exc_list)),
        SynapseBank(tag=input_tag, params=stack_dpi_params(inh_list)),
    ]
    return run_single_neuron(
        stack_neuron_params(neurons),
        banks,
        pattern,
        batch=len(items),
        dt=dt,
        t_pre=t_pre,
        duration=duration,
        record=record,
        simplified=simplified,
    )


def trace_from_result(result: RunResult, instance: int = 0) -> MembraneTrace:
    return MembraneTrace(
        dt=result.dt,
        samples=result.v[instance],
        spike_times=tuple(result.spike_times[instance]),
    )


def element_trace(
    element: DelayElement,
    fabric: Fabric,
    pattern: Pattern,
    *,
    dt: float = DT_DEFAULT,
    t_pre: float = PRE_STIMULUS_S,
    duration: float | None = None,
    simplified: bool = False,
) -> MembraneTrace:
    """Single-element convenience wrapper around the batch runner."""
    result = simulate_elements(
        fabric,
        [(element.neuron, element.exc_slot.slot, element.inh_slot.slot)],
        element.input_tag,
        pattern,
        dt=dt,
        t_pre=t_pre,
        duration=duration,
        simplified=simplified,
    )
    return trace_from_result(result, 0)


def measure_delay(
    trace: MembraneTrace,
    *,
    baseline_window: float = BASELINE_WINDOW_S,
    noise_floor_min: float = NOISE_FLOOR_MIN_V,
) -> DelayMeasurement:
    """FDHM delay of a single-spike response.

    Baseline is the mean of the first `baseline_window` seconds (pre-stimulus
    by construction of the traces here); the onset of inhibition is the first
    downward crossing of baseline - dip_depth/2 (linearly interpolated); the
    peak is the maximum after the dip, or the first output spike.
    """
    v = np.asarray(trace.samples, dtype=float)
    t = trace.t
    n_pre = max(1, int(round(baseline_window / trace.dt)))
    baseline = float(v[:n_pre].mean())
    floor = max(4.0 * float(v[:n_pre].std()), noise_floor_min)

    spiked = len(trace.spike_times) > 0
    if spiked:
        t_spike = float(trace.spike_times[0])
        search_end = int(np.searchsorted(t, t_spike))
    else:
        search_end = v.size
    if search_end < 2:
        raise NoInhibitionDetected("trace has no samples before the first spike")

    dip_idx = int(np.argmin(v[:search_end]))
    dip_depth = baseline - float(v[dip_idx])
    if dip_depth < floor:
        raise NoInhibitionDetected(
            f"no dip below baseline beyond the noise floor ({floor:.3g} V)"
        )

    thresh = baseline - dip_depth / 2.0
    below = np.nonzero(v[: dip_idx + 1] <= thresh)[0]
    i = int(below[0])
    if i == 0:
        onset = float(t[0])
    else:
        frac = (v[i - 1] - thresh) / (v[i - 1] - v[i])
        onset = float(t[i - 1] + frac * trace.dt)

    if spiked:
        peak_time = t_spike
        seg = v[dip_idx:search_end]
        rebound_height = float(seg.max()) - baseline if seg.size else 0.0
    else:
        seg = v[dip_idx:]
        peak_rel = int(np.argmax(seg))
        rebound_height = float(seg[peak_rel]) - baseline
        if rebound_height < floor:
            raise NoReboundDetected(
                f"no rebound above baseline beyond the noise floor ({floor:.3g} V)"
            )
        peak_time = float(t[dip_idx + peak_rel])

    return DelayMeasurement(
        onset=onset,
        peak_time=peak_time,
        delay=peak_time - onset,
        spiked=spiked,
        baseline=baseline,
        dip_depth=dip_depth,
        rebound_height=rebound_height,
    )


def _measure_batch(
    result: RunResult, items: Sequence[tuple[Address, int, int]]
) -> list[PopulationEntry]:
    entries = []
    for i, (addr, exc_slot, inh_slot) in enumerate(items):
        trace = trace_from_result(result, i)
        spiked = len(trace.spike_times) > 0
        try:
            m = measure_delay(trace)
            entries.append(PopulationEntry(addr, exc_slot, inh_slot, spiked, measurement=m))
        except (NoInhibitionDetected, NoReboundDetected) as err:
            entries.append(
                PopulationEntry(addr, exc_slot, inh_slot, spiked, error=type(err).__name__)
            )
    return entries


def characterize_population(
    core: tuple[int, int],
    fabric: Fabric,
    stimulus: Pattern,
    *,
    dt: float = DT_DEFAULT,
    t_pre: float = PRE_STIMULUS_S,
    duration: float | None = None,
) -> list[PopulationEntry]:
    """Measure every delay element on the core, one isolated trial each.

    Expects one element per neuron (exactly one slow-excitatory and one
    subtractive-inhibitory CAM entry on a shared tag); per-element measurement
    failures become tagged entries, ordered by neuron index.
    """
    chip, core_idx = core
    items = []
    for addr in fabric.neurons_with_cams(chip, core_idx):
        slots = fabric.cam_slots(addr)
        exc = [s for s in slots.values() if s.syn_type is SynapseType.EXC_SLOW]
        inh = [s for s in slots.values() if s.syn_type is SynapseType.INH_SUBTRACTIVE]
        if len(exc) == 1 and len(inh) == 1 and exc[0].source_tag == inh[0].source_tag:
            items.append((addr, exc[0].slot, inh[0].slot))
    if not items:
        return []
    input_tag = fabric.cam_slots(items[0][0])[items[0][1]].source_tag
    if duration is None:
        duration = POST_STIMULUS_S + stimulus.span
    result = simulate_elements(
        fabric, items, input_tag, stimulus, dt=dt, t_pre=t_pre, duration=duration
    )
    return _measure_batch(result, items)


def cam_pair_grid(n_pairs: int) -> list[tuple[int, int]]:
    """First n_pairs distinct (exc_slot, inh_slot) pairs, lexicographic."""
    pairs = [(i, j) for i, j in itertools.product(range(64), repeat=2) if i != j]
    if n_pairs > len(pairs):
        raise ValueError(f"only {len(pairs)} unique slot pairs exist")
    return pairs[:n_pairs]


def characterize_cam_combinations(
    neuron: Address,
    n_pairs: int,
    fabric: Fabric,
    stimulus: Pattern,
    *,
    dt: float = DT_DEFAULT,
    t_pre: float = PRE_STIMULUS_S,
    duration: float | None = None,
) -> list[PopulationEntry]:
    """Reconfigure one neuron's element across n_pairs unique CAM pairs.

    The slot mismatch factors are key-derived, so the study never mutates the
    fabric; each pair is an isolated trial of the same physical neuron.
    """
    tags = stimulus.tags()
    if len(tags) != 1:
        raise ValueError("CAM-combination stimulus must use a single input tag")
    input_tag = tags.pop()
    items = [(neuron, i, j) for i, j in cam_pair_grid(n_pairs)]
    if duration is None:
        duration = POST_STIMULUS_S + stimulus.span
    result = simulate_elements(
        fabric, items, input_tag, stimulus, dt=dt, t_pre=t_pre, duration=duration
    )
    return _measure_batch(result, items)


def delays_of(entries: Sequence[PopulationEntry]) -> np.ndarray:
    """Measured delays in entry order; failed measurements become NaN."""
    return np.array(
        [e.measurement.delay if e.measurement else np.nan for e in entries]
    )


def spiking_fraction(entries: Sequence[PopulationEntry]) -> float:
    if not entries:
        return 0.0
    return sum(e.spiked for e in entries) / len(entries)


def histogram(delays: np.ndarray, bin_width: float = 1e-3) -> tuple[np.ndarray, np.ndarray]:
    """Counts over ceil(range / bin_width) bins; NaNs dropped."""
    clean = delays[np.isfinite(delays)]
    if clean.size == 0:
        return np.array([]), np.array([])
    lo, hi = float(clean.min()), float(clean.max())
    n_bins = max(1, int(np.ceil((hi - lo) / bin_width))) if hi > lo else 1
    counts, edges = np.histogram(clean, bins=n_bins, range=(lo, lo + n_bins * bin_width))
    return counts, edges


def detect_bimodality(
    delays: np.ndarray,
    bin_width: float = 1e-3,
    trough_depth: float = 0.2,
    min_separation_bins: int = 4,
    min_mode_height: float = 4.0,
) -> tuple[bool, dict]:
    """Two-mode test: local maxima separated by a trough of the given depth.

    Works on a 3-bin smoothed histogram so single-bin count noise neither
    creates nor hides modes. Bimodal when two modes at least
    min_separation_bins apart (both at least min_mode_height high) bracket an
    interior minimum at or below (1 - trough_depth) times the larger mode and
    clearly below the smaller one.
    """
    counts, edges = histogram(delays, bin_width)
    info: dict = {"counts": counts, "edges": edges}
    if counts.size < 3:
        return False, info
    sm = np.convolve(counts, np.ones(3) / 3.0, mode="same")
    peaks = [
        i
        for i in range(sm.size)
        if sm[i] > (sm[i - 1] if i > 0 else -1.0)
        and sm[i] >= (sm[i + 1] if i < sm.size - 1 else -1.0)
    ]
    info["peaks"] = peaks
    best = None
    for a, b in itertools.combinations(peaks, 2):
        if b - a < min_separation_bins:
            continue
        trough = float(sm[a + 1 : b].min())
        larger, smaller = float(max(sm[a], sm[b])), float(min(sm[a], sm[b]))
        if smaller < min_mode_height:
            continue
        if trough <= (1 - trough_depth) * larger and smaller >= trough + max(
            2.0, 0.15 * larger
        ):
            score = smaller - trough
            if best is None or score > best[0]:
                best = (score, a, b, trough)
    if best is None:
        return False, info
    _, a, b, trough = best
    info.update(
        mode_bins=(a, b),
        mode_delays=(float(edges[a] + bin_width / 2), float(edges[b] + bin_width / 2)),
        trough=trough,
    )
    return True, info


def histogram_mode(delays: np.ndarray, bin_width: float = 1e-3) -> float:
    """Center of the tallest bin of the smoothed delay histogram."""
    counts, edges = histogram(delays, bin_width)
    if counts.size == 0:
        return float("nan")
    sm = np.convolve(counts, np.ones(3) / 3.0, mode="same")
    return float(edges[int(np.argmax(sm))] + bin_width / 2)


def quantize_trace(trace: MembraneTrace, bits: int = 8) -> MembraneTrace:
    """Optional oscilloscope-style quantization over the trace's own range."""
    v = np.asarray(trace.samples)
    lo, hi = float(v.min()), float(v.max())
    if hi <= lo:
        return trace
    levels = 2**bits - 1
    q = np.round((v - lo) / (hi - lo) * levels) / levels * (hi - lo) + lo
    return MembraneTrace(dt=trace.dt, samples=q, spike_times=trace.spike_times)


def add_measurement_noise(trace: MembraneTrace, sigma: float, seed: int) -> MembraneTrace:
    """Optional additive Gaussian measurement noise (post-simulation)."""
    if sigma <= 0:
        return trace
    noise = np.random.default_rng(seed).normal(0.0, sigma, size=trace.samples.size)
    return MembraneTrace(
        dt=trace.dt, samples=trace.samples + noise, spike_times=trace.spike_times
    )
