"""Single-neuron feature-detection studies.

Pair circuits route two input channels through two disynaptic delay elements
on one neuron; triplet circuits combine three slow excitatory synapses with a
single subtractive inhibitory one. Sweeping the inter-spike interval of the
input pattern and counting output spikes per trial yields the tuning curve of
the circuit; an off-line greedy rule selects synapse slots whose delay-element
latencies match a target interval, so the delayed EPSPs of a matched pattern
peak together.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np

from .delaylab import PRE_STIMULUS_S, measure_delay, trace_from_result
from .dynamics import DT_DEFAULT
from .engine import (
    RunResult,
    SynapseBank,
    run_single_neuron,
    stack_dpi_params,
    stack_neuron_params,
)
from .errors import InsufficientCandidates, NoInhibitionDetected, NoReboundDetected
from .fabric import Address, Fabric, SynapseType
from .stimulus import Pattern, gen_pair, gen_single, gen_triplet, repeat_pattern

# Spikes are counted from stimulus onset until the pattern span plus this pad,
# which captures delayed firing without bleeding into the next trial.
COUNT_WINDOW_PAD_S = 50e-3
DEFAULT_TRIAL_GAP_S = 0.2


class CircuitKind(Enum):
    PAIR = "pair"
    TRIPLET = "triplet"


@dataclass(frozen=True)
class TuningCurve:
    """Mean output spikes per stimulus against the input inter-spike interval."""

    isis: tuple[float, ...]
    mean_spikes: tuple[float, ...]
    std_spikes: tuple[float, ...]
    n_trials: int

    def __post_init__(self):
        if not (len(self.isis) == len(self.mean_spikes) == len(self.std_spikes)):
            raise ValueError("curve arrays must have equal length")
        if self.n_trials < 1:
            raise ValueError("n_trials must be at least 1")
        if any(m < 0 for m in self.mean_spikes):
            raise ValueError("mean spike counts cannot be negative")

    @property
    def peak_isi(self) -> float:
        return self.isis[int(np.argmax(self.mean_spikes))]

    @property
    def total(self) -> float:
        return float(np.sum(self.mean_spikes))


@dataclass(frozen=True)
class CircuitSpec:
    """Wiring of one feature-detection circuit on a single neuron.

    exc_slots are ordered by input channel: the first entry receives the
    earliest spike of the pattern. Pair circuits carry one inhibitory slot per
    element (sharing the element's input tag); triplet circuits one inhibitory
    slot on its own tag.
    """

    kind: CircuitKind
    neuron: Address
    exc_slots: tuple[int, ...]
    inh_slots: tuple[int, ...]
    input_tags: tuple[int, ...]
    inh_tag: int | None = None
    exc_weight_fine: int | None = None
    inh_weight_fine: int | None = None
    selection_residual: float | None = None
    latencies: Mapping[int, float] | None = None

    def __post_init__(self):
        if self.kind is CircuitKind.PAIR:
            if not (len(self.exc_slots) == len(self.inh_slots) == len(self.input_tags) == 2):
                raise ValueError("pair circuit uses two delay elements")
        else:
            if len(self.exc_slots) != 3 or len(self.inh_slots) != 1:
                raise ValueError("triplet circuit uses three excitatory slots and one inhibitory")
            if len(self.input_tags) != 3 or self.inh_tag is None:
                raise ValueError("triplet circuit needs three input tags and an inhibitory tag")
        all_slots = tuple(self.exc_slots) + tuple(self.inh_slots)
        if len(set(all_slots)) != len(all_slots):
            raise ValueError("slot indices must be distinct")


def circuit_pattern(circuit: CircuitSpec, isi: float) -> Pattern:
    if circuit.kind is CircuitKind.PAIR:
        return gen_pair(isi, circuit.input_tags[0], circuit.input_tags[1])
    return gen_triplet(isi, tuple(circuit.input_tags), circuit.inh_tag)


def _circuit_banks(circuit: CircuitSpec, fabric: Fabric) -> list[SynapseBank]:
    banks = []
    for k, slot in enumerate(circuit.exc_slots):
        params = fabric.dpi_params_for(
            circuit.neuron, slot, SynapseType.EXC_SLOW, weight_fine=circuit.exc_weight_fine
        )
        banks.append(SynapseBank(tag=circuit.input_tags[k], params=params))
    if circuit.kind is CircuitKind.PAIR:
        for k, slot in enumerate(circuit.inh_slots):
            params = fabric.dpi_params_for(
                circuit.neuron, slot, SynapseType.INH_SUBTRACTIVE,
                weight_fine=circuit.inh_weight_fine,
            )
            banks.append(SynapseBank(tag=circuit.input_tags[k], params=params))
    else:
        params = fabric.dpi_params_for(
            circuit.neuron, circuit.inh_slots[0], SynapseType.INH_SUBTRACTIVE,
            weight_fine=circuit.inh_weight_fine,
        )
        banks.append(SynapseBank(tag=circuit.inh_tag, params=params))
    return banks


def run_circuit(
    circuit: CircuitSpec,
    pattern: Pattern,
    n_trials: int,
    fabric: Fabric,
    *,
    dt: float = DT_DEFAULT,
    window_pad: float = COUNT_WINDOW_PAD_S,
    record: bool = False,
) -> RunResult:
    """n_trials isolated runs of the circuit through one stimulus pattern."""
    neuron = fabric.neuron_params_for(circuit.neuron)
    banks = _circuit_banks(circuit, fabric)
    return run_single_neuron(
        neuron,
        banks,
        pattern,
        batch=n_trials,
        dt=dt,
        duration=pattern.span + window_pad,
        record=record,
    )


def run_isi_sweep(
    circuit: CircuitSpec,
    isis: Sequence[float],
    n_trials: int,
    fabric: Fabric,
    seed: int = 0,
    *,
    dt: float = DT_DEFAULT,
    window_pad: float = COUNT_WINDOW_PAD_S,
    reset_between_trials: bool = True,
    trial_gap: float = DEFAULT_TRIAL_GAP_S,
) -> TuningCurve:
    """Tuning curve over the ISI grid; trials are isolated unless configured
    to run back-to-back with a relaxation gap.

    The engine is deterministic and noiseless, so the seed only marks the run
    (isolated trials are identical and std is 0).
    """
    if not isis:
        raise ValueError("ISI grid must be non-empty")
    means, stds = [], []
    for isi in isis:
        pattern = circuit_pattern(circuit, isi)
        if reset_between_trials:
            result = run_circuit(
                circuit, pattern, n_trials, fabric, dt=dt, window_pad=window_pad
            )
            counts = result.spike_counts
        else:
            window = pattern.span + window_pad
            train = repeat_pattern(
                Pattern(events=pattern.events, duration=window),
                n_trials,
                trial_gap,
            )
            result = run_single_neuron(
                fabric.neuron_params_for(circuit.neuron),
                _circuit_banks(circuit, fabric),
                train,
                batch=1,
                dt=dt,
                duration=train.duration,
            )
            counts = np.array(
                [result.spike_counts_in(t0, t0 + window)[0] for t0 in train.trial_starts]
            )
        means.append(float(np.mean(counts)))
        stds.append(float(np.std(counts)))
    return TuningCurve(
        isis=tuple(isis), mean_spikes=tuple(means), std_spikes=tuple(stds), n_trials=n_trials
    )


class WeightKind(Enum):
    EXCITATORY = "excitatory"
    INHIBITORY = "inhibitory"


def sweep_weights(
    circuit: CircuitSpec,
    which: WeightKind,
    fine_values: Sequence[int],
    isis: Sequence[float],
    n_trials: int,
    fabric: Fabric,
    seed: int = 0,
    **kwargs,
) -> list[tuple[int, TuningCurve]]:
    """One tuning curve per weight fine value, all other biases held fixed."""
    out = []
    for fine in fine_values:
        if not 0 <= fine <= 255:
            raise ValueError(f"fine value {fine} outside 0..255")
        if which is WeightKind.EXCITATORY:
            varied = replace(circuit, exc_weight_fine=fine)
        else:
            varied = replace(circuit, inh_weight_fine=fine)
        out.append((fine, run_isi_sweep(varied, isis, n_trials, fabric, seed, **kwargs)))
    return out


def measure_slot_latencies(
    neuron: Address,
    exc_slots: Sequence[int],
    inh_slot: int,
    fabric: Fabric,
    *,
    exc_weight_fine: int | None = None,
    inh_weight_fine: int | None = None,
    dt: float = DT_DEFAULT,
    probe_tag: int | None = None,
) -> dict[int, float]:
    """Stimulus-to-EPSP-peak latency of each candidate slot's delay element.

    Each candidate is probed alone: one spike drives the candidate excitatory
    slot together with the shared inhibitory slot, and the latency is the time
    from the stimulus to the membrane maximum (or to the first spike).
    """
    probe = gen_single(probe_tag if probe_tag is not None else 1 << 20)
    neuron_params = fabric.neuron_params_for(neuron)
    exc_list = [
        fabric.dpi_params_for(neuron, slot, SynapseType.EXC_SLOW, weight_fine=exc_weight_fine)
        for slot in exc_slots
    ]
    inh = fabric.dpi_params_for(
        neuron, inh_slot, SynapseType.INH_SUBTRACTIVE, weight_fine=inh_weight_fine
    )
    n = len(exc_slots)
    banks = [
        SynapseBank(tag=probe.events[0].tag, params=stack_dpi_params(exc_list)),
        SynapseBank(tag=probe.events[0].tag, params=stack_dpi_params([inh] * n)),
    ]
    result = run_single_neuron(
        stack_neuron_params([neuron_params] * n),
        banks,
        probe,
        batch=n,
        dt=dt,
        t_pre=PRE_STIMULUS_S,
        duration=probe.duration,
        record=True,
    )
    latencies = {}
    for i, slot in enumerate(exc_slots):
        try:
            m = measure_delay(trace_from_result(result, i))
        except (NoInhibitionDetected, NoReboundDetected):
            continue  # degenerate mismatch draw; slot unusable as a delay element
        latencies[slot] = m.peak_time - PRE_STIMULUS_S
    return latencies


def _selection_cost(ordered_latencies: Sequence[float], target_isi: float) -> float:
    # Peak misalignment against the earliest input: with inputs at
    # (k-1)*target and latencies l_k, all peaks coincide when
    # l_1 - l_k = (k-1)*target.
    l1 = ordered_latencies[0]
    return sum(
        abs((k - 1) * target_isi - (l1 - lk))
        for k, lk in enumerate(ordered_latencies[1:], start=2)
    )


def select_synapses(
    neuron: Address,
    candidate_slots: Sequence[int],
    target_isi: float,
    fabric: Fabric,
    *,
    kind: CircuitKind = CircuitKind.TRIPLET,
    inh_slot: int | None = None,
    latencies: Mapping[int, float] | None = None,
    input_tags: Sequence[int] | None = None,
    inh_tag: int | None = None,
    exc_weight_fine: int | None = None,
    inh_weight_fine: int | None = None,
) -> CircuitSpec:
    """Greedy off-line selection of slots whose latency ladder matches target_isi.

    Candidates are ordered by descending latency within each subset (the
    earliest input gets the longest latency so the delayed EPSP maxima
    coincide); the subset minimizing the peak-misalignment cost wins, ties
    broken by lowest slot indices. The achieved cost is reported as
    selection_residual (nonzero when the target is unreachable).
    """
    n_needed = 3 if kind is CircuitKind.TRIPLET else 2
    slots = list(candidate_slots)
    if len(slots) < n_needed:
        raise InsufficientCandidates(
            f"{kind.value} circuit needs {n_needed} slots, got {len(slots)}"
        )
    if inh_slot is None:
        inh_slot = max(max(slots) + 1, 32)
    if latencies is None:
        latencies = measure_slot_latencies(
            neuron, slots, inh_slot, fabric,
            exc_weight_fine=exc_weight_fine, inh_weight_fine=inh_weight_fine,
        )
    usable = [s for s in slots if s in latencies]
    if len(usable) < n_needed:
        raise InsufficientCandidates(
            f"{n_needed} usable candidates required, {len(usable)} have latencies"
        )

    best: tuple[float, tuple[int, ...]] | None = None
    for subset in combinations(sorted(usable), n_needed):
        # Descending latency; equal latencies keep ascending slot order.
        ordered = sorted(subset, key=lambda s: (-latencies[s], s))
        cost = _selection_cost([latencies[s] for s in ordered], target_isi)
        key = (cost, tuple(ordered))
        if best is None or key < best:
            best = key
    residual, exc_order = best

    if input_tags is None:
        base = 1 << 21
        input_tags = tuple(base + i for i in range(n_needed))
    if kind is CircuitKind.TRIPLET:
        if inh_tag is None:
            inh_tag = (1 << 21) + 7
        return CircuitSpec(
            kind=kind,
            neuron=neuron,
            exc_slots=exc_order,
            inh_slots=(inh_slot,),
            input_tags=tuple(input_tags),
            inh_tag=inh_tag,
            exc_weight_fine=exc_weight_fine,
            inh_weight_fine=inh_weight_fine,
            selection_residual=residual,
            latencies={s: latencies[s] for s in exc_order},
        )
    # Pair: each element pairs its excitatory slot with its own inhibitory
    # slot; the shared probe inhibitory slot is reused for the first element.
    inh_b = inh_slot + 1
    while inh_b in exc_order or inh_b == inh_slot:
        inh_b += 1
    return CircuitSpec(
        kind=kind,
        neuron=neuron,
        exc_slots=exc_order,
        inh_slots=(inh_slot, inh_b),
        input_tags=tuple(input_tags),
        exc_weight_fine=exc_weight_fine,
        inh_weight_fine=inh_weight_fine,
        selection_residual=residual,
        latencies={s: latencies[s] for s in exc_order},
    )


def derange(order: Sequence[int]) -> tuple[int, ...]:
    """Left rotation: a derangement for any sequence of distinct items."""
    if len(order) < 2:
        raise ValueError("cannot derange fewer than two items")
    rotated = tuple(order[1:]) + (order[0],)
    if rotated == tuple(order):
        raise ValueError("rotation is not a derangement of repeated items")
    return rotated


def permutation_control(
    circuit: CircuitSpec,
    isis: Sequence[float],
    n_trials: int,
    fabric: Fabric,
    seed: int = 0,
    **kwargs,
) -> tuple[TuningCurve, TuningCurve]:
    """Tuning curves of the selected ordering and of a deranged ordering.

    The derangement permutes which excitatory slot each input channel drives;
    identical seeds and trial protocol for both runs.
    """
    if circuit.kind is not CircuitKind.TRIPLET:
        raise ValueError("permutation control is defined for triplet circuits")
    deranged = replace(circuit, exc_slots=derange(circuit.exc_slots))
    assert all(a != b for a, b in zip(deranged.exc_slots, circuit.exc_slots))
    selected_curve = run_isi_sweep(circuit, isis, n_trials, fabric, seed, **kwargs)
    deranged_curve = run_isi_sweep(deranged, isis, n_trials, fabric, seed, **kwargs)
    return selected_curve, deranged_curve
