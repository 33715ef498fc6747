"""Clock-driven runner for batches of independent single-neuron circuits.

One neuron plus its CAM-instanced synapses is simulated for B independent
instances in lockstep (instances differ in parameters, e.g. mismatch draws or
repeated trials). All state advances through the public dynamics kernels, so
the scalar contracts and the batched runs share one implementation.

Simulated time starts at 0; the stimulus pattern is applied from t_pre, which
leaves a flat pre-stimulus baseline on recorded traces.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .dynamics import (
    DT_DEFAULT,
    DpiParams,
    DpiState,
    NeuronParams,
    Polarity,
    dpi_inject_spike,
    dpi_step,
    net_synaptic_current,
    resting_state,
    step_neuron,
)
from .stimulus import Pattern


@dataclass
class SynapseBank:
    """B lockstep instances of one synapse slot listening on one source tag."""

    tag: int
    params: DpiParams  # scalar fields broadcast across the batch
    state: DpiState | None = None


@dataclass
class RunResult:
    dt: float
    t_pre: float
    n_steps: int
    spike_times: list[np.ndarray]  # per instance, seconds from sim start
    v: np.ndarray | None = None    # (B, n_steps) samples at step ends
    t: np.ndarray | None = None    # (n_steps,) sample times

    @property
    def spike_counts(self) -> np.ndarray:
        return np.array([s.size for s in self.spike_times])

    def spike_counts_in(self, t_start: float, t_end: float) -> np.ndarray:
        return np.array(
            [np.count_nonzero((s >= t_start) & (s < t_end)) for s in self.spike_times]
        )


def stack_dpi_params(params: Sequence[DpiParams]) -> DpiParams:
    """Per-instance parameter arrays for one bank; polarity must be uniform."""
    polarity = params[0].polarity
    if any(p.polarity is not polarity for p in params):
        raise ValueError("bank instances must share one polarity")
    return DpiParams(
        tau=np.array([p.tau for p in params]),
        I_tau=np.array([p.I_tau for p in params]),
        I_th=np.array([p.I_th for p in params]),
        w_syn=np.array([p.w_syn for p in params]),
        t_pulse=np.array([p.t_pulse for p in params]),
        polarity=polarity,
    )


def stack_neuron_params(params: Sequence[NeuronParams]) -> NeuronParams:
    """Per-instance C and g_L; the remaining fields must be shared."""
    first = params[0]
    return replace(
        first,
        C=np.array([p.C for p in params]),
        g_L=np.array([p.g_L for p in params]),
    )


def run_single_neuron(
    neuron: NeuronParams,
    banks: Sequence[SynapseBank],
    pattern: Pattern,
    *,
    batch: int,
    dt: float = DT_DEFAULT,
    t_pre: float = 0.0,
    duration: float | None = None,
    record: bool = False,
    simplified: bool = False,
) -> RunResult:
    """Run B instances of the wired neuron through one stimulus pattern."""
    if duration is None:
        duration = pattern.duration
    n_steps = int(round((t_pre + duration) / dt))

    # Event delivery schedule: step index -> bank indices to pulse.
    schedule: dict[int, list[int]] = {}
    tag_to_banks: dict[int, list[int]] = {}
    for i, bank in enumerate(banks):
        tag_to_banks.setdefault(bank.tag, []).append(i)
    for event in pattern.events:
        step = int(round((t_pre + event.t) / dt))
        if step >= n_steps:
            continue
        for i in tag_to_banks.get(event.tag, []):
            schedule.setdefault(step, []).append(i)

    state = resting_state(neuron, batch=batch, simplified=simplified)
    zeros = np.zeros(batch)
    for bank in banks:
        bank.state = DpiState(I_out=zeros.copy(), pulse_remaining=zeros.copy())

    v_rec = np.empty((batch, n_steps)) if record else None
    spike_steps: list[tuple[int, np.ndarray]] = []

    exc_banks = [b for b in banks if b.params.polarity is Polarity.EXCITATORY]
    inh_banks = [b for b in banks if b.params.polarity is Polarity.INHIBITORY_SUBTRACTIVE]

    for k in range(n_steps):
        for i in schedule.get(k, ()):
            banks[i].state = dpi_inject_spike(banks[i].state, banks[i].params)
        for bank in banks:
            bank.state = dpi_step(bank.state, bank.params, dt)

        i_exc = zeros
        for b in exc_banks:
            i_exc = i_exc + b.state.I_out
        i_inh = zeros
        for b in inh_banks:
            i_inh = i_inh + b.state.I_out
        i_total = net_synaptic_current(i_exc, 0.0, i_inh) + neuron.I_dc

        state, spiked = step_neuron(state, neuron, i_total, dt, simplified=simplified)
        if np.any(spiked):
            spike_steps.append((k, np.asarray(spiked).copy()))
        if record:
            v_rec[:, k] = state.V

    spike_times = []
    for b in range(batch):
        times = [(k + 1) * dt for k, mask in spike_steps if mask[b]]
        spike_times.append(np.asarray(times))

    t = (np.arange(n_steps) + 1) * dt if record else None
    return RunResult(
        dt=dt, t_pre=t_pre, n_steps=n_steps, spike_times=spike_times, v=v_rec, t=t
    )
