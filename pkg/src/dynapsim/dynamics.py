"""Numerical kernels for the AdEx point neuron and the DPI synapse filter.

All quantities are SI (volts, amperes, seconds, farads, siemens). Every kernel
is a pure state-in/state-out function and accepts either Python floats or
equal-shaped numpy arrays, so batches of independent neuron/synapse instances
advance in lockstep through the same code path.

The neuron integrator is explicit midpoint (RK2) with a fixed step; the DPI
filter uses exact exponential updates on constant-input segments, which makes
the closed-form solution of the filter ODE a free test oracle.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Union

import numpy as np

from .errors import InvalidStep, NumericalDomain

log = logging.getLogger(__name__)

Value = Union[float, np.ndarray]

DT_DEFAULT = 1e-5
DT_MAX = 1e-4

V_RAIL_LO = 0.0
V_RAIL_HI = 1.8

# Clip for the spike-generation exponent: midpoint stages evaluated above
# V_cut must not overflow float64. Inactive for V <= V_cut, where the argument
# is at most (V_cut - V_T) / Delta_T = 5 by construction of the default V_cut.
_EXP_ARG_MAX = 20.0


class Polarity(Enum):
    EXCITATORY = "excitatory"
    INHIBITORY_SUBTRACTIVE = "inhibitory_subtractive"


def _all(cond) -> bool:
    return bool(np.all(cond))


@dataclass(frozen=True)
class NeuronParams:
    """AdEx constants plus the reset/refractory rules and clamp rails.

    Defaults are the calibrated core values: they are chosen so a nominal
    disynaptic delay element produces a hyperpolarizing dip followed by an
    EPSP peak roughly 15 ms later, not to match biological potentials.
    """

    C: Value = 4e-12            # membrane capacitance [F]
    g_L: Value = 2e-9           # leak conductance [S]
    E_L: Value = 1.05           # leak reversal potential [V]
    V_T: Value = 1.2            # spike threshold [V]
    Delta_T: Value = 0.06       # slope factor [V]
    tau_w: Value = 0.03         # adaptation time constant [s]
    a: Value = 0.0              # subthreshold adaptation [S]
    b: Value = 0.0              # spike-triggered adaptation increment [A]
    V_r: Value = 0.85           # reset potential [V]
    V_cut: Value = 1.5          # numerical spike-detection ceiling (V_T + 5*Delta_T) [V]
    t_refr: Value = 2e-3        # refractory period [s]
    I_dc: Value = 4.84e-13      # constant injected current [A]
    V_rail_lo: Value = V_RAIL_LO
    V_rail_hi: Value = V_RAIL_HI

    def __post_init__(self):
        if not (_all(np.asarray(self.C) > 0) and _all(np.asarray(self.g_L) > 0)):
            raise ValueError("C and g_L must be positive")
        if not (_all(np.asarray(self.Delta_T) > 0) and _all(np.asarray(self.tau_w) > 0)):
            raise ValueError("Delta_T and tau_w must be positive")
        if not _all(np.asarray(self.t_refr) >= 0):
            raise ValueError("t_refr must be non-negative")
        lo, hi = np.asarray(self.V_rail_lo), np.asarray(self.V_rail_hi)
        if not (
            _all(lo <= self.E_L)
            and _all(np.asarray(self.E_L) <= self.V_T)
            and _all(np.asarray(self.V_T) < self.V_cut)
            and _all(np.asarray(self.V_cut) <= hi)
        ):
            raise ValueError("require V_rail_lo <= E_L <= V_T < V_cut <= V_rail_hi")
        if not (_all(lo <= self.V_r) and _all(np.asarray(self.V_r) <= self.V_T)):
            raise ValueError("require V_rail_lo <= V_r <= V_T")

    def with_mismatch(self, c_factor: Value, gl_factor: Value) -> "NeuronParams":
        """Scale C and g_L by per-device mismatch factors."""
        return replace(self, C=self.C * c_factor, g_L=self.g_L * gl_factor)


@dataclass
class NeuronState:
    """Membrane potential, adaptation current, and time since the last spike."""

    V: Value
    w: Value = 0.0
    t_since_spike: Value = np.inf


def resting_state(
    params: NeuronParams, batch: int | None = None, simplified: bool = False
) -> NeuronState:
    """Subthreshold equilibrium (exact for the resting input I_dc).

    Fixed-point iteration of
        V = E_L + (I_dc + g_L Delta_T exp((V - V_T)/Delta_T)) / (g_L + a)
    with w = a (V - E_L); starting exactly here gives a flat pre-stimulus
    baseline instead of a settling transient. Simplified mode drops the
    exponential term, matching the simplified dynamics.
    """
    g_eff = np.asarray(params.g_L, dtype=float) + np.asarray(params.a, dtype=float)
    v_star = np.asarray(params.E_L, dtype=float) + np.asarray(params.I_dc) / g_eff
    if not simplified:
        for _ in range(60):
            arg = np.minimum((v_star - params.V_T) / params.Delta_T, _EXP_ARG_MAX)
            v_next = params.E_L + (params.I_dc + params.g_L * params.Delta_T * np.exp(arg)) / g_eff
            if np.max(np.abs(np.asarray(v_next) - v_star)) < 1e-13:
                v_star = np.asarray(v_next, dtype=float)
                break
            v_star = np.asarray(v_next, dtype=float)
    w_star = np.asarray(params.a) * (v_star - np.asarray(params.E_L))
    if batch is not None:
        v = np.broadcast_to(v_star, (batch,)).copy()
        w = np.broadcast_to(np.asarray(w_star, dtype=float), (batch,)).copy()
        return NeuronState(V=v, w=w, t_since_spike=np.full(batch, np.inf))
    return NeuronState(V=float(v_star), w=float(w_star))


def _adex_rhs(V, w, params: NeuronParams, I, simplified: bool):
    """Right-hand sides of the membrane and adaptation equations (unchecked)."""
    leak = -params.g_L * (V - params.E_L)
    if simplified:
        dv = (leak + I) / params.C
        dw = np.zeros_like(np.asarray(V, dtype=float))
        return dv, dw
    arg = np.minimum((V - params.V_T) / params.Delta_T, _EXP_ARG_MAX)
    dv = (leak + params.g_L * params.Delta_T * np.exp(arg) - w + I) / params.C
    dw = (params.a * (V - params.E_L) - w) / params.tau_w
    return dv, dw


def adex_derivatives(
    state: NeuronState,
    params: NeuronParams,
    I_syn: Value,
    simplified: bool = False,
) -> tuple[Value, Value]:
    """Time derivatives (dV/dt, dw/dt) for the given state and total input current.

    `I_syn` is the summed net synaptic current plus any DC injection. In
    simplified mode the exponential term is exactly zero and the adaptation
    variable is frozen (treated as 0).
    """
    if not (_all(np.isfinite(state.V)) and _all(np.isfinite(state.w)) and _all(np.isfinite(I_syn))):
        raise NumericalDomain("non-finite neuron state or input current")
    w = np.zeros_like(np.asarray(state.V, dtype=float)) if simplified else state.w
    dv, dw = _adex_rhs(state.V, w, params, I_syn, simplified)
    if np.isscalar(state.V) or np.ndim(state.V) == 0:
        return float(dv), float(dw)
    return dv, dw


def apply_spike_reset(state: NeuronState, params: NeuronParams) -> NeuronState:
    """Reset rule applied once per detected spike: V -> V_r, w -> w + b."""
    V = np.asarray(state.V, dtype=float)
    v_new = np.broadcast_to(np.asarray(params.V_r, dtype=float), V.shape).copy()
    w_new = state.w + params.b
    t_new = np.zeros(V.shape)
    if V.ndim == 0:
        return NeuronState(V=float(v_new), w=float(np.asarray(w_new)), t_since_spike=0.0)
    return NeuronState(V=v_new, w=np.asarray(w_new, dtype=float), t_since_spike=t_new)


def step_neuron(
    state: NeuronState,
    params: NeuronParams,
    I_syn: Value,
    dt: float,
    *,
    simplified: bool = False,
) -> tuple[NeuronState, Value]:
    """Advance the neuron one fixed step; returns (new state, spiked flag).

    Midpoint (RK2) update of (V, w). A crossing of V_cut triggers the spike
    reset; while t_since_spike < t_refr the membrane is held at V_r and only w
    evolves. V is clamped to the rails. Scalar in, scalar out; array in,
    array out (elementwise, instances independent).
    """
    if dt <= 0 or dt > DT_MAX:
        raise InvalidStep(f"dt must be in (0, {DT_MAX}], got {dt}")
    scalar = np.isscalar(state.V) or np.ndim(state.V) == 0

    V = np.asarray(state.V, dtype=float)
    w = np.zeros_like(V) if simplified else np.asarray(state.w, dtype=float)
    t_since = np.asarray(state.t_since_spike, dtype=float)
    I = np.asarray(I_syn, dtype=float)
    if not (_all(np.isfinite(V)) and _all(np.isfinite(w)) and _all(np.isfinite(I))):
        raise NumericalDomain("non-finite neuron state or input current")

    refr = t_since < params.t_refr
    spiked_entry = ~refr & (V >= params.V_cut)

    # Free midpoint step (computed for every instance; masked afterwards).
    dv1, dw1 = _adex_rhs(V, w, params, I, simplified)
    v_mid = V + 0.5 * dt * dv1
    w_mid = w + 0.5 * dt * dw1
    dv2, dw2 = _adex_rhs(v_mid, w_mid, params, I, simplified)
    v_free = V + dt * dv2
    w_free = w + dt * dw2

    # Refractory instances: V pinned at V_r, w integrates with V = V_r.
    if simplified:
        w_refr = w
    else:
        v_r = np.asarray(params.V_r, dtype=float)
        _, dwr1 = _adex_rhs(v_r, w, params, I, simplified)
        _, dwr2 = _adex_rhs(v_r, w + 0.5 * dt * dwr1, params, I, simplified)
        w_refr = w + dt * dwr2

    v_new = np.where(refr, params.V_r, v_free)
    w_new = np.where(refr, w_refr, w_free)

    spiked = spiked_entry | (~refr & (v_new >= params.V_cut))
    # Entry above V_cut short-circuits the step: reset acts on the entry state.
    w_pre_reset = np.where(spiked_entry, w, w_new)

    v_out = np.where(spiked, params.V_r, np.clip(v_new, params.V_rail_lo, params.V_rail_hi))
    w_out = np.where(spiked, w_pre_reset + params.b, w_new)
    t_out = np.where(spiked, 0.0, t_since + dt)

    if not (_all(np.isfinite(v_out)) and _all(np.isfinite(w_out))):
        raise NumericalDomain("neuron state overflow during step")

    if scalar:
        return (
            NeuronState(V=float(v_out), w=float(w_out), t_since_spike=float(t_out)),
            bool(spiked),
        )
    return NeuronState(V=v_out, w=w_out, t_since_spike=t_out), spiked


@dataclass(frozen=True)
class DpiParams:
    """First-order log-domain filter constants plus the input pulse model.

    A presynaptic spike becomes a rectangular current pulse of amplitude w_syn
    and width t_pulse; the filter integrates
        tau * dI_out/dt + I_out = (I_th / I_tau) * I_in.
    """

    tau: Value                  # filter time constant [s]
    I_tau: Value                # leakage current parameter [A]
    I_th: Value                 # gain control current [A]
    w_syn: Value                # synaptic weight current (pulse amplitude) [A]
    t_pulse: Value = 1e-5       # input pulse width [s]
    polarity: Polarity = Polarity.EXCITATORY

    def __post_init__(self):
        if not _all(np.asarray(self.tau) > 0):
            raise ValueError("tau must be positive")
        if not (_all(np.asarray(self.I_tau) > 0) and _all(np.asarray(self.I_th) > 0)):
            raise ValueError("I_tau and I_th must be positive")
        if not _all(np.asarray(self.w_syn) >= 0):
            raise ValueError("w_syn must be non-negative")
        if not _all(np.asarray(self.t_pulse) > 0):
            raise ValueError("t_pulse must be positive")
        if not _all(np.asarray(self.w_syn) >= 10 * np.asarray(self.I_tau)):
            # The filter equation is only a good circuit approximation for
            # I_in >> I_tau; it is integrated verbatim regardless of regime.
            log.warning(
                "DPI operated outside its validity regime: w_syn < 10 * I_tau"
            )

    @property
    def gain(self) -> Value:
        return self.I_th / self.I_tau

    def steady_state(self) -> Value:
        """Fixed point of the filter under a sustained pulse, (I_th/I_tau) * w_syn."""
        return self.gain * self.w_syn


@dataclass
class DpiState:
    """Output current and the remaining active-pulse time."""

    I_out: Value = 0.0
    pulse_remaining: Value = 0.0


def dpi_inject_spike(state: DpiState, params: DpiParams) -> DpiState:
    """Arm the input pulse. Near-coincident pulses extend rather than stack."""
    V = np.asarray(state.I_out, dtype=float)
    pr = np.broadcast_to(np.asarray(params.t_pulse, dtype=float), V.shape).copy()
    if V.ndim == 0:
        return DpiState(I_out=float(V), pulse_remaining=float(pr))
    return DpiState(I_out=V, pulse_remaining=pr)


def dpi_step(state: DpiState, params: DpiParams, dt: float) -> DpiState:
    """Advance the filter one step with exact exponential updates.

    Within the step the input is piecewise constant: w_syn while the pulse is
    active, 0 afterwards; the update is exact on both segments, so the whole
    trace matches the closed-form solution to float rounding.
    """
    if dt <= 0:
        raise InvalidStep(f"dt must be positive, got {dt}")
    scalar = np.isscalar(state.I_out) or np.ndim(state.I_out) == 0
    i_out = np.asarray(state.I_out, dtype=float)
    left = np.asarray(state.pulse_remaining, dtype=float)

    seg_on = np.clip(left, 0.0, dt)
    i_ss = np.asarray(params.steady_state(), dtype=float)
    # On-segment toward i_ss, then off-segment decay toward zero. seg_on = 0
    # or seg_on = dt make the corresponding factor exp(0) = 1, so no masking.
    i_on = i_ss + (i_out - i_ss) * np.exp(-seg_on / params.tau)
    i_new = i_on * np.exp(-(dt - seg_on) / params.tau)
    left_new = np.maximum(left - dt, 0.0)
    # Snap float residue from summing pulse widths in dt-sized chunks.
    left_new = np.where(left_new < dt * 1e-9, 0.0, left_new)

    if scalar:
        return DpiState(I_out=float(i_new), pulse_remaining=float(left_new))
    return DpiState(I_out=i_new, pulse_remaining=left_new)


def net_synaptic_current(exc_slow: Value, exc_fast: Value, inh_sub: Value) -> Value:
    """Summation of postsynaptic currents; subtractive inhibition may drive it negative."""
    return exc_slow + exc_fast - inh_sub
