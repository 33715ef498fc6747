"""Chip topology: addresses, CAM fan-in, bias-code mapping, device mismatch.

The emulated unit is four 4-core chips with 256 neurons per core; each neuron
holds 64 CAM slots that match presynaptic source tags and instance one of four
DPI synapse types. A per-core bias set (coarse/fine/level codes) determines
the nominal neuron and synapse parameters; log-normal mismatch factors,
deterministic in (seed, device key), spread them across the fabric.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Union

import numpy as np

from .dynamics import DpiParams, NeuronParams, Polarity
from .errors import CapacityExceeded, SlotOccupied, UnsupportedBias, UnsupportedSynapseType

N_CHIPS = 4
N_CORES = 4
N_NEURONS_PER_CORE = 256
N_CAM_SLOTS = 64

# Tags 0..4095 address physical neurons; stimulus generators use tags at or
# above this base so virtual sources share the physical tag space.
VIRTUAL_TAG_BASE = N_CHIPS * N_CORES * N_NEURONS_PER_CORE

# Bias generator: I = I_FLOOR * R**coarse * (fine+1)/256, level L divides by 16.
I_FLOOR = 0.5e-12
R_COARSE = 8.0
LEVEL_L_DIVISOR = 16.0

# Log-domain time-constant relation tau = C * U_T / (kappa * I_tau).
KAPPA = 0.7
U_T = 0.025
C_SYN_DEFAULT = 7.0e-10

# Software analog of the per-CAM digital-to-analog current converter: a
# per-type gain folding the unmodeled circuit scale factors into w_syn so the
# nominal shipped codes land in the calibrated response regime (single
# nonspiking delay element: dip then EPSP peak ~16 ms after inhibition onset,
# peak just below threshold).
DAC_GAIN_DEFAULT = {
    "ExcSlow": 1.5e11,
    "ExcFast": 1.5e11,
    "InhSubtractive": 1.6e9,
    "InhShunting": 1.6e9,
}

# Pulse-extender analog: the shipped pulse-width code (5, 40, H) maps to the
# 10 us design default; width scales inversely with the bias current.
_PULSE_CODE_CURRENT = I_FLOOR * R_COARSE**5 * 41 / 256
K_PULSE = 1e-5 * _PULSE_CODE_CURRENT


class SynapseType(Enum):
    EXC_FAST = "ExcFast"
    EXC_SLOW = "ExcSlow"
    INH_SUBTRACTIVE = "InhSubtractive"
    INH_SHUNTING = "InhShunting"

    @property
    def polarity(self) -> Polarity:
        if self in (SynapseType.EXC_FAST, SynapseType.EXC_SLOW):
            return Polarity.EXCITATORY
        return Polarity.INHIBITORY_SUBTRACTIVE


@dataclass(frozen=True, order=True)
class Address:
    """Physical neuron coordinates: chip 0-3, core 0-3, neuron 0-255."""

    chip: int
    core: int
    neuron: int

    def __post_init__(self):
        if not 0 <= self.chip < N_CHIPS:
            raise CapacityExceeded(f"chip index {self.chip} outside 0..{N_CHIPS - 1}")
        if not 0 <= self.core < N_CORES:
            raise CapacityExceeded(f"core index {self.core} outside 0..{N_CORES - 1}")
        if not 0 <= self.neuron < N_NEURONS_PER_CORE:
            raise CapacityExceeded(
                f"neuron index {self.neuron} outside 0..{N_NEURONS_PER_CORE - 1}"
            )

    @property
    def flat(self) -> int:
        return (self.chip * N_CORES + self.core) * N_NEURONS_PER_CORE + self.neuron


@dataclass(frozen=True)
class BiasCode:
    """Coarse/fine/current-level code of one bias generator output."""

    coarse: int
    fine: int
    level: str = "H"

    def __post_init__(self):
        if not 0 <= self.coarse <= 7:
            raise ValueError(f"coarse value {self.coarse} outside 0..7")
        if not 0 <= self.fine <= 255:
            raise ValueError(f"fine value {self.fine} outside 0..255")
        if self.level not in ("H", "L"):
            raise ValueError(f"current level must be 'H' or 'L', got {self.level!r}")


# The 19 named core parameters of the delay-element configuration plus the
# remaining synapse-family biases that complete the 25 per-core outputs
# (carried, unused by the experiments here).
DELAY_ELEMENT_BIASES: dict[str, BiasCode] = {
    "IF_AHTAU_N": BiasCode(7, 35, "L"),
    "IF_AHTHR_N": BiasCode(7, 1, "H"),
    "IF_AHW_P": BiasCode(7, 1, "H"),
    "IF_BUF_P": BiasCode(3, 80, "H"),
    "IF_CASC_N": BiasCode(7, 1, "H"),
    "IF_DC_P": BiasCode(1, 30, "H"),
    "IF_NMDA_N": BiasCode(1, 213, "H"),
    "IF_RFR_N": BiasCode(4, 40, "H"),
    "IF_TAU1_N": BiasCode(5, 39, "L"),
    "IF_TAU2_N": BiasCode(0, 15, "H"),
    "IF_THR_N": BiasCode(6, 135, "H"),
    "NPDPIE_TAU_S_P": BiasCode(5, 70, "H"),
    "NPDPIE_THR_S_P": BiasCode(0, 210, "H"),
    "NPDPII_TAU_F_P": BiasCode(5, 100, "H"),
    "NPDPII_THR_F_P": BiasCode(3, 60, "H"),
    "PS_WEIGHT_EXC_S_N": BiasCode(0, 140, "H"),
    "PS_WEIGHT_INH_F_N": BiasCode(0, 150, "H"),
    "PULSE_PWLK_P": BiasCode(5, 40, "H"),
    "R2R_P": BiasCode(4, 85, "H"),
}

PLACEHOLDER_BIASES: dict[str, BiasCode] = {
    "NPDPIE_TAU_F_P": BiasCode(6, 100, "H"),
    "NPDPIE_THR_F_P": BiasCode(0, 210, "H"),
    "NPDPII_TAU_S_P": BiasCode(4, 100, "H"),
    "NPDPII_THR_S_P": BiasCode(3, 60, "H"),
    "PS_WEIGHT_EXC_F_N": BiasCode(0, 140, "H"),
    "PS_WEIGHT_INH_S_N": BiasCode(0, 150, "H"),
}

BIAS_NAMES = tuple(list(DELAY_ELEMENT_BIASES) + list(PLACEHOLDER_BIASES))

# Which bias rows feed which synapse type.
_SYN_CODES = {
    SynapseType.EXC_SLOW: ("NPDPIE_TAU_S_P", "NPDPIE_THR_S_P", "PS_WEIGHT_EXC_S_N"),
    SynapseType.EXC_FAST: ("NPDPIE_TAU_F_P", "NPDPIE_THR_F_P", "PS_WEIGHT_EXC_F_N"),
    SynapseType.INH_SUBTRACTIVE: ("NPDPII_TAU_F_P", "NPDPII_THR_F_P", "PS_WEIGHT_INH_F_N"),
}


@dataclass(frozen=True)
class CoreBiasSet:
    """The 25 per-core bias codes, shared by all 256 neurons of the core."""

    codes: Mapping[str, BiasCode] = field(default_factory=dict)

    def __post_init__(self):
        merged = dict(DELAY_ELEMENT_BIASES)
        merged.update(PLACEHOLDER_BIASES)
        for name, code in self.codes.items():
            if name not in merged:
                raise ValueError(f"unknown bias parameter {name!r}")
            merged[name] = code
        object.__setattr__(self, "codes", merged)

    def __getitem__(self, name: str) -> BiasCode:
        return self.codes[name]

    def with_overrides(self, overrides: Mapping[str, BiasCode]) -> "CoreBiasSet":
        merged = dict(self.codes)
        merged.update(overrides)
        return CoreBiasSet(codes=merged)


@dataclass(frozen=True)
class MismatchConfig:
    """Log-normal device-mismatch spread. cv = 0 disables a level entirely."""

    cv_neuron: float = 0.2
    cv_cam: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.cv_neuron < 0 or self.cv_cam < 0:
            raise ValueError("mismatch cv values must be non-negative")


@dataclass(frozen=True)
class CamSlot:
    """One CAM entry: matched source tag, synapse type, per-slot mismatch.

    mismatch_factor scales the weight path of the slot's converter;
    mismatch_factor_tau scales its time constant (independent draws, see
    sample_mismatch).
    """

    slot: int
    source_tag: int
    syn_type: SynapseType
    mismatch_factor: float = 1.0
    mismatch_factor_tau: float = 1.0


def bias_to_current(code: BiasCode) -> float:
    """Map a coarse/fine/level code to amperes.

    Invented mapping (octave coarse base, linear fine): it reproduces the
    orderings the delay-element bias set relies on and is isolated here so recalibration
    touches one function.
    """
    current = I_FLOOR * R_COARSE**code.coarse * (code.fine + 1) / 256.0
    if code.level == "L":
        current /= LEVEL_L_DIVISOR
    return current


def current_to_tau(I_tau_bias: float, C_syn: float = C_SYN_DEFAULT, U_T_volts: float = U_T) -> float:
    """Filter time constant from its leakage bias: tau = C * U_T / (kappa * I)."""
    if I_tau_bias <= 0:
        raise ValueError("I_tau_bias must be positive")
    return C_syn * U_T_volts / (KAPPA * I_tau_bias)


# Independent streams for the per-device draws; stable small integers so the
# mapping never depends on run order or hashing.
STREAM_DEFAULT = 0
STREAM_NEURON_C = 1
STREAM_NEURON_GL = 2
STREAM_SYN_TAU = 10   # + synapse type index
STREAM_SYN_W = 20     # + synapse type index
STREAM_CAM_TAU = 30
STREAM_CAM_W = 31

_TYPE_INDEX = {t: i for i, t in enumerate(SynapseType)}

Key = Union[Address, tuple]


def sample_mismatch(config: MismatchConfig, key: Key, stream: int = STREAM_DEFAULT) -> float:
    """Deterministic log-normal factor with median 1 for the given device key.

    key is an Address (neuron-level, cv_neuron) or an (Address, slot) pair
    (CAM-level, cv_cam). Distinct streams give independent draws for the same
    device.
    """
    if isinstance(key, Address):
        addr, slot = key, None
        cv = config.cv_neuron
    else:
        addr, slot = key
        cv = config.cv_cam
    if cv == 0.0:
        return 1.0
    sigma = math.sqrt(math.log1p(cv * cv))
    entropy = (
        config.seed & 0xFFFFFFFFFFFFFFFF,
        stream,
        addr.chip,
        addr.core,
        addr.neuron,
        0 if slot is None else slot + 1,
    )
    z = np.random.default_rng(entropy).standard_normal()
    return float(np.exp(sigma * z))


def effective_dpi_params(
    core_biases: CoreBiasSet,
    syn_type: SynapseType,
    neuron_mm: float = 1.0,
    cam_mm: float = 1.0,
    *,
    neuron_w_mm: float | None = None,
    cam_w_mm: float | None = None,
    weight_fine: int | None = None,
    c_syn: float = C_SYN_DEFAULT,
    dac_gain: Mapping[str, float] | None = None,
) -> DpiParams:
    """Nominal synapse parameters from the core bias codes, mismatch applied.

    The tau factors (neuron_mm, cam_mm) scale the time constant; the weight
    factors default to the same values, so a single factor scales both tau and
    w_syn, but the fabric passes independent draws for the two paths.
    I_tau and I_th stay nominal.
    """
    if syn_type is SynapseType.INH_SHUNTING:
        raise UnsupportedSynapseType("shunting inhibition is not simulatable")
    gains = DAC_GAIN_DEFAULT if dac_gain is None else dac_gain
    tau_name, thr_name, w_name = _SYN_CODES[syn_type]
    i_tau = bias_to_current(core_biases[tau_name])
    i_th = bias_to_current(core_biases[thr_name])
    w_code = core_biases[w_name]
    if weight_fine is not None:
        w_code = replace(w_code, fine=weight_fine)
    w_nominal = gains[syn_type.value] * bias_to_current(w_code)

    tau_factor = neuron_mm * cam_mm
    w_factor = (neuron_mm if neuron_w_mm is None else neuron_w_mm) * (
        cam_mm if cam_w_mm is None else cam_w_mm
    )
    return DpiParams(
        tau=current_to_tau(i_tau, c_syn) * tau_factor,
        I_tau=i_tau,
        I_th=i_th,
        w_syn=w_nominal * w_factor,
        t_pulse=K_PULSE / bias_to_current(core_biases["PULSE_PWLK_P"]),
        polarity=syn_type.polarity,
    )


class Fabric:
    """Immutable-after-construction topology + mismatch view used by a run.

    Construction (CAM programming) is single-threaded; during a run the
    fabric is only read, so parallel trial workers may share it.
    """

    def __init__(
        self,
        mismatch: MismatchConfig | None = None,
        core_biases: CoreBiasSet | None = None,
        *,
        neuron_template: NeuronParams | None = None,
        c_syn: float = C_SYN_DEFAULT,
        dac_gain: Mapping[str, float] | None = None,
        enable_nmda_gating: bool = False,
    ):
        self.mismatch = mismatch if mismatch is not None else MismatchConfig()
        self.core_biases = core_biases if core_biases is not None else CoreBiasSet()
        self.neuron_template = neuron_template if neuron_template is not None else NeuronParams()
        self.c_syn = c_syn
        self.dac_gain = dict(DAC_GAIN_DEFAULT if dac_gain is None else dac_gain)
        self.enable_nmda_gating = enable_nmda_gating
        self._cams: dict[Address, dict[int, CamSlot]] = {}
        self._tag_index: dict[int, list[tuple[tuple[int, int, int], int]]] = {}

    # -- CAM programming ---------------------------------------------------

    def configure_connection(
        self, dst: Address, slot: int, source_tag: int, syn_type: SynapseType
    ) -> CamSlot:
        """Register a CAM entry; assigns the slot's mismatch factors."""
        if not 0 <= slot < N_CAM_SLOTS:
            raise CapacityExceeded(f"CAM slot {slot} outside 0..{N_CAM_SLOTS - 1}")
        table = self._cams.setdefault(dst, {})
        if slot in table:
            raise SlotOccupied(f"CAM slot {slot} on {dst} already configured")
        if len(table) >= N_CAM_SLOTS:
            raise CapacityExceeded(f"neuron {dst} already holds {N_CAM_SLOTS} CAM entries")
        entry = CamSlot(
            slot=slot,
            source_tag=source_tag,
            syn_type=syn_type,
            mismatch_factor=sample_mismatch(self.mismatch, (dst, slot), STREAM_CAM_W),
            mismatch_factor_tau=sample_mismatch(self.mismatch, (dst, slot), STREAM_CAM_TAU),
        )
        table[slot] = entry
        order_key = (dst.chip, dst.core, dst.neuron)
        bisect.insort(self._tag_index.setdefault(source_tag, []), (order_key, slot))
        return entry

    def clear_connections(self, dst: Address) -> None:
        """Drop every CAM entry of one neuron (reconfiguration helper)."""
        table = self._cams.pop(dst, {})
        order_key = (dst.chip, dst.core, dst.neuron)
        for slot, entry in table.items():
            self._tag_index[entry.source_tag].remove((order_key, slot))

    def cam_slots(self, dst: Address) -> dict[int, CamSlot]:
        return dict(self._cams.get(dst, {}))

    def neurons_with_cams(self, chip: int, core: int) -> list[Address]:
        addrs = [a for a in self._cams if a.chip == chip and a.core == core]
        return sorted(addrs)

    # -- routing -------------------------------------------------------------

    def route_spike(self, event) -> list[tuple[Address, int]]:
        """All (neuron, slot) pairs whose CAM holds the event's source tag.

        Deterministic (address, slot) order. event is a bare tag or a
        (time, tag) pair; the time is irrelevant for matching.
        """
        tag = event[1] if isinstance(event, tuple) else event
        out = []
        for (chip, core, neuron), slot in self._tag_index.get(tag, []):
            out.append((Address(chip, core, neuron), slot))
        return out

    # -- effective device parameters ----------------------------------------

    def neuron_factors(self, addr: Address) -> tuple[float, float]:
        cfg = self.mismatch
        return (
            sample_mismatch(cfg, addr, STREAM_NEURON_C),
            sample_mismatch(cfg, addr, STREAM_NEURON_GL),
        )

    def neuron_params_for(self, addr: Address) -> NeuronParams:
        c_mm, gl_mm = self.neuron_factors(addr)
        return self.neuron_template.with_mismatch(c_mm, gl_mm)

    def syn_circuit_factors(self, addr: Address, syn_type: SynapseType) -> tuple[float, float]:
        """Neuron-level (tau, weight) factors of the shared synapse circuit."""
        idx = _TYPE_INDEX[syn_type]
        return (
            sample_mismatch(self.mismatch, addr, STREAM_SYN_TAU + idx),
            sample_mismatch(self.mismatch, addr, STREAM_SYN_W + idx),
        )

    def cam_factors(self, addr: Address, slot: int) -> tuple[float, float]:
        """CAM-level (tau, weight) factors; defined for any slot, configured or not."""
        table = self._cams.get(addr)
        if table is not None and slot in table:
            entry = table[slot]
            return entry.mismatch_factor_tau, entry.mismatch_factor
        return (
            sample_mismatch(self.mismatch, (addr, slot), STREAM_CAM_TAU),
            sample_mismatch(self.mismatch, (addr, slot), STREAM_CAM_W),
        )

    def dpi_params_for(
        self,
        addr: Address,
        slot: int,
        syn_type: SynapseType | None = None,
        weight_fine: int | None = None,
    ) -> DpiParams:
        """Fully mismatched parameters for one synapse instance."""
        if syn_type is None:
            entry = self._cams.get(addr, {}).get(slot)
            if entry is None:
                raise KeyError(f"no CAM entry at {addr} slot {slot}")
            syn_type = entry.syn_type
        n_tau, n_w = self.syn_circuit_factors(addr, syn_type)
        c_tau, c_w = self.cam_factors(addr, slot)
        return effective_dpi_params(
            self.core_biases,
            syn_type,
            neuron_mm=n_tau,
            cam_mm=c_tau,
            neuron_w_mm=n_w,
            cam_w_mm=c_w,
            weight_fine=weight_fine,
            c_syn=self.c_syn,
            dac_gain=self.dac_gain,
        )

    def check_simulatable(self, addrs: Iterable[Address]) -> None:
        """Reject configurations the simulator refuses to model, loudly."""
        if self.enable_nmda_gating:
            raise UnsupportedBias("NMDA voltage gating is configured but not simulatable")
        for addr in addrs:
            for entry in self._cams.get(addr, {}).values():
                if entry.syn_type is SynapseType.INH_SHUNTING:
                    raise UnsupportedSynapseType(
                        f"shunting synapse configured at {addr} slot {entry.slot}"
                    )
