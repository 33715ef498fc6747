"""dynapsim: desk-scale emulator of a mixed-signal neuromorphic core."""

__version__ = "0.1.0"

from .dynamics import (  # noqa: F401
    DpiParams,
    DpiState,
    NeuronParams,
    NeuronState,
    Polarity,
    adex_derivatives,
    apply_spike_reset,
    dpi_inject_spike,
    dpi_step,
    net_synaptic_current,
    step_neuron,
)
from .fabric import (  # noqa: F401
    Address,
    BiasCode,
    CamSlot,
    CoreBiasSet,
    Fabric,
    MismatchConfig,
    SynapseType,
    bias_to_current,
    current_to_tau,
    effective_dpi_params,
    sample_mismatch,
)
from .stimulus import (  # noqa: F401
    Pattern,
    SpikeEvent,
    gen_pair,
    gen_single,
    gen_triplet,
    repeat_pattern,
)
