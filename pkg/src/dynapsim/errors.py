"""Typed exceptions shared across the simulator."""


class SimError(Exception):
    """Base class for all simulator errors."""


class NumericalDomain(SimError):
    """Non-finite inputs or state overflow in a numerical kernel."""


class InvalidStep(SimError):
    """Integration step size outside (0, dt_max]."""


class SlotOccupied(SimError):
    """CAM slot index already holds an entry."""


class CapacityExceeded(SimError):
    """Topology capacity violated (64 CAM slots, 256 neurons per core, ...)."""


class UnsupportedSynapseType(SimError):
    """Synapse type accepted in configuration but not simulatable."""


class UnsupportedBias(SimError):
    """Bias feature accepted in configuration but not simulatable (NMDA gating)."""


class DegenerateDelayElement(SimError):
    """Effective excitatory time constant does not exceed the inhibitory one."""


class NoInhibitionDetected(SimError):
    """Membrane trace shows no dip below baseline beyond the noise floor."""


class NoReboundDetected(SimError):
    """Membrane trace shows no rebound above baseline and no spike."""


class InsufficientCandidates(SimError):
    """Fewer candidate synapse slots than the circuit requires."""


class ConfigError(SimError):
    """Run configuration failed validation; message carries the field path."""


class UnsupportedFeature(SimError):
    """Configured experiment requires an unsupported feature at run time."""
