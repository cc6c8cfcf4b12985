"""Coherent vs incoherent error characterization for a single qubit.

Submodules: ``channels`` (PTM metrics), ``clifford``, ``benchmarking`` (RB/PB
simulation), ``fitting``, ``lindblad`` (pulse-level simulation), ``pulses``
(transfer functions and pulse design), ``gst`` and ``cli``.
"""
from .channels import (
    PauliTransferMatrix,
    bepg,
    canonicalize,
    channel_metrics,
    coherent_error,
    diamond_bounds,
    iepg,
    iepg_exact,
    make_channel,
    unitarity,
)

__version__ = "0.1.0"

__all__ = [
    "PauliTransferMatrix",
    "bepg",
    "canonicalize",
    "channel_metrics",
    "coherent_error",
    "diamond_bounds",
    "iepg",
    "iepg_exact",
    "make_channel",
    "unitarity",
    "__version__",
]
