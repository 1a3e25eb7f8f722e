"""Secure compressed-telemetry workbench for implantable-device access.

Subsystems: the shifting-addition codec (codec), sparse recovery
(recovery), cryptographic primitives (crypto), protocol state machines
(wire / parties / evidence), the simulated channel and attack scenarios
(channel / scenarios / attacks), and the experiment pipeline (ecg /
reports / cli).
"""

__version__ = "0.1.0"
