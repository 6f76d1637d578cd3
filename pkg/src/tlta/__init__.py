"""Trusted location trigger authorisation: zone compiler, attestation-backed handover and a deterministic simulator."""

__version__ = "0.1.0"
