"""Data-centric peer-to-peer file sharing over a broadcast wireless
network: protocol library, analytical oracles, and a deterministic
discrete-event simulator."""

__version__ = "0.1.0"
