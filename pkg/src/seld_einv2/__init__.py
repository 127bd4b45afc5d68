"""Event-independent network (EINV2) for sound event localization and detection."""

__version__ = "0.1.0"
