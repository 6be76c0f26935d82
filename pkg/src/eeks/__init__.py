"""EEKS secure-mail laboratory: Schnorr-authenticated sessions over extended SMTP."""

__version__ = "0.1.0"
