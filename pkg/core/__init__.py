"""CORA: COI retransmission analysis."""

__version__ = "0.1.0"
