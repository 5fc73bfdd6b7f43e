"""Self-proving models for GCD: the Bézout proof system, Transcript Learning and RLVF."""

__version__ = "0.1.0"
