"""Adaptive CRC / QC-LDPC configuration over mobile fading links.

The package bundles a link-level simulator (CRC, QC-LDPC with belief
propagation, correlated Rayleigh fading with burst interference) and an
online-learning harness comparing discounted LinUCB against greedy and
fixed configuration policies.
"""

__version__ = "0.1.0"
