"""Rate-splitting multiple access for coordinated multi-point joint transmission.

Weighted-sum-rate precoder design under per-BS power limits and QoS targets,
with generalized RS and its MU-LP / 1-layer RS / SC-SIC restrictions, a WMMSE
alternating-optimisation driver on top of a small interior-point cone solver,
and Monte Carlo experiment pipelines over Wyner-model channels.
"""

__version__ = "0.1.0"
