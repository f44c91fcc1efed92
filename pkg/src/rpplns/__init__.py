"""RPPLNS: randomized pay-per-last-N-shares pool payouts.

Submodules: ``protocol`` (pool state machines), ``mining`` (event streams),
``analytics`` (closed forms), ``simulator`` (Monte Carlo and exact oracles),
``solver`` (strategic dynamic program) and ``cli``.
"""

__version__ = "0.1.0"
