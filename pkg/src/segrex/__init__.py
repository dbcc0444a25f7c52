"""Two-species exclusion processes with strongly divergent annihilation rates.

Desk-scale toolkit around a single microscopic model: type-1 particles
perform a speeded-up simple exclusion walk on the discrete torus, type-2
particles do not move, and the two species kill each other at doubly
occupied sites with polynomial rates.  The package provides

* an exact-event stochastic simulator (`segrex.kmc`),
* an exact master-equation solver for tiny lattices (`segrex.master`),
* a positivity-preserving solver for the matching lattice ODE system
  together with its a-priori monitors (`segrex.rd`),
* interface tracking, a Stefan enthalpy oracle and weak-form residuals
  (`segrex.analysis`),
* graph flows, window averages and a moment-bound check used by the
  entropy bookkeeping (`segrex.flows`),
* experiment orchestration (`segrex.cli`).
"""

__version__ = "0.1.0"
