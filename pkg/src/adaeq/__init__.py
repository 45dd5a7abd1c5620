"""Ensemble Q-learning with an adaptive in-target ensemble size.

Modules: ``special`` and ``bounds`` (closed-form bias bounds), ``oracle``
(Monte Carlo check of the bounds), ``toy`` (polynomial-fit experiment),
``mdp``, ``ensemble``, ``controller`` and ``diagnostics`` (tabular learner),
``cli`` (command line).
"""

__version__ = "0.1.0"
