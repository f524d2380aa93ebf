"""Bipedal gait synthesis workbench.

Analytical stack (two-mass ZMP dynamics, LQG tracking, hierarchical
planners, walk state machine) plus learning layers (GA over gait
parameters, PPO residual policy), validated against an abstract
discrete-time plant.
"""

from .backend import backend_name

__version__ = "0.1.0"
