"""Simulation and analysis toolkit for AV-based traffic smoothing.

Car-following models, vehicle controllers, a centralized speed planner, a
platoon simulator, macroscopic field analysis, KPIs and trajectory
optimization.
"""

__version__ = "0.1.0"
