"""Morphing legged-aerial quadruped: design arithmetic, kinematics, gait,
rigid-body simulation, controllers, morph sequencing and a scenario runner."""

__version__ = "0.1.0"
