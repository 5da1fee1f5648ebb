"""Bilateral force-feedback teleoperation stack for paired 7-DoF arms.

Operator side: measured-force assist with joint-limit avoidance and a
predictive mirror of the remote arm.  Avatar side: Cartesian impedance
tracking with safety stops.  A deterministic simulator, a wire protocol
with latency injection, and a scenario harness tie the two together at
desk scale.
"""

__version__ = "0.1.0"
