"""Placement, routing, and autoscaling for serverless functions at the edge.

The package is organized around the three control levels it implements:

- ``topology``: node network model and community partitioning
- ``placement`` (+ ``milp``): per-community two-step placement/routing
- ``nodectl``: per-instance vertical scaling and per-node contention
- ``sim``: deterministic discrete-event simulator driving all three loops
- ``scenario`` / ``cli``: scenario files, experiment runs, report bundles
"""

__version__ = "0.1.0"
