"""aadk: build, sync, run, debug, and package topology-graph agent apps."""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    Edge,
    Node,
    TopologyGraph,
    ValidationReport,
    apply_edit,
    make_graph,
    make_node,
    next_hop,
    validate,
)
