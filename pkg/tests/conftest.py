import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from aadk.model import Edge, make_graph, make_node  # noqa: E402


def linear_graph(*specs, name="lin"):
    """Build Start -> ... -> End from (id, kind, config) triples."""
    nodes = [make_node("start", "Start")]
    edges = []
    prev = ("start", "out")
    for spec in specs:
        node_id, kind = spec[0], spec[1]
        config = spec[2] if len(spec) > 2 else {}
        nodes.append(make_node(node_id, kind, config))
        edges.append(Edge(prev[0], prev[1], node_id, "in"))
        prev = (node_id, "out")
    nodes.append(make_node("end", "End"))
    edges.append(Edge(prev[0], prev[1], "end", "in"))
    return make_graph(name, nodes, edges, entry="start")
