import json

import pytest

from aadk import topoformat
from aadk.errors import DocumentSyntaxError, InvalidGraphError, SchemaError
from aadk.model import Edge, TopologyGraph, make_graph, make_node, structural_equal

from conftest import linear_graph
from graphgen import random_graph


def test_serialize_deterministic():
    g = linear_graph(("c", "Connector"))
    assert topoformat.serialize(g) == topoformat.serialize(g)


def test_roundtrip_identity_minimal():
    g = linear_graph(("p", "Prompt", {"template": "Hi {payload}"}))
    back = topoformat.deserialize(topoformat.serialize(g))
    assert structural_equal(g, back)


def test_nodes_sorted_by_id():
    nodes = (
        make_node("start", "Start"),
        make_node("n2", "Connector"),
        make_node("n1", "Connector"),
        make_node("end", "End"),
    )
    edges = (
        Edge("start", "out", "n2", "in"),
        Edge("n2", "out", "n1", "in"),
        Edge("n1", "out", "end", "in"),
    )
    text = topoformat.serialize(make_graph("sorted", nodes, edges, entry="start"))
    assert text.index('"id": "n1"') < text.index('"id": "n2"')


def test_invalid_graph_refused():
    g = TopologyGraph(name="broken")
    with pytest.raises(InvalidGraphError):
        topoformat.serialize(g)


def test_schema_version_rejected():
    g = linear_graph(("c", "Connector"))
    doc = json.loads(topoformat.serialize(g))
    doc["schema_version"] = 2
    with pytest.raises(SchemaError):
        topoformat.deserialize(json.dumps(doc))


def test_unknown_top_level_key_rejected():
    g = linear_graph(("c", "Connector"))
    doc = json.loads(topoformat.serialize(g))
    doc["surprise"] = 1
    with pytest.raises(SchemaError):
        topoformat.deserialize(json.dumps(doc))


def test_missing_field_rejected():
    g = linear_graph(("c", "Connector"))
    doc = json.loads(topoformat.serialize(g))
    del doc["entry"]
    with pytest.raises(SchemaError):
        topoformat.deserialize(json.dumps(doc))


def test_whitespace_perturbation_same_graph():
    g = linear_graph(("c", "Connector"))
    canonical = topoformat.serialize(g)
    squeezed = json.dumps(json.loads(canonical), separators=(",", ":"))
    assert structural_equal(topoformat.deserialize(squeezed), g)


def test_truncated_document_reports_position():
    g = linear_graph(("c", "Connector"))
    text = topoformat.serialize(g)[:40]
    with pytest.raises(DocumentSyntaxError) as exc:
        topoformat.deserialize(text)
    assert exc.value.line >= 1
    assert exc.value.col >= 1


def test_layout_preserved_including_floats():
    nodes = (
        make_node("start", "Start", layout=(1, 2)),
        make_node("c", "Connector", layout=(10.5, -2.25)),
        make_node("end", "End"),
    )
    edges = (Edge("start", "out", "c", "in"), Edge("c", "out", "end", "in"))
    g = make_graph("lay", nodes, edges, entry="start")
    back = topoformat.deserialize(topoformat.serialize(g))
    assert back.node("c").layout == (10.5, -2.25)
    assert back.node("start").layout == (1, 2)
    assert back.node("end").layout is None


@pytest.mark.parametrize("seed", range(50))
def test_roundtrip_random_graphs(seed):
    g = random_graph(seed, executable=False)
    text = topoformat.serialize(g)
    back = topoformat.deserialize(text)
    assert structural_equal(g, back)
    assert topoformat.serialize(back) == text
