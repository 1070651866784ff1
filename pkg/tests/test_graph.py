from hypothesis import given, settings
from hypothesis import strategies as st

from sketchbench.tikz import extract_node_graph, parse


def graph_of(source):
    result = parse(source)
    assert result.ok, result.diagnostics
    return extract_node_graph(result.tree)


def test_two_nodes_one_edge():
    g = graph_of(
        "\\begin{tikzpicture}"
        "\\node (a) {A};\\node (b) {B};\\draw (a) -- (b);"
        "\\end{tikzpicture}"
    )
    assert set(g.vertices) == {"a", "b"}
    assert g.vertices["a"] == "A"
    assert g.edge_pairs() == [("a", "b")]
    assert g.dangling_refs == []


def test_empty_tikzpicture_gives_empty_graph():
    g = graph_of("\\begin{tikzpicture}\\end{tikzpicture}")
    assert g.empty
    assert g.vertices == {} and g.edges == [] and g.dangling_refs == []


def test_undeclared_refs_are_dangling():
    g = graph_of("\\draw (a) -- (b);")
    assert g.vertices == {}
    assert g.dangling_refs == ["a", "b"]
    assert g.edge_pairs() == [("a", "b")]


def test_forward_reference_is_not_dangling():
    g = graph_of(
        "\\begin{tikzpicture}"
        "\\draw (a) -- (b);\\node (a) {};\\node (b) {};"
        "\\end{tikzpicture}"
    )
    assert g.dangling_refs == []


def test_chain_and_edge_keyword():
    g = graph_of(
        "\\begin{tikzpicture}"
        "\\node (a) {};\\node (b) {};\\node (c) {};"
        "\\draw (a) -- (b) -- (c);"
        "\\path (a) edge (b) edge (c);"
        "\\end{tikzpicture}"
    )
    assert g.edge_pairs() == [("a", "b"), ("b", "c"), ("a", "b"), ("a", "c")]


def test_to_operator_moves_like_dash():
    g = graph_of("\\draw (a) to (b) to (c);")
    assert g.edge_pairs() == [("a", "b"), ("b", "c")]


def test_coordinates_are_not_references():
    g = graph_of("\\begin{tikzpicture}\\node (a) {};\\draw (0,0) -- (a);\\end{tikzpicture}")
    assert g.edges == []
    assert g.dangling_refs == []


def test_anchor_reference_resolves_to_node():
    g = graph_of(
        "\\begin{tikzpicture}\\node (a) {};\\node (b) {};"
        "\\draw (a.north) -- (b.south);\\end{tikzpicture}"
    )
    assert g.edge_pairs() == [("a", "b")]


def test_edge_style_from_option_block():
    g = graph_of("\\draw[->, red] (a) -- (b);")
    assert g.edges[0].style == "->, red"


def test_node_ids_case_sensitive():
    g = graph_of(
        "\\begin{tikzpicture}\\node (A) {};\\draw (a) -- (A);\\end{tikzpicture}"
    )
    assert set(g.vertices) == {"A"}
    assert g.dangling_refs == ["a"]


def test_label_via_at_position_skipped_for_id():
    g = graph_of("\\node at (0,0) (c) {C};")
    assert set(g.vertices) == {"c"}
    assert g.vertices["c"] == "C"


names = st.lists(
    st.text(alphabet="abcdefgh", min_size=1, max_size=3), min_size=2, max_size=6, unique=True
)


@settings(max_examples=150, deadline=None)
@given(names=names, edge_idx=st.data())
def test_edge_count_matches_operator_count(names, edge_idx):
    """On generated documents each edge operator yields exactly one edge."""
    decls = "".join(f"\\node ({n}) {{}};" for n in names)
    n_edges = edge_idx.draw(st.integers(min_value=0, max_value=5))
    pairs = [
        (
            edge_idx.draw(st.sampled_from(names)),
            edge_idx.draw(st.sampled_from(names)),
        )
        for _ in range(n_edges)
    ]
    draws = "".join(f"\\draw ({s}) -- ({t});" for s, t in pairs)
    g = graph_of(f"\\begin{{tikzpicture}}{decls}{draws}\\end{{tikzpicture}}")
    assert len(g.edges) == n_edges
    assert g.edge_pairs() == pairs
