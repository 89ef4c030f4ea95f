import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adaptrait.phylo import (NewickError, PhyloTree, parse_newick, preorder, read_newick,
                             to_newick, yule_tree)
from adaptrait.rng import rng_stream

THREE = "((A:1,B:1):0.5,C:1.5):0;"


def depth_of(tree, label):
    return tree.depths[tree.tip_index()[label]]


def test_two_tip_tree():
    t = parse_newick("(A:1,B:1):0;")
    assert t.tip_count == 2
    assert t.n_nodes == 3
    assert t.parent[t.root] == -1
    assert depth_of(t, "A") == 1.0 and depth_of(t, "B") == 1.0


def test_three_tip_ultrametric():
    t = parse_newick(THREE)
    assert t.tip_labels == ("A", "B", "C")
    for lab in "ABC":
        assert depth_of(t, lab) == pytest.approx(1.5)


def test_root_length_optional():
    t = parse_newick("(A:1,B:2);")
    assert depth_of(t, "B") == 2.0


@pytest.mark.parametrize("text, msg", [
    ("(A:1,B:-2):0;", "negative"),
    ("((A:1,B:1):0.5,C:1.5;", "unbalanced"),
    ("(A:1,B:1)):0;", "unbalanced"),
    ("(A:1,A:1):0;", "duplicate"),
    ("(A:1,B):0;", "missing branch length"),
    ("((A:1,B:1),C:1):0;", "missing branch length"),
    ("", "empty"),
    ("   ", "empty"),
    ("(A:1,B:1):0", "';'"),
    ("(A:1,B:x):0;", "invalid branch length"),
    ("(A:1,B:1):0;(C:1,D:1);", "after"),
])
def test_parse_errors(text, msg):
    with pytest.raises(NewickError, match=msg):
        parse_newick(text)


def test_quoted_labels_and_comments():
    t = parse_newick("('Homo sapiens':1[&note],'it''s':1)root:0;")
    assert set(t.tip_labels) == {"Homo sapiens", "it's"}
    assert "root" in t.labels
    again = parse_newick(to_newick(t))
    assert again.tip_labels == t.tip_labels


def test_multifurcation_and_zero_length():
    t = parse_newick("(A:0,B:1,C:2,(D:0,E:0):0):0;")
    assert t.tip_count == 5
    assert depth_of(t, "D") == 0.0


def test_invalid_structure_rejected():
    with pytest.raises(NewickError, match="exactly one root"):
        PhyloTree(parent=(-1, -1), branch_length=(0.0, 0.0), labels=("a", "b"))
    with pytest.raises(NewickError, match="cycle"):
        PhyloTree(parent=(-1, 2, 1), branch_length=(0.0, 1.0, 1.0), labels=(None, "a", "b"))
    with pytest.raises(NewickError, match="label"):
        PhyloTree(parent=(-1, 0, 0), branch_length=(0.0, 1.0, 1.0), labels=(None, "a", ""))


def test_preorder_examples():
    two = parse_newick("(A:1,B:1):0;")
    order = preorder(two)
    assert order[0] == two.root and sorted(order[1:]) == [1, 2]

    chain = parse_newick("((A:1)X:1)root:0;")
    labels = [chain.labels[i] for i in preorder(chain)]
    assert labels == ["root", "X", "A"]

    three = parse_newick(THREE)
    pos = {three.labels[n] or "inner" if n != three.root else "root": i
           for i, n in enumerate(preorder(three))}
    assert pos["root"] < pos["inner"] < pos["A"]
    assert pos["inner"] < pos["B"]
    assert pos["root"] < pos["C"]


def test_levels_group_parents_first():
    t = parse_newick(THREE)
    seen = {t.root}
    for level in t.levels:
        assert all(t.parent[n] in seen for n in level)
        seen.update(level.tolist())
    assert len(seen) == t.n_nodes


def test_read_newick(tmp_path):
    path = tmp_path / "t.nwk"
    path.write_text(THREE + "\n")
    assert read_newick(path).tip_count == 3


@st.composite
def random_trees(draw):
    n = draw(st.integers(2, 30))
    seed = draw(st.integers(0, 2**32 - 1))
    return yule_tree(n, rng_stream(seed))


def _canonical(tree, node=None):
    node = tree.root if node is None else node
    kids = sorted(_canonical(tree, c) for c in tree.children[node])
    return (tree.labels[node] or "", round(tree.branch_length[node], 12), tuple(kids))


@settings(max_examples=60, deadline=None)
@given(random_trees())
def test_round_trip(tree):
    again = parse_newick(to_newick(tree))
    assert _canonical(again) == _canonical(tree)


@settings(max_examples=60, deadline=None)
@given(random_trees())
def test_traversal_properties(tree):
    order = preorder(tree)
    assert sorted(order) == list(range(tree.n_nodes))
    pos = {n: i for i, n in enumerate(order)}
    for n in range(tree.n_nodes):
        p = tree.parent[n]
        if p >= 0:
            assert pos[p] < pos[n]
            assert tree.depths[n] == pytest.approx(tree.depths[p] + tree.branch_length[n])
    assert np.all(tree.depths >= 0)


def test_yule_tree_is_ultrametric_binary():
    t = yule_tree(25, rng_stream(11))
    tip_depths = t.depths[list(t.tips)]
    assert np.allclose(tip_depths, tip_depths[0])
    assert all(len(c) in (0, 2) for c in t.children)
    assert sorted(t.tip_labels, key=lambda s: int(s[1:])) == [f"t{i}" for i in range(1, 26)]
    assert to_newick(yule_tree(25, rng_stream(11))) == to_newick(t)
    with pytest.raises(ValueError):
        yule_tree(1, rng_stream(1))
