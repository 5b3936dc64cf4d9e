import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.cluster import hierarchy as sch
from scipy.spatial.distance import squareform

from hdinfer import (Dataset, InferenceResult, build_hierarchy, hierarchical_test,
                     ridge_components, ridge_inference, simultaneous_group_pvalue)
from hdinfer.errors import ConfigurationError
from hdinfer.hierarchy import ClusterTree, average_linkage, correlation_distance


def fake_result(p_raw, method="ridge-proj"):
    p_raw = np.asarray(p_raw, dtype=float)
    nan = np.full(p_raw.size, np.nan)
    return InferenceResult(method, nan, nan, p_raw, p_raw, nan, nan, 0.95, 1.0,
                           np.ones(p_raw.size, dtype=bool))


def random_design(seed, n=40, p=12):
    rng = np.random.default_rng(seed)
    latent = rng.standard_normal((n, 3))
    load = rng.standard_normal((3, p)) * rng.random(p)
    return latent @ load + rng.standard_normal((n, p))


def clusters_of(tree):
    return {tuple(nd.members) for nd in tree.nodes}


@given(st.integers(0, 10_000), st.integers(2, 15))
@settings(max_examples=30)
def test_tree_structure(seed, p):
    tree = build_hierarchy(random_design(seed, p=p))
    root = tree[tree.root]
    assert root.members == list(range(p)) and root.parent is None
    assert len(tree.nodes) == 2 * p - 1
    assert sorted(tree.leaf_order) == list(range(p))
    sets = [set(nd.members) for nd in tree.nodes]
    for a in sets:
        for b in sets:
            assert a <= b or b <= a or not (a & b)
    for nd in tree.nodes:
        if nd.children:
            kids = [set(tree[c].members) for c in nd.children]
            assert kids[0].isdisjoint(kids[1]) and kids[0] | kids[1] == set(nd.members)
            assert all(tree[c].height <= nd.height + 1e-12 for c in nd.children)


@given(st.integers(0, 10_000))
@settings(max_examples=20)
def test_matches_scipy_average_linkage(seed):
    x = random_design(seed)
    dist = correlation_distance(x)
    z = sch.linkage(squareform(dist, checks=False), method="average")
    ours = sorted(h for _, _, h in average_linkage(dist))
    np.testing.assert_allclose(ours, np.sort(z[:, 2]), atol=1e-12)
    root = sch.to_tree(z)
    expected = set()

    def collect(node):
        expected.add(tuple(sorted(node.pre_order())))
        if not node.is_leaf():
            collect(node.get_left())
            collect(node.get_right())
    collect(root)
    assert clusters_of(build_hierarchy(x)) == expected


def test_perfectly_correlated_columns_merge_first(rng):
    x = rng.standard_normal((30, 6))
    x[:, 4] = -2.0 * x[:, 1]
    tree = build_hierarchy(x)
    first = tree[6]
    assert first.members == [1, 4] and first.height == pytest.approx(0.0, abs=1e-12)


def test_two_blocks_split_below_root(rng):
    n = 200
    f1, f2 = rng.standard_normal((2, n))
    x = np.column_stack([f1 + 0.5 * rng.standard_normal(n) for _ in range(4)]
                        + [f2 + 0.5 * rng.standard_normal(n) for _ in range(5)])
    tree = build_hierarchy(x)
    kids = sorted(tree[c].members for c in tree[tree.root].children)
    assert kids == [[0, 1, 2, 3], [4, 5, 6, 7, 8]]


def test_two_variables(rng):
    tree = build_hierarchy(rng.standard_normal((10, 2)))
    assert len(tree.nodes) == 3 and tree[tree.root].children == [0, 1]


def test_ties_break_toward_smallest_indices():
    dist = np.ones((4, 4)) - np.eye(4)
    merges = average_linkage(dist)
    assert [(a, b) for a, b, _ in merges] == [(0, 1), (0, 2), (0, 3)]


def test_configuration_errors(rng):
    with pytest.raises(ConfigurationError):
        build_hierarchy(rng.standard_normal((10, 1)))
    with pytest.raises(ConfigurationError):
        build_hierarchy(rng.standard_normal((10, 3)), linkage="single")


def test_root_not_rejected_tests_once(rng):
    tree = build_hierarchy(rng.standard_normal((20, 8)))
    calls = []
    out = hierarchical_test(tree, lambda g: calls.append(g) or 0.9)
    assert len(calls) == 1 and [nd.id for nd in out.tested_nodes()] == [tree.root]
    assert not out.rejected_nodes()


def test_full_descent_when_everything_significant(rng):
    tree = build_hierarchy(rng.standard_normal((20, 8)))
    out = hierarchical_test(tree, lambda g: 0.001)
    assert len(out.rejected_nodes()) == len(tree.nodes)
    assert all(out[j].rejected for j in range(8))


@given(st.lists(st.floats(1e-6, 1.0), min_size=10, max_size=10), st.floats(0.0, 0.5))
@settings(max_examples=40)
def test_rejections_are_closed_upward(pvals, alpha):
    tree = build_hierarchy(random_design(3, p=10))
    res = fake_result(pvals)
    out = hierarchical_test(tree, lambda g: simultaneous_group_pvalue(res, g), alpha)
    for nd in out.rejected_nodes():
        assert all(out[a].rejected for a in out.ancestors(nd.id))
    for nd in out.tested_nodes():
        assert nd.parent is None or out[nd.parent].rejected


def test_callback_failure_stops_descent(rng):
    tree = build_hierarchy(rng.standard_normal((20, 6)))
    bad = tree[tree.root].children[0]

    def tester(g):
        if list(g) == tree[bad].members:
            raise RuntimeError("boom")
        return 0.0

    out = hierarchical_test(tree, tester)
    assert not out[bad].tested and "boom" in out[bad].error
    below = [nd for nd in out.nodes if bad in out.ancestors(nd.id)]
    assert below and not any(nd.tested for nd in below)
    assert out[tree.root].rejected


def test_input_tree_untouched_and_threads_agree(rng):
    tree = build_hierarchy(rng.standard_normal((20, 9)))
    res = fake_result(np.linspace(1e-4, 1, 9))
    tester = lambda g: simultaneous_group_pvalue(res, g)  # noqa: E731
    a = hierarchical_test(tree, tester, 0.05)
    b = hierarchical_test(tree, tester, 0.05, n_jobs=4)
    assert a.to_dict() == b.to_dict()
    assert not tree.tested_nodes()


def test_json_round_trip(tmp_path, rng):
    tree = hierarchical_test(build_hierarchy(rng.standard_normal((20, 5))), lambda g: 0.01)
    path = tmp_path / "tree.json"
    tree.to_json(str(path))
    back = ClusterTree.from_json(str(path))
    assert back.to_dict() == tree.to_dict()


def test_correlated_active_clusters_are_found():
    rng = np.random.default_rng(44)
    n, p = 100, 100
    x = rng.standard_normal((n, p))
    for block in (range(0, 3), range(50, 53)):
        f = rng.standard_normal(n)
        for j in block:
            x[:, j] = f + 0.15 * rng.standard_normal(n)
    beta = np.zeros(p)
    beta[[0, 1, 2, 50, 51, 52]] = 1.0
    data = Dataset(x, x @ beta + rng.standard_normal(n))
    res = ridge_inference(data, ridge_components(data))
    out = hierarchical_test(build_hierarchy(data), lambda g: simultaneous_group_pvalue(res, g))
    for block in ({0, 1, 2}, {50, 51, 52}):
        hits = [nd for nd in out.rejected_nodes()
                if block <= set(nd.members) and len(nd.members) <= 10]
        assert hits, f"no small rejected cluster covers {sorted(block)}"


def test_simultaneous_group_pvalue_examples():
    p = np.ones(500)
    p[17] = 0.00001
    assert simultaneous_group_pvalue(fake_result(p), np.arange(500)) == pytest.approx(0.005)
    assert simultaneous_group_pvalue(fake_result(np.ones(5)), [0, 3]) == 1.0
    assert simultaneous_group_pvalue(fake_result([0.001, 0.5, 0.2]), [0]) == pytest.approx(0.003)
    with pytest.raises(ConfigurationError):
        simultaneous_group_pvalue(fake_result([0.1, 0.2], "multi-split"), [0])
    with pytest.raises(ConfigurationError):
        simultaneous_group_pvalue(fake_result([0.1, 0.2]), [])


@given(st.lists(st.floats(0.0, 1.0), min_size=6, max_size=6),
       st.sets(st.integers(0, 5), min_size=1), st.sets(st.integers(0, 5)))
def test_simultaneous_pvalue_monotone_in_group(pvals, small, extra):
    res = fake_result(pvals)
    assert (simultaneous_group_pvalue(res, sorted(small | extra))
            <= simultaneous_group_pvalue(res, sorted(small)))
    # simultaneity: other groups tested in between change nothing
    before = simultaneous_group_pvalue(res, sorted(small))
    for g in ([0], [1, 2], list(range(6))):
        simultaneous_group_pvalue(res, g)
    assert simultaneous_group_pvalue(res, sorted(small)) == before
