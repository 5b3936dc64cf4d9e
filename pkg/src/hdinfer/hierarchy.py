"""Variable clustering and top-down testing of cluster hypotheses.

The tree is built by average-linkage agglomeration on ``1 − |corr|``.  Testing
starts at the root cluster and only descends into the children of rejected
clusters, so every rejected cluster has all its ancestors rejected.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset
from .errors import ConfigurationError
from .parallel import parallel_map
from .result import InferenceResult, _jsonable

log = logging.getLogger(__name__)

DISTANCES = ("one-minus-abs-correlation",)
LINKAGES = ("average",)


@dataclass
class ClusterNode:
    id: int
    members: list
    children: list = field(default_factory=list)
    parent: int | None = None
    height: float = 0.0
    pvalue: float | None = None
    tested: bool = False
    rejected: bool = False
    error: str | None = None

    @property
    def is_leaf(self):
        return not self.children


@dataclass
class ClusterTree:
    nodes: list
    root: int
    leaf_order: list

    @property
    def p(self):
        return len(self.nodes[self.root].members)

    def __getitem__(self, k) -> ClusterNode:
        return self.nodes[k]

    def ancestors(self, k):
        out = []
        while self.nodes[k].parent is not None:
            k = self.nodes[k].parent
            out.append(k)
        return out

    def tested_nodes(self):
        return [nd for nd in self.nodes if nd.tested]

    def rejected_nodes(self):
        return [nd for nd in self.nodes if nd.rejected]

    def to_dict(self):
        return _jsonable({"root": self.root, "leaf_order": self.leaf_order,
                          "nodes": [asdict(nd) for nd in self.nodes]})

    def to_json(self, path=None, indent=2):
        text = json.dumps(self.to_dict(), indent=indent)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, d):
        return cls([ClusterNode(**nd) for nd in d["nodes"]], d["root"], list(d["leaf_order"]))

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def correlation_distance(x):
    """``1 − |corr|`` between columns, with exact zeros on the diagonal."""
    corr = np.corrcoef(np.asarray(x, dtype=float), rowvar=False)
    d = 1.0 - np.abs(np.atleast_2d(corr))
    np.fill_diagonal(d, 0.0)
    return np.clip(d, 0.0, 1.0)


def average_linkage(dist):
    """Agglomerative average linkage on a full distance matrix.

    Returns merges ``(slot_a, slot_b, height)`` where a cluster's slot is its
    smallest member index.  Among tied distances the pair with the smallest
    ``(slot_a, slot_b)`` merges first.
    """
    d = np.array(dist, dtype=float)
    p = d.shape[0]
    d[np.tril_indices(p)] = np.inf
    size = np.ones(p)
    alive = np.ones(p, dtype=bool)
    merges = []
    for _ in range(p - 1):
        k = int(np.argmin(d))  # first minimum in row-major order
        a, b = divmod(k, p)
        h = float(d[a, b])
        # Lance–Williams update for average linkage, stored in the upper triangle
        row = np.minimum(d[a], d[:, a])
        rowb = np.minimum(d[b], d[:, b])
        merged = (size[a] * row + size[b] * rowb) / (size[a] + size[b])
        size[a] += size[b]
        alive[b] = False
        d[b, :] = np.inf
        d[:, b] = np.inf
        lo = np.arange(p) < a
        hi = np.arange(p) > a
        d[lo & alive, a] = merged[lo & alive]
        d[a, hi & alive] = merged[hi & alive]
        merges.append((a, b, h))
    return merges


def build_hierarchy(data: Dataset | np.ndarray, distance="one-minus-abs-correlation",
                    linkage="average", names=None) -> ClusterTree:
    """Cluster tree of the variables of ``data`` (a Dataset or a design matrix)."""
    if distance not in DISTANCES:
        raise ConfigurationError(f"unknown distance {distance!r}; choose from {DISTANCES}")
    if linkage not in LINKAGES:
        raise ConfigurationError(f"unknown linkage {linkage!r}; choose from {LINKAGES}")
    x = data.x if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    p = x.shape[1]
    if p < 2:
        raise ConfigurationError("a cluster hierarchy needs at least two variables")
    nodes = [ClusterNode(j, [j]) for j in range(p)]
    current = list(range(p))  # node id occupying each slot
    for a, b, h in average_linkage(correlation_distance(x)):
        na, nb = current[a], current[b]
        nid = len(nodes)
        nodes.append(ClusterNode(nid, sorted(nodes[na].members + nodes[nb].members),
                                 [na, nb], None, max(h, 0.0)))
        nodes[na].parent = nodes[nb].parent = nid
        current[a] = nid
    root = len(nodes) - 1
    order, stack = [], [root]
    while stack:
        k = stack.pop()
        if nodes[k].is_leaf:
            order.append(k)
        else:
            stack.extend(reversed(nodes[k].children))
    return ClusterTree(nodes, root, order)


def _as_pvalue(value):
    return float(getattr(value, "pvalue", value))


def hierarchical_test(tree: ClusterTree, group_tester, alpha=0.05, n_jobs=1) -> ClusterTree:
    """Top-down testing; returns a copy of ``tree`` with p-values and rejections.

    ``group_tester(indices)`` returns a p-value (or an object with a
    ``pvalue`` attribute).  Each tested cluster is rejected when its p-value
    is at most ``alpha``; a tester error leaves the cluster untested and stops
    the descent below it.
    """
    if not 0 <= alpha <= 1:
        raise ConfigurationError("alpha must lie in [0, 1]")
    out = copy.deepcopy(tree)
    for nd in out.nodes:
        nd.pvalue, nd.tested, nd.rejected, nd.error = None, False, False, None

    def run(k):
        try:
            return _as_pvalue(group_tester(np.array(out.nodes[k].members))), None
        except Exception as exc:  # noqa: BLE001 - user callback
            return None, f"{type(exc).__name__}: {exc}"

    frontier = [out.root]
    while frontier:
        outcomes = parallel_map(run, frontier, n_jobs)
        nxt = []
        for k, (pv, err) in zip(frontier, outcomes):
            nd = out.nodes[k]
            if err is not None:
                nd.error = err
                log.warning("group test failed on cluster %d: %s", k, err)
                continue
            nd.pvalue, nd.tested = pv, True
            nd.rejected = pv <= alpha
            if nd.rejected:
                nxt.extend(nd.children)
        frontier = nxt
    return out


def simultaneous_group_pvalue(result: InferenceResult, group) -> float:
    """``min(p · min_{j∈G} Pⱼ, 1)``, valid simultaneously over any family of groups."""
    if result.method == "multi-split":
        raise ConfigurationError("simultaneous group p-values need raw per-variable p-values "
                                 "from ridge-proj or lasso-proj")
    group = np.unique(np.asarray(group, dtype=int))
    if group.size == 0:
        raise ConfigurationError("group must be nonempty")
    return float(min(np.min(result.p_raw[group]) * result.p, 1.0))
