"""Scenario fixtures as plain text files.

Topology files are edge lists: one ``u v`` pair of integer AS numbers per
line.  Name-tree files hold one pathname per line (``a/b/c``); interior paths
are implied.  In both formats blank lines and ``#`` comments are ignored.
"""
from __future__ import annotations

from pathlib import Path
from typing import Iterable, List

import networkx as nx

__all__ = ["load_topology", "save_topology", "load_paths", "save_paths"]


def load_topology(path) -> nx.Graph:
    g = nx.read_edgelist(path, nodetype=int, comments="#", data=False)
    g.remove_edges_from(nx.selfloop_edges(g))
    if g.number_of_nodes() and not nx.is_connected(g):
        raise ValueError(f"{path}: topology is not connected")
    # relabel to 0..n-1 so AS numbers index allocation holders directly
    return nx.convert_node_labels_to_integers(g, ordering="sorted")


def save_topology(graph: nx.Graph, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# {graph.number_of_nodes()} nodes, {graph.number_of_edges()} edges\n")
        for u, v in sorted(tuple(sorted(e)) for e in graph.edges()):
            fh.write(f"{u} {v}\n")


def load_paths(path) -> List[str]:
    out = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            out.append(line.strip("/"))
    return out


def save_paths(paths: Iterable[str], path) -> None:
    Path(path).write_text("".join(f"{p}\n" for p in paths))
