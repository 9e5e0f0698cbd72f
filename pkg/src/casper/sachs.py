"""Consensus protein-signalling network used as ground truth for Sachs-format data.

The data itself is not bundled. Column names follow the usual 11-protein
layout; the truth graph is the 17-edge consensus network.
"""
from __future__ import annotations

import numpy as np

from .graph import GroundTruthDag

NODES = ("raf", "mek", "plcg", "pip2", "pip3", "erk", "akt", "pka", "pkc", "p38", "jnk")

EDGES = (
    ("raf", "mek"),
    ("mek", "erk"),
    ("erk", "akt"),
    ("plcg", "pip2"),
    ("plcg", "pip3"),
    ("pip3", "pip2"),
    ("pka", "raf"),
    ("pka", "mek"),
    ("pka", "erk"),
    ("pka", "akt"),
    ("pka", "p38"),
    ("pka", "jnk"),
    ("pkc", "raf"),
    ("pkc", "mek"),
    ("pkc", "pka"),
    ("pkc", "p38"),
    ("pkc", "jnk"),
)


def truth_dag(names=NODES) -> GroundTruthDag:
    """Consensus graph with nodes indexed as in ``names`` (case-insensitive)."""
    index = {n.lower(): k for k, n in enumerate(names)}
    missing = [n for n in NODES if n not in index]
    if missing:
        raise ValueError(f"column names lack {missing}")
    adj = np.zeros((len(names), len(names)), dtype=int)
    for a, b in EDGES:
        adj[index[a], index[b]] = 1
    return GroundTruthDag.from_adjacency(adj)
