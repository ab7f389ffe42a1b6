"""MAP inference for discrete Markov random fields.

Exact, message-passing and GNN-lifting solvers over a shared energy
representation, plus UAI I/O, instance generators and a PCI reducer.
"""

from mrflift.errors import MrfError
from mrflift.mrf_core import (
    MrfInstance,
    PaddedInstance,
    PairwiseGraph,
    brute_force_map,
    canonicalize,
    clique_expansion,
    energy,
    pad,
)
from mrflift.report import SolveReport
from mrflift.uai_io import RawModel, parse_uai, read_uai, to_energies, write_uai

__all__ = [
    "MrfError",
    "MrfInstance",
    "PaddedInstance",
    "PairwiseGraph",
    "RawModel",
    "SolveReport",
    "brute_force_map",
    "canonicalize",
    "clique_expansion",
    "energy",
    "pad",
    "parse_uai",
    "read_uai",
    "to_energies",
    "write_uai",
]

__version__ = "0.1.0"
