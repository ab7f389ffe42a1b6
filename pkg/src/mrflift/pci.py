"""Physical Cell Identity assignment as a pairwise MRF.

The MIP picks one state per device and pays ``coeff`` on an interfering
pair whenever both devices land in the same conflict group. Each device
becomes a variable over its candidate states, and each pair gets the table
``coeff * [(x_i, x_j) in some conflict group]``; there are no unaries.

Input is JSON::

    {"devices": [{"id": 1, "states": [1, 2, 3]}, ...],
     "interference": [{"i": 1, "j": 2, "coeff": 1.0,
                       "conflicts": [{"mi": [1], "mj": [1]}, ...]}, ...]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from mrflift.errors import SchemaError, UnknownState
from mrflift.mrf_core import canonicalize


@dataclass
class Interference:
    i: int
    j: int
    coeff: float
    # pairs of (state indices of i, state indices of j)
    conflicts: list[tuple[tuple[int, ...], tuple[int, ...]]] = field(default_factory=list)


@dataclass
class PciProblem:
    device_ids: list
    states: list[list]
    interference: list[Interference] = field(default_factory=list)

    @property
    def n_devices(self):
        return len(self.device_ids)


def _require(obj, key, where):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaError(f"{where}: missing key {key!r}")
    return obj[key]


def parse_pci(source):
    """Read a PCI problem from JSON text, bytes or an already-decoded dict."""
    if isinstance(source, (str, bytes, bytearray)):
        try:
            doc = json.loads(source)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc}") from None
    else:
        doc = source
    devices = _require(doc, "devices", "document")
    if not isinstance(devices, list):
        raise SchemaError("devices must be a list")
    ids, states, index = [], [], {}
    for k, dev in enumerate(devices):
        dev_id = _require(dev, "id", f"device {k}")
        dev_states = _require(dev, "states", f"device {dev_id!r}")
        if not isinstance(dev_states, list) or not dev_states:
            raise SchemaError(f"device {dev_id!r}: states must be a nonempty list")
        if len(set(map(repr, dev_states))) != len(dev_states):
            raise SchemaError(f"device {dev_id!r}: repeated state")
        if dev_id in index:
            raise SchemaError(f"duplicate device id {dev_id!r}")
        index[dev_id] = k
        ids.append(dev_id)
        states.append(list(dev_states))

    terms = []
    for k, term in enumerate(doc.get("interference", [])):
        where = f"interference {k}"
        di, dj = _require(term, "i", where), _require(term, "j", where)
        if di not in index or dj not in index:
            raise SchemaError(f"{where}: unknown device {di if di not in index else dj!r}")
        i, j = index[di], index[dj]
        if i == j:
            raise SchemaError(f"{where}: a device cannot interfere with itself")
        coeff = _require(term, "coeff", where)
        if isinstance(coeff, bool) or not isinstance(coeff, (int, float)) or not coeff > 0:
            raise SchemaError(f"{where}: coeff must be a positive number")
        groups = []
        for g, grp in enumerate(_require(term, "conflicts", where)):
            mi = _state_indices(_require(grp, "mi", f"{where} group {g}"), states[i], di)
            mj = _state_indices(_require(grp, "mj", f"{where} group {g}"), states[j], dj)
            groups.append((mi, mj))
        terms.append(Interference(i, j, float(coeff), groups))
    return PciProblem(ids, states, terms)


def _state_indices(labels, domain, dev_id):
    if not isinstance(labels, list):
        raise SchemaError(f"device {dev_id!r}: conflict states must be a list")
    out = []
    for lab in labels:
        try:
            out.append(domain.index(lab))
        except ValueError:
            raise UnknownState(f"state {lab!r} is not a candidate of device {dev_id!r}") from None
    return tuple(out)


def read_pci(path):
    with open(path, "rb") as fh:
        return parse_pci(fh.read())


def pci_to_mrf(problem):
    """Pairwise energy-form MRF whose energy equals the MIP objective."""
    cards = [len(s) for s in problem.states]
    factors = []
    for term in problem.interference:
        hit = np.zeros((cards[term.i], cards[term.j]), dtype=bool)
        for mi, mj in term.conflicts:
            if mi and mj:
                hit[np.ix_(mi, mj)] = True
        factors.append(((term.i, term.j), np.where(hit, term.coeff, 0.0)))
    return canonicalize(problem.n_devices, cards, factors)
