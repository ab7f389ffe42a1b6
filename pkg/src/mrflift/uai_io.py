"""Reading and writing graphical models in the UAI ``MARKOV`` text format.

A UAI file lists variable cardinalities, the scope of every factor, and
then one flat table of unnormalized potentials per factor. Tables are
row-major over the scope with the last scope variable varying fastest.
``//`` starts a comment that runs to the end of the line.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from mrflift.errors import (
    IndexOutOfRange,
    NonPositivePotential,
    TableSizeMismatch,
    TruncatedFile,
    UaiFormatError,
    UnknownPreamble,
)

DEFAULT_CLAMP = 1e-30


@dataclass(eq=False)
class RawModel:
    """A MARKOV network exactly as stored on disk (potential domain)."""

    n_vars: int
    cardinalities: tuple[int, ...]
    scopes: list[tuple[int, ...]]
    potentials: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.cardinalities = tuple(int(c) for c in self.cardinalities)
        self.scopes = [tuple(int(v) for v in s) for s in self.scopes]
        self.potentials = [np.asarray(p, dtype=np.float64).ravel() for p in self.potentials]
        if len(self.cardinalities) != self.n_vars:
            raise ValueError(
                f"{len(self.cardinalities)} cardinalities for {self.n_vars} variables"
            )
        if len(self.scopes) != len(self.potentials):
            raise ValueError(f"{len(self.scopes)} scopes but {len(self.potentials)} tables")
        for scope, table in zip(self.scopes, self.potentials):
            if len(set(scope)) != len(scope):
                raise IndexOutOfRange(f"repeated variable in scope {scope}")
            for v in scope:
                if not 0 <= v < self.n_vars:
                    raise IndexOutOfRange(f"variable {v} out of range in scope {scope}")
            size = math.prod(self.cardinalities[v] for v in scope)
            if table.size != size:
                raise TableSizeMismatch(
                    f"scope {scope} needs {size} values, table has {table.size}"
                )

    def __eq__(self, other):
        if not isinstance(other, RawModel):
            return NotImplemented
        return (
            self.n_vars == other.n_vars
            and self.cardinalities == other.cardinalities
            and self.scopes == other.scopes
            and all(np.array_equal(a, b) for a, b in zip(self.potentials, other.potentials))
        )

    def allclose(self, other, rtol=1e-12):
        return (
            self.n_vars == other.n_vars
            and self.cardinalities == other.cardinalities
            and self.scopes == other.scopes
            and all(
                np.allclose(a, b, rtol=rtol, atol=0.0)
                for a, b in zip(self.potentials, other.potentials)
            )
        )


def _tokenize(text):
    """Yield ``(token, line_number)`` pairs with ``//`` comments removed."""
    for lineno, line in enumerate(text.splitlines(), start=1):
        cut = line.find("//")
        if cut >= 0:
            line = line[:cut]
        for tok in line.split():
            yield tok, lineno


class _Reader:
    def __init__(self, text, source):
        self._tokens = list(_tokenize(text))
        self._pos = 0
        self.source = source

    @property
    def line(self):
        if self._pos < len(self._tokens):
            return self._tokens[self._pos][1]
        return self._tokens[-1][1] if self._tokens else None

    def at_end(self):
        return self._pos >= len(self._tokens)

    def next(self, what, exc=TruncatedFile):
        if self.at_end():
            raise exc(f"unexpected end of file while reading {what}", self.line, self.source)
        tok, _ = self._tokens[self._pos]
        self._pos += 1
        return tok

    def int(self, what, exc=TruncatedFile):
        line = self.line
        tok = self.next(what, exc)
        try:
            return int(tok)
        except ValueError:
            raise UaiFormatError(f"expected integer for {what}, got {tok!r}", line, self.source)

    def floats(self, count, what):
        line = self.line
        chunk = self._tokens[self._pos : self._pos + count]
        if len(chunk) < count:
            raise TableSizeMismatch(
                f"{what} declares {count} values, only {len(chunk)} present", line, self.source
            )
        self._pos += count
        try:
            return np.array([tok for tok, _ in chunk], dtype=np.float64)
        except ValueError:
            for tok, ln in chunk:
                try:
                    float(tok)
                except ValueError:
                    raise UaiFormatError(f"expected number in {what}, got {tok!r}", ln, self.source)
            raise


def parse_uai(text, source=None):
    """Parse UAI ``MARKOV`` text (``str`` or ``bytes``) into a :class:`RawModel`.

    ``source`` is only used to prefix error messages with a file name.
    """
    if isinstance(text, (bytes, bytearray)):
        text = text.decode("utf-8")
    rd = _Reader(text, source)
    line = rd.line
    preamble = rd.next("preamble", UnknownPreamble) if not rd.at_end() else None
    if preamble is None or preamble.upper() != "MARKOV":
        raise UnknownPreamble(f"expected MARKOV preamble, got {preamble!r}", line, source)

    n_vars = rd.int("number of variables")
    if n_vars < 0:
        raise UaiFormatError("negative variable count", rd.line, source)
    cards = []
    for v in range(n_vars):
        line = rd.line
        c = rd.int(f"cardinality of variable {v}")
        if c < 1:
            raise UaiFormatError(f"cardinality {c} of variable {v} < 1", line, source)
        cards.append(c)

    n_factors = rd.int("number of factors")
    scopes = []
    for f in range(n_factors):
        size = rd.int(f"scope size of factor {f}")
        scope = []
        for _ in range(size):
            line = rd.line
            v = rd.int(f"scope of factor {f}")
            if not 0 <= v < n_vars:
                raise IndexOutOfRange(f"variable {v} out of range [0, {n_vars})", line, source)
            if v in scope:
                raise IndexOutOfRange(f"variable {v} repeated in scope of factor {f}", line, source)
            scope.append(v)
        scopes.append(tuple(scope))

    tables = []
    for f, scope in enumerate(scopes):
        line = rd.line
        declared = rd.int(f"table size of factor {f}")
        expected = math.prod(cards[v] for v in scope)
        if declared != expected:
            raise TableSizeMismatch(
                f"factor {f} declares {declared} values but its scope needs {expected}",
                line,
                source,
            )
        tables.append(rd.floats(declared, f"table of factor {f}"))

    if not rd.at_end():
        raise TableSizeMismatch("trailing values after the last table", rd.line, source)
    return RawModel(n_vars, tuple(cards), scopes, tables)


def read_uai(path):
    with open(path, "rb") as fh:
        return parse_uai(fh.read(), source=os.fspath(path))


def write_uai(model):
    """Serialize ``model`` to UAI text; ``repr`` keeps every float round-trippable."""
    lines = ["MARKOV", str(model.n_vars), " ".join(map(str, model.cardinalities))]
    lines.append(str(len(model.scopes)))
    for scope in model.scopes:
        lines.append(" ".join(map(str, (len(scope), *scope))))
    for table in model.potentials:
        lines.append("")
        lines.append(str(table.size))
        lines.append(" ".join(repr(float(v)) for v in table))
    return "\n".join(lines) + "\n"


def to_energies(model, clamp=None):
    """Negative natural log of every potential, as a canonical ``MrfInstance``.

    ``clamp`` is ``None`` (reject values <= 0), ``True`` (replace them with
    ``DEFAULT_CLAMP``) or an explicit positive epsilon.
    """
    from mrflift.mrf_core import canonicalize

    eps = DEFAULT_CLAMP if clamp is True else clamp
    factors = []
    for scope, table in zip(model.scopes, model.potentials):
        if np.any(table <= 0) or np.any(np.isnan(table)):
            if eps is None:
                raise NonPositivePotential(
                    f"non-positive potential in factor over {scope}; pass clamp= to soften"
                )
            table = np.where(table > 0, table, eps)
        shape = tuple(model.cardinalities[v] for v in scope)
        # + 0.0 turns -log(1) = -0.0 into +0.0
        factors.append((scope, (-np.log(table) + 0.0).reshape(shape)))
    return canonicalize(model.n_vars, model.cardinalities, factors)


def from_energies(inst):
    """Inverse of :func:`to_energies`: potentials ``exp(-energy)`` per factor.

    Unaries that are identically zero are omitted.
    """
    scopes, tables = [], []
    for i, phi in enumerate(inst.unary):
        if np.any(phi != 0):
            scopes.append((i,))
            tables.append(np.exp(-phi))
    for scope, table in inst.cliques:
        scopes.append(scope)
        tables.append(np.exp(-table).ravel())
    return RawModel(inst.n_vars, inst.cardinalities, scopes, tables)
