"""Node fields carrying a Jacobian with respect to the solver unknowns.

Each arithmetic operation applies its hand-written derivative rule to the
attached Jacobian, so a residual written with these fields yields its exact
Jacobian alongside its value.  When ``jac`` is ``None`` only values are
propagated.

The unknown vector is a list of node blocks of length ``n`` followed by one
trailing scalar.  A node field's Jacobian is kept as periodic diagonals
(:class:`Banded`), which makes every stencil operation a handful of numpy
array operations; couplings that do not fit that pattern ride along in a
sparse ``extra`` matrix.  Single-entry fields carry a dense row.
"""

from __future__ import annotations

from typing import Callable, Union

import numpy as np
from scipy import sparse

ArrayFn = Callable[[np.ndarray], np.ndarray]


class Banded:
    """Jacobian of a node field.

    ``bands[(block, offset)][i]`` is the derivative of entry ``i`` with respect
    to unknown ``block*n + (i + offset) % n``; ``length`` is the derivative with
    respect to the trailing scalar unknown.
    """

    __slots__ = ("n", "nvar", "bands", "length", "extra")

    def __init__(
        self,
        n: int,
        nvar: int,
        bands: dict[tuple[int, int], np.ndarray] | None = None,
        length: np.ndarray | None = None,
        extra: sparse.csr_matrix | None = None,
    ) -> None:
        self.n = n
        self.nvar = nvar
        self.bands = bands if bands is not None else {}
        self.length = length
        self.extra = extra

    def scaled(self, a: np.ndarray) -> Banded:
        a = np.broadcast_to(a, (self.n,))
        extra = None if self.extra is None else sparse.diags(a) @ self.extra
        return Banded(
            self.n,
            self.nvar,
            {key: v * a for key, v in self.bands.items()},
            None if self.length is None else self.length * a,
            extra,
        )

    def plus(self, other: Banded) -> Banded:
        bands = dict(self.bands)
        for key, v in other.bands.items():
            bands[key] = bands[key] + v if key in bands else v
        return Banded(self.n, self.nvar, bands, _opt_add(self.length, other.length), _opt_add(self.extra, other.extra))

    def negated(self) -> Banded:
        return self.scaled(-1.0)

    def rolled(self, shift: int, perm: np.ndarray) -> Banded:
        # out[i] = self[i - shift] reaches column (i - shift + off)
        return Banded(
            self.n,
            self.nvar,
            {(b, off - shift): np.roll(v, shift) for (b, off), v in self.bands.items()},
            None if self.length is None else np.roll(self.length, shift),
            None if self.extra is None else self.extra[perm],
        )

    def column_sum(self) -> np.ndarray:
        row = np.zeros((1, self.nvar))
        nodes = np.arange(self.n)
        for (b, off), v in self.bands.items():
            # the columns of one diagonal are a permutation, so no index repeats
            row[0, b * self.n + (nodes + off) % self.n] += v
        if self.length is not None:
            row[0, -1] += self.length.sum()
        if self.extra is not None:
            row += np.asarray(self.extra.sum(axis=0))
        return row

    def coo(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        nodes = np.arange(self.n)
        rows, cols, vals = [], [], []
        for (b, off), v in self.bands.items():
            rows.append(nodes)
            cols.append(b * self.n + (nodes + off) % self.n)
            vals.append(v)
        if self.length is not None:
            rows.append(nodes)
            cols.append(np.full(self.n, self.nvar - 1))
            vals.append(self.length)
        if self.extra is not None:
            e = self.extra.tocoo()
            rows.append(e.row)
            cols.append(e.col)
            vals.append(e.data)
        if not rows:
            return np.zeros(0, int), np.zeros(0, int), np.zeros(0)
        return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)

    def matrix(self) -> sparse.csr_matrix:
        r, c, v = self.coo()
        return sparse.csr_matrix((v, (r, c)), shape=(self.n, self.nvar))


Jac = Union[Banded, np.ndarray]


def _opt_add(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def _scale(jac: Jac | None, a: np.ndarray | float) -> Jac | None:
    if jac is None:
        return None
    if isinstance(jac, Banded):
        return jac.scaled(np.asarray(a, dtype=float))
    return jac * np.reshape(np.broadcast_to(np.asarray(a, dtype=float), (jac.shape[0],)), (-1, 1))


def _add(a: Jac | None, b: Jac | None) -> Jac | None:
    if a is None:
        return b
    if b is None:
        return a
    if isinstance(a, Banded):
        return a.plus(b)
    return a + b


def as_matrix(jac: Jac) -> sparse.csr_matrix:
    if isinstance(jac, Banded):
        return jac.matrix()
    return sparse.csr_matrix(jac)


class Jet:
    __slots__ = ("val", "jac")

    def __init__(self, val: np.ndarray, jac: Jac | None) -> None:
        self.val = np.asarray(val, dtype=float)
        self.jac = jac

    # construction -----------------------------------------------------------

    @classmethod
    def variable(cls, z: np.ndarray, start: int, size: int, with_jac: bool) -> Jet:
        """Slice of the unknowns: a whole node block, or the trailing scalar."""
        val = z[start : start + size].copy()
        if not with_jac:
            return cls(val, None)
        if size == 1:
            row = np.zeros((1, z.size))
            row[0, start] = 1.0
            return cls(val, row)
        if start % size or (z.size - 1) % size:
            raise ValueError("node blocks must align with the grid size")
        return cls(val, Banded(size, z.size, {(start // size, 0): np.ones(size)}))

    @classmethod
    def with_matrix(cls, val: np.ndarray, mat: sparse.spmatrix) -> Jet:
        """Node field whose Jacobian is an arbitrary sparse matrix."""
        mat = sparse.csr_matrix(mat)
        return cls(val, Banded(mat.shape[0], mat.shape[1], extra=mat))

    @property
    def has_jac(self) -> bool:
        return self.jac is not None

    def matrix(self) -> sparse.csr_matrix:
        if self.jac is None:
            raise ValueError("jet carries no Jacobian")
        return as_matrix(self.jac)

    def broadcast(self, n: int) -> Jet:
        """Repeat a single-entry jet ``n`` times."""
        if self.val.size != 1:
            raise ValueError("only single-entry jets can be broadcast")
        val = np.full(n, self.val[0])
        if self.jac is None:
            return Jet(val, None)
        row = self.jac[0]
        nvar = row.size
        if not np.any(row[:-1]):
            return Jet(val, Banded(n, nvar, length=np.full(n, row[-1])))
        extra = sparse.csr_matrix(np.ones((n, 1))) @ sparse.csr_matrix(row)
        return Jet(val, Banded(n, nvar, extra=extra.tocsr()))

    # algebra ----------------------------------------------------------------

    def _coerce(self, other: Jet | np.ndarray | float) -> Jet:
        if isinstance(other, Jet):
            return other
        return Jet(np.broadcast_to(np.asarray(other, dtype=float), self.val.shape).copy(), None)

    def __add__(self, other: Jet | np.ndarray | float) -> Jet:
        o = self._coerce(other)
        return Jet(self.val + o.val, _add(self.jac, o.jac))

    __radd__ = __add__

    def __neg__(self) -> Jet:
        return Jet(-self.val, _scale(self.jac, -1.0))

    def __sub__(self, other: Jet | np.ndarray | float) -> Jet:
        return self + (-self._coerce(other))

    def __rsub__(self, other: np.ndarray | float) -> Jet:
        return (-self) + other

    def __mul__(self, other: Jet | np.ndarray | float) -> Jet:
        if not isinstance(other, Jet):
            a = np.asarray(other, dtype=float)
            return Jet(self.val * a, _scale(self.jac, a))
        jac = _add(_scale(self.jac, other.val), _scale(other.jac, self.val))
        return Jet(self.val * other.val, jac)

    __rmul__ = __mul__

    def reciprocal(self) -> Jet:
        inv = 1.0 / self.val
        return Jet(inv, _scale(self.jac, -inv * inv))

    def __truediv__(self, other: Jet | np.ndarray | float) -> Jet:
        if isinstance(other, Jet):
            return self * other.reciprocal()
        return self * (1.0 / np.asarray(other, dtype=float))

    def __rtruediv__(self, other: np.ndarray | float) -> Jet:
        return self.reciprocal() * other

    def __pow__(self, power: int) -> Jet:
        return self.apply(lambda v: v**power, lambda v: power * v ** (power - 1))

    def sqrt(self) -> Jet:
        r = np.sqrt(self.val)
        return Jet(r, _scale(self.jac, 0.5 / r))

    def apply(self, fn: ArrayFn, dfn: ArrayFn) -> Jet:
        return Jet(fn(self.val), _scale(self.jac, dfn(self.val)))

    # structure --------------------------------------------------------------

    def roll(self, shift: int) -> Jet:
        """Same convention as ``np.roll``: ``out[i] = self[i - shift]``."""
        m = self.val.size
        perm = (np.arange(m) - shift) % m
        if self.jac is None:
            jac = None
        elif isinstance(self.jac, Banded):
            jac = self.jac.rolled(shift, perm)
        else:
            jac = self.jac[perm]
        return Jet(self.val[perm], jac)

    def sum(self) -> Jet:
        if self.jac is None:
            jac = None
        elif isinstance(self.jac, Banded):
            jac = self.jac.column_sum()
        else:
            jac = self.jac.sum(axis=0, keepdims=True)
        return Jet(np.array([self.val.sum()]), jac)


def apply2(fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
           d_first: Callable[[np.ndarray, np.ndarray], np.ndarray],
           d_second: Callable[[np.ndarray, np.ndarray], np.ndarray],
           a: Jet, b: Jet) -> Jet:
    """Elementwise two-argument function with its partial derivatives."""
    val = np.asarray(fn(a.val, b.val), dtype=float)
    if a.jac is None and b.jac is None:
        return Jet(val, None)
    jac = _add(
        _scale(a.jac, np.broadcast_to(d_first(a.val, b.val), val.shape)),
        _scale(b.jac, np.broadcast_to(d_second(a.val, b.val), val.shape)),
    )
    return Jet(val, jac)


def stack(parts: list[Jet]) -> tuple[np.ndarray, sparse.csr_matrix | None]:
    val = np.concatenate([p.val for p in parts])
    if any(p.jac is None for p in parts):
        return val, None
    nvar = parts[0].jac.nvar if isinstance(parts[0].jac, Banded) else parts[0].jac.shape[1]
    rows, cols, vals = [], [], []
    offset = 0
    for p in parts:
        if isinstance(p.jac, Banded):
            r, c, v = p.jac.coo()
        else:
            r, c = np.nonzero(p.jac)
            v = p.jac[r, c]
        rows.append(r + offset)
        cols.append(c)
        vals.append(v)
        offset += p.val.size
    mat = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(offset, nvar)
    )
    return val, mat
