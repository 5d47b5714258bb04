"""Paradifferential operators as dense spectral matrices.

The materialization convention: for a symbol with coefficients a_hat(eta, xi)
and cutoff psi, the operator matrix has

    entries[xi + eta, xi] = psi(eta, xi) * a_hat(eta, xi)

with rows and columns in FFT order and entries dropped when xi + eta leaves
the retained lattice (no wrap-around: on the cutoff support |eta| is far
below N/2 anyway).  Dense matrices are the reference semantics; the banded
fast path regroups the same sum by the x-frequencies of the symbol and must
agree to rounding error.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateProbe, GridMismatch
from .spectral import Field, check_same_grid, sobolev_norm
from .symbols import Cutoff, Symbol, regularize, x_derivative, xi_forward_difference

_structure_cache = {}


def _lattice_structure(grid):
    """(eta value, validity, lookup row) matrices for output/input pairs."""
    struct = _structure_cache.get(grid.n)
    if struct is None:
        out_f = grid.freqs[:, None].astype(np.int64)
        in_f = grid.freqs[None, :].astype(np.int64)
        eta = out_f - in_f
        valid = (eta >= -grid.n // 2) & (eta <= grid.n // 2 - 1)
        rows = np.mod(eta, grid.n)
        struct = (eta, valid, rows)
        _structure_cache[grid.n] = struct
    return struct


_psi_pair_cache = {}


def pair_mask(grid, cutoff):
    """psi(out-in, in) over all (output, input) index pairs, FFT order."""
    key = (grid.n, cutoff.big_b, cutoff.little_b)
    mask = _psi_pair_cache.get(key)
    if mask is None:
        eta, valid, _ = _lattice_structure(grid)
        xi = grid.freqs[None, :].astype(np.float64)
        mask = cutoff(eta.astype(np.float64), xi) * valid
        mask.setflags(write=False)
        _psi_pair_cache[key] = mask
    return mask


@dataclass
class OrderEstimate:
    """Least-squares fit of log output norm against log<k> over packets.

    residual is the root-mean-square misfit of the fit; probe_range is the
    (lowest, highest) packet center used.
    """

    slope: float
    intercept: float
    residual: float
    probe_range: tuple
    centers: tuple
    norms: tuple


class OperatorMatrix:
    """Dense spectral-space operator with provenance string."""

    def __init__(self, grid, entries, descriptor=""):
        entries = np.asarray(entries, dtype=np.complex128)
        if entries.shape != (grid.n, grid.n):
            raise ValueError(f"expected {(grid.n, grid.n)} entries")
        self.grid = grid
        self.entries = entries
        self.descriptor = descriptor

    def apply(self, field):
        if field.grid != self.grid:
            raise GridMismatch(f"operator on {self.grid}, field on {field.grid}")
        return Field(self.grid, self.entries @ field.spectral, _validate=False)

    def adjoint(self):
        return OperatorMatrix(self.grid, self.entries.conj().T,
                              f"adjoint({self.descriptor})")

    def compose(self, other):
        check_same_grid(self, other)
        return OperatorMatrix(self.grid, self.entries @ other.entries,
                              f"({self.descriptor})({other.descriptor})")

    def __add__(self, other):
        check_same_grid(self, other)
        return OperatorMatrix(self.grid, self.entries + other.entries)

    def __sub__(self, other):
        check_same_grid(self, other)
        return OperatorMatrix(self.grid, self.entries - other.entries)

    def __mul__(self, scalar):
        return OperatorMatrix(self.grid, self.entries * complex(scalar),
                              self.descriptor)

    __rmul__ = __mul__

    def operator_norm(self, s_out=0.0, s_in=0.0):
        """L2 operator norm between Sobolev spaces H^{s_in} -> H^{s_out}."""
        xi = self.grid.freqs.astype(np.float64)
        w_out = (1.0 + xi ** 2) ** (s_out / 2.0)
        w_in = (1.0 + xi ** 2) ** (-s_in / 2.0)
        return float(np.linalg.norm(w_out[:, None] * self.entries * w_in[None, :], 2))

    def max_entry(self):
        return float(np.max(np.abs(self.entries)))


def multiplier_matrix(grid, m):
    """Diagonal operator for a Fourier multiplier."""
    from .spectral import multiplier_values

    return OperatorMatrix(grid, np.diag(multiplier_values(grid, m)), "multiplier")


def materialize(symbol, cutoff):
    """Dense matrix of T_a for the given cutoff.

    A symbol already regularized with this cutoff is used as-is, so
    materialize(regularize(a, c), c) == materialize(a, c) exactly.
    """
    grid = symbol.grid
    sym = regularize(symbol, cutoff)
    _, valid, rows = _lattice_structure(grid)
    cols = np.broadcast_to(np.arange(grid.n)[None, :], rows.shape)
    entries = np.where(valid, sym.coeffs[rows, cols], 0.0)
    assert not np.any(entries[pair_mask(grid, cutoff) == 0.0])
    return OperatorMatrix(grid, entries, f"T[{cutoff!r}]")


def symbol_of_matrix(matrix, order_m=0.0):
    """Inverse of materialization: read a_hat(eta, xi) off the entries.

    Entries at (eta, xi) pairs that left the lattice are outside the
    representation and are ignored; on the cutoff support this loses
    nothing.  No cutoff division is performed: the result is the raw
    symbol of the matrix under the op quantization.
    """
    grid = matrix.grid
    _, valid, rows = _lattice_structure(grid)
    cols = np.broadcast_to(np.arange(grid.n)[None, :], rows.shape)
    coeffs = np.zeros((grid.n, grid.n), dtype=np.complex128)
    coeffs[rows[valid], cols[valid]] = matrix.entries[valid]
    return Symbol(grid, coeffs, order_m=order_m)


def apply(symbol, cutoff, field, fast=False):
    """T_a u; `fast` uses the banded accumulation over x-frequencies."""
    if fast:
        return paraproduct_apply(symbol, cutoff, field)
    return materialize(symbol, cutoff).apply(field)


def paraproduct_apply(symbol, cutoff, field):
    """Banded fast path: accumulate over the symbol's x-frequencies.

    Exactly regroups the dense sum, one shifted multiplier per eta with a
    nonzero row, so it matches materialize().apply() to rounding error.
    """
    grid = check_same_grid(symbol, field)
    sym = regularize(symbol, cutoff)
    out = np.zeros(grid.n, dtype=np.complex128)
    half = grid.n // 2
    for row_idx in range(grid.n):
        row = sym.coeffs[row_idx]
        if not np.any(row):
            continue
        eta = int(grid.freqs[row_idx])
        weighted = row * field.spectral
        # output mode xi + eta must stay on the lattice: no wrap-around
        shifted = grid.freqs + eta
        ok = (shifted >= -half) & (shifted <= half - 1)
        out += np.roll(np.where(ok, weighted, 0.0), eta)
    return Field(grid, out, _validate=False)


def _xi_difference_symbol(symbol, j):
    """Delta_xi^j as a same-shape symbol, FFT column order.

    At the top of the lattice, where the forward stencil would leave the
    retained modes, the last available difference is repeated (a one-sided
    stencil of the same order), so symbols polynomial in xi of degree <= j
    difference exactly.
    """
    grid = symbol.grid
    if j == 0:
        return symbol
    diff, _ = xi_forward_difference(symbol, j)
    block = np.empty((grid.n, grid.n), dtype=np.complex128)
    block[:, : grid.n - j] = diff
    block[:, grid.n - j:] = diff[:, -1:]
    inverse_order = np.argsort(np.argsort(grid.freqs, kind="stable"), kind="stable")
    return Symbol(grid, block[:, inverse_order], order_m=symbol.order_m - j)


def _term_count(rho):
    terms = int(rho) if rho == int(rho) else int(np.ceil(rho))
    return max(terms, 1)


def compose_sharp(a, b, rho):
    """Symbolic composition a#b truncated below rho.

    Sum over j < rho of (1/(i^j j!)) Delta_xi^j a * d_x^j b with forward
    xi-differences; for rho <= 1 this is the plain symbol product.
    """
    if a.grid != b.grid:
        raise GridMismatch("symbols on different grids")
    grid = a.grid
    total = np.zeros((grid.n, grid.n), dtype=np.complex128)
    for j in range(_term_count(rho)):
        da = _xi_difference_symbol(a, j)
        db = x_derivative(b, j) if j else b
        product = symbol_product(da, db)
        total += product.coeffs / ((1j ** j) * math.factorial(j))
    return Symbol(grid, total, order_m=a.order_m + b.order_m)


def symbol_product(a, b):
    """Pointwise product a(x, xi) b(x, xi), columnwise in x-space."""
    values = a.x_values() * b.x_values()
    coeffs = np.fft.fft(values, axis=0) / a.grid.n
    return Symbol(a.grid, coeffs, order_m=a.order_m + b.order_m)


def adjoint_star(a, rho):
    """Adjoint symbol expansion truncated below rho.

    Sum over j < rho of (1/(i^j j!)) Delta_xi^j d_x^j conj(a); conj acts on
    symbol values at fixed (x, xi).
    """
    grid = a.grid
    conj_values = np.conj(a.x_values())
    conj_sym = Symbol(grid, np.fft.fft(conj_values, axis=0) / grid.n,
                      order_m=a.order_m)
    total = np.zeros((grid.n, grid.n), dtype=np.complex128)
    for j in range(_term_count(rho)):
        term = x_derivative(conj_sym, j) if j else conj_sym
        total += _xi_difference_symbol(term, j).coeffs / ((1j ** j) * math.factorial(j))
    return Symbol(grid, total, order_m=a.order_m)


def wave_packet(grid, center, width=4.0):
    """L2-normalized Gaussian packet centered at mode `center`."""
    xi = grid.freqs.astype(np.float64)
    coeffs = np.exp(-((xi - center) ** 2) / (2.0 * width ** 2))
    field = Field(grid, coeffs, _validate=False)
    return field * (1.0 / sobolev_norm(field, 0.0))


def order_probe(operator, grid=None, centers=None, width=4.0):
    """Fit the operator's order from output norms on dyadic wave packets."""
    if isinstance(operator, OperatorMatrix):
        apply_fn = operator.apply
        grid = operator.grid
    else:
        apply_fn = operator
        if grid is None:
            raise ValueError("grid required for callable operators")
    if centers is None:
        centers = []
        k = 8
        while k <= grid.n // 4:
            centers.append(k)
            k *= 2
    norms = []
    for k in centers:
        out = apply_fn(wave_packet(grid, k, width))
        norms.append(sobolev_norm(out, 0.0))
    norms = np.array(norms)
    if np.all(norms < 1e-14):
        raise DegenerateProbe(f"all probe outputs below 1e-14: {norms}")
    k = np.array(centers, dtype=np.float64)
    log_k = np.log(np.sqrt(1.0 + k ** 2))
    log_n = np.log(np.maximum(norms, 1e-300))
    slope, intercept = np.polyfit(log_k, log_n, 1)
    fit = slope * log_k + intercept
    residual = float(np.sqrt(np.mean((log_n - fit) ** 2)))
    return OrderEstimate(float(slope), float(intercept), residual,
                         (min(centers), max(centers)),
                         tuple(centers), tuple(norms))


def dealias_product(u, v):
    """Physical-space product with the 2/3 rule on both inputs and output."""
    grid = check_same_grid(u, v)
    keep = np.abs(grid.freqs) <= grid.n // 3
    a = Field(grid, np.where(keep, u.spectral, 0.0), u.is_real, _validate=False)
    b = Field(grid, np.where(keep, v.spectral, 0.0), v.is_real, _validate=False)
    product = Field.from_physical(grid, a.physical() * b.physical())
    return Field(grid, np.where(keep, product.spectral, 0.0),
                 u.is_real and v.is_real, _validate=False)


DEFAULT_CUTOFF_ARGS = (8.0, 2.0)


def bony_remainder(a, b, cutoff=None):
    """Bony decomposition remainder ab - T_a b - T_b a for real fields.

    The pointwise product uses 2/3 dealiasing; the paraproducts need none
    (their cutoff already truncates the convolution).
    """
    check_same_grid(a, b)
    if not (a.is_real and b.is_real):
        raise ValueError("bony_remainder expects real fields")
    if cutoff is None:
        cutoff = Cutoff(*DEFAULT_CUTOFF_ARGS)
    product = dealias_product(a, b)
    ta_b = apply(Symbol.from_field(a), cutoff, b)
    tb_a = apply(Symbol.from_field(b), cutoff, a)
    return product - ta_b - tb_a
