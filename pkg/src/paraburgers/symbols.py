"""Symbols a(x, xi) on the grid, admissible cutoffs, and seminorms.

A symbol is stored by its x-Fourier coefficients a_hat(eta, xi) on the
(eta, xi) lattice, both axes in FFT order.  The cutoff

    psi(eta, xi) = ramp(|xi| - B*|eta| - b),   ramp = quintic smoothstep,

vanishes for |xi| < B|eta| + b and equals one for |xi| > B|eta| + b + 1.
With integer B and b the transition band misses the integer lattice, so
lattice masks are exactly 0/1 and regularization is an exact projection.

Seminorms follow the operator-norm convention

    M^m(a; k, n) = sup_{j<=k} sup_{xi != 0} (1+|xi|)^{-(m-j)}
                   * || Delta_xi^j a(., xi) ||_{W^{n,inf}}

with forward differences Delta_xi on the integer lattice.
"""

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .errors import DomainTooSmall
from .spectral import smoothstep


class Cutoff:
    """Admissible paradifferential cutoff psi^{B,b}."""

    def __init__(self, big_b, little_b):
        if not big_b > 1:
            raise ValueError(f"need B > 1, got {big_b}")
        if not little_b > 0:
            raise ValueError(f"need b > 0, got {little_b}")
        self.big_b = float(big_b)
        self.little_b = float(little_b)

    def __call__(self, eta, xi):
        eta = np.asarray(eta, dtype=np.float64)
        xi = np.asarray(xi, dtype=np.float64)
        return smoothstep(np.abs(xi) - self.big_b * np.abs(eta) - self.little_b)

    def compose(self, other):
        """Cutoff governing T_a T_b supports: B'' = BB'/(B+B'+1), same b."""
        bb = self.big_b * other.big_b / (self.big_b + other.big_b + 1.0)
        return Cutoff(bb, min(self.little_b, other.little_b))

    def __eq__(self, other):
        return (
            isinstance(other, Cutoff)
            and other.big_b == self.big_b
            and other.little_b == self.little_b
        )

    def __hash__(self):
        return hash(("Cutoff", self.big_b, self.little_b))

    def __repr__(self):
        return f"Cutoff(B={self.big_b:g}, b={self.little_b:g})"


def cutoff_eval(cutoff, eta, xi):
    return cutoff(eta, xi)


_mask_cache = {}


def cutoff_mask(grid, cutoff):
    """psi evaluated on the full (eta, xi) lattice, FFT order both axes."""
    key = (grid.n, cutoff.big_b, cutoff.little_b)
    mask = _mask_cache.get(key)
    if mask is None:
        eta = grid.freqs.astype(np.float64)[:, None]
        xi = grid.freqs.astype(np.float64)[None, :]
        mask = cutoff(eta, xi)
        mask.setflags(write=False)
        _mask_cache[key] = mask
    return mask


class Symbol:
    """x-periodic symbol tabulated by coefficients a_hat(eta, xi)."""

    def __init__(self, grid, coeffs, order_m=0.0, rho=np.inf, cutoff=None):
        coeffs = np.asarray(coeffs, dtype=np.complex128)
        if coeffs.shape != (grid.n, grid.n):
            raise ValueError(f"expected {(grid.n, grid.n)} coefficients")
        self.grid = grid
        self.coeffs = coeffs
        self.order_m = float(order_m)
        self.rho = rho
        self.cutoff = cutoff

    @classmethod
    def from_function(cls, grid, fn, order_m=0.0, rho=np.inf):
        """Tabulate a(x_j, xi) columnwise; fn must broadcast over arrays."""
        x = grid.x[:, None]
        xi = grid.freqs.astype(np.float64)[None, :]
        values = np.asarray(fn(x, xi), dtype=np.complex128)
        values = np.broadcast_to(values, (grid.n, grid.n))
        coeffs = np.fft.fft(values, axis=0) / grid.n
        return cls(grid, coeffs, order_m=order_m, rho=rho)

    @classmethod
    def from_field(cls, field, xi_profile=None, order_m=None):
        """Symbol u(x) * g(xi); g defaults to 1 (a paraproduct symbol)."""
        grid = field.grid
        if xi_profile is None:
            profile = np.ones(grid.n)
            order = 0.0
        else:
            profile = np.asarray(xi_profile(grid.freqs.astype(np.float64)),
                                 dtype=np.complex128)
            order = 0.0
        coeffs = field.spectral[:, None] * profile[None, :]
        return cls(grid, coeffs, order_m=order if order_m is None else order_m)

    def x_values(self):
        """Physical tabulation a(x_j, xi), columns indexed by FFT order."""
        return np.fft.ifft(self.coeffs, axis=0) * self.grid.n

    def copy(self, coeffs=None, **overrides):
        out = Symbol(
            self.grid,
            self.coeffs.copy() if coeffs is None else coeffs,
            order_m=overrides.get("order_m", self.order_m),
            rho=overrides.get("rho", self.rho),
            cutoff=overrides.get("cutoff", self.cutoff),
        )
        return out

    def __add__(self, other):
        if self.grid != other.grid:
            raise ValueError("symbols on different grids")
        cut = self.cutoff if self.cutoff == other.cutoff else None
        return Symbol(self.grid, self.coeffs + other.coeffs,
                      order_m=max(self.order_m, other.order_m),
                      rho=min(self.rho, other.rho), cutoff=cut)

    def __sub__(self, other):
        return self + (other * (-1.0))

    def __mul__(self, scalar):
        return Symbol(self.grid, self.coeffs * complex(scalar),
                      order_m=self.order_m, rho=self.rho, cutoff=self.cutoff)

    __rmul__ = __mul__


def transport_symbol(field):
    """The symbol u(x) * xi of the transport operator T_u d_x."""
    grid = field.grid
    coeffs = field.spectral[:, None] * grid.freqs.astype(np.float64)[None, :]
    return Symbol(grid, coeffs, order_m=1.0)


def regularize(symbol, cutoff):
    """Multiply coefficients by psi^{B,b}; projection, idempotent per cutoff."""
    if symbol.cutoff == cutoff:
        return symbol
    mask = cutoff_mask(symbol.grid, cutoff)
    return symbol.copy(coeffs=mask * symbol.coeffs, cutoff=cutoff)


def x_derivative(symbol, order=1):
    eta = 1j * symbol.grid.freqs.astype(np.float64)
    factor = eta[:, None] ** order
    return symbol.copy(coeffs=factor * symbol.coeffs)


def monotone_order(grid):
    """Indices that sort FFT-ordered axes into increasing frequency."""
    return np.argsort(grid.freqs, kind="stable")


def xi_forward_difference(symbol, order=1):
    """Forward difference in xi; columns past the lattice edge are dropped.

    Returns (coeffs, base_freqs): coeffs has one column per base frequency
    xi with xi ... xi+order all on the lattice, in increasing order of xi.
    """
    grid = symbol.grid
    order_idx = monotone_order(grid)
    sorted_cols = symbol.coeffs[:, order_idx]
    out = sorted_cols
    for _ in range(order):
        out = out[:, 1:] - out[:, :-1]
    base = np.sort(grid.freqs)[: grid.n - order]
    return out, base


def column_wk_inf(grid, coeffs, n):
    """W^{n,inf} norm of each column of an (eta, column) coefficient block."""
    total = np.zeros(coeffs.shape[1])
    eta = 1j * grid.freqs.astype(np.float64)[:, None]
    block = coeffs
    for _ in range(n + 1):
        values = np.fft.ifft(block, axis=0) * grid.n
        total += np.max(np.abs(values), axis=0)
        block = block * eta
    return total


@dataclass
class SeminormReport:
    """Seminorm values indexed by (xi-difference count k, x-regularity n)."""

    order_m: float
    rho: float
    values: dict = dataclass_field(default_factory=dict)

    def value(self, k, n):
        return self.values[(k, n)]


def seminorm(symbol, order_m=None, n=0, k=0):
    """Single seminorm entry M^m(a; k, n); see the module docstring."""
    grid = symbol.grid
    if k > grid.n // 4:
        raise DomainTooSmall(
            f"{k} xi-differences need more lattice than n={grid.n} offers"
        )
    m = symbol.order_m if order_m is None else float(order_m)
    best = 0.0
    for j in range(k + 1):
        coeffs, base = xi_forward_difference(symbol, j)
        keep = base != 0
        if not np.any(keep):
            continue
        norms = column_wk_inf(grid, coeffs[:, keep], n)
        weights = (1.0 + np.abs(base[keep])) ** (-(m - j))
        best = max(best, float(np.max(norms * weights)))
    return best


def seminorm_report(symbol, order_m=None, k_max=1, n_max=1):
    m = symbol.order_m if order_m is None else float(order_m)
    report = SeminormReport(order_m=m, rho=symbol.rho)
    for k in range(k_max + 1):
        for n in range(n_max + 1):
            report.values[(k, n)] = seminorm(symbol, m, n=n, k=k)
    return report
