"""Spectral backbone: periodic grid, fields, Littlewood-Paley blocks, norms.

Conventions, fixed once and used everywhere:

* The domain is the 2*pi torus sampled at x_j = 2*pi*j/N, N even.
* Retained frequencies are the integers {-N/2, ..., N/2 - 1} in FFT order.
* Coefficients are Fourier-series coefficients,
      u_hat(xi) = (1/N) * sum_j u(x_j) exp(-i xi x_j),
  so u(x) = sum_xi u_hat(xi) exp(i xi x) on the grid.
* Real fields zero the unpaired Nyquist mode -N/2 (by fiat).
* Sobolev norms carry the 2*pi measure factor:
      ||u||_{H^s}^2 = 2*pi * sum <xi>^{2s} |u_hat(xi)|^2,
  which makes ||1||_{H^s} = sqrt(2*pi) and matches the L^2 integral.
* Block profiles use a quintic smoothstep on [1, 2]: the low-pass P_{<=k}
  equals 1 for |xi| <= 2^k, 0 for |xi| >= 2^{k+1}, and is C^2 in between.
  Negative-order multipliers send the zero mode to zero.
"""

import numpy as np

from .errors import DomainTooSmall, GridMismatch, NonFiniteMultiplier

_HERMITIAN_TOL = 1e-12


def smoothstep(t):
    """Quintic smoothstep: 0 for t <= 0, 1 for t >= 1, C^2 transition."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


class Grid:
    """Uniform periodic grid on [0, 2*pi) with FFT-ordered integer modes."""

    def __init__(self, n):
        if n % 2 != 0 or n < 8:
            raise ValueError(f"grid size must be even and >= 8, got {n}")
        self.n = n
        self.x = 2.0 * np.pi * np.arange(n) / n
        self.freqs = np.rint(np.fft.fftfreq(n) * n).astype(np.int64)
        self.nyquist = -n // 2
        # position of each integer mode in FFT order
        self._index = {int(xi): i for i, xi in enumerate(self.freqs)}

    def index_of(self, xi):
        try:
            return self._index[int(xi)]
        except KeyError:
            raise ValueError(f"mode {xi} not on the lattice of size {self.n}")

    def __eq__(self, other):
        return isinstance(other, Grid) and other.n == self.n

    def __hash__(self):
        return hash(("Grid", self.n))

    def __repr__(self):
        return f"Grid(n={self.n})"


def check_same_grid(*objects):
    grids = [obj.grid for obj in objects]
    for g in grids[1:]:
        if g != grids[0]:
            raise GridMismatch(f"mixed grids: {grids[0]} vs {g}")
    return grids[0]


class Field:
    """A scalar function on the grid, stored by spectral coefficients."""

    def __init__(self, grid, spectral, is_real=False, _validate=True):
        spectral = np.asarray(spectral, dtype=np.complex128)
        if spectral.shape != (grid.n,):
            raise ValueError(f"expected {grid.n} coefficients, got {spectral.shape}")
        if is_real and _validate:
            spectral = spectral.copy()
            spectral[grid.index_of(grid.nyquist)] = 0.0
            scale = max(np.max(np.abs(spectral)), 1.0)
            defect = _hermitian_defect(grid, spectral)
            if defect > _HERMITIAN_TOL * scale:
                raise ValueError(
                    f"coefficients violate Hermitian symmetry by {defect:.3e}"
                )
        self.grid = grid
        self.spectral = spectral
        self.is_real = bool(is_real)

    @classmethod
    def from_physical(cls, grid, values):
        values = np.asarray(values)
        if values.shape != (grid.n,):
            raise ValueError(f"expected {grid.n} samples, got {values.shape}")
        is_real = not np.iscomplexobj(values)
        coeffs = np.fft.fft(values) / grid.n
        if is_real:
            coeffs[grid.index_of(grid.nyquist)] = 0.0
        return cls(grid, coeffs, is_real=is_real, _validate=False)

    def physical(self):
        values = np.fft.ifft(self.spectral) * self.grid.n
        if self.is_real:
            return values.real
        return values

    def coefficient(self, xi):
        return self.spectral[self.grid.index_of(xi)]

    def copy(self):
        return Field(self.grid, self.spectral.copy(), self.is_real, _validate=False)

    def __add__(self, other):
        check_same_grid(self, other)
        return Field(self.grid, self.spectral + other.spectral,
                     self.is_real and other.is_real, _validate=False)

    def __sub__(self, other):
        check_same_grid(self, other)
        return Field(self.grid, self.spectral - other.spectral,
                     self.is_real and other.is_real, _validate=False)

    def __mul__(self, scalar):
        scalar = complex(scalar)
        real = self.is_real and scalar.imag == 0.0
        return Field(self.grid, self.spectral * scalar, real, _validate=False)

    __rmul__ = __mul__

    def __neg__(self):
        return self * (-1.0)


def _hermitian_defect(grid, spectral):
    """Max |u_hat(-xi) - conj(u_hat(xi))| over paired modes."""
    n = grid.n
    defect = abs(spectral[0].imag)
    pos = spectral[1:n // 2]
    neg = spectral[-1:-(n // 2):-1]
    if len(pos):
        defect = max(defect, np.max(np.abs(neg - np.conj(pos))))
    return defect


def block_profile(t):
    """Low-pass profile P_0 as a function of |xi|: 1 below 1, 0 above 2."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    return 1.0 - smoothstep(t - 1.0)


class LpBlocks:
    """Littlewood-Paley block multipliers P_0, ..., P_K on a grid.

    K is the smallest integer with 2^K >= N/2 so the profiles sum to one on
    every retained mode.
    """

    def __init__(self, grid):
        self.grid = grid
        self.count = int(np.ceil(np.log2(grid.n // 2))) + 1
        xi = grid.freqs.astype(np.float64)
        lowpass = [block_profile(xi / 2.0 ** k) for k in range(self.count)]
        profiles = [lowpass[0]]
        for k in range(1, self.count):
            profiles.append(lowpass[k] - lowpass[k - 1])
        self.profiles = np.array(profiles)

    def profile(self, k):
        return self.profiles[k]


_blocks_cache = {}


def get_blocks(grid):
    blocks = _blocks_cache.get(grid.n)
    if blocks is None:
        blocks = LpBlocks(grid)
        _blocks_cache[grid.n] = blocks
    return blocks


def lp_decompose(field):
    """Return the list [P_0 u, ..., P_K u]; the sum reproduces u."""
    blocks = get_blocks(field.grid)
    return [
        Field(field.grid, profile * field.spectral, field.is_real, _validate=False)
        for profile in blocks.profiles
    ]


def multiplier_values(grid, m):
    """Evaluate a multiplier (callable or array) on the retained modes."""
    if callable(m):
        values = np.asarray(m(grid.freqs), dtype=np.complex128)
    else:
        values = np.asarray(m, dtype=np.complex128)
    if values.shape != (grid.n,):
        raise ValueError(f"multiplier must cover {grid.n} modes, got {values.shape}")
    if not np.all(np.isfinite(values)):
        bad = grid.freqs[~np.isfinite(values)]
        raise NonFiniteMultiplier(f"multiplier non-finite at modes {bad.tolist()}")
    return values


def multiplier_apply(field, m):
    """Apply a Fourier multiplier m(D) to a field.

    m may be a callable of the integer frequency array or a precomputed
    array in FFT order.  Raises NonFiniteMultiplier when m is NaN or
    infinite on any retained mode.
    """
    values = multiplier_values(field.grid, m)
    out = values * field.spectral
    # a real multiplier that is even in xi preserves realness
    real = field.is_real and _preserves_real(field.grid, values)
    return Field(field.grid, out, real, _validate=False)


def _preserves_real(grid, values):
    n = grid.n
    if abs(values[0].imag) > 0:
        return False
    pos = values[1:n // 2]
    neg = values[-1:-(n // 2):-1]
    return bool(np.all(np.abs(neg - np.conj(pos)) <= 1e-14 * (1 + np.abs(pos))))


# -- named multipliers ------------------------------------------------------

def abs_d_pow(beta):
    """|D|^beta; for beta < 0 (and beta > 0) the zero mode maps to zero."""
    def m(xi):
        a = np.abs(xi).astype(np.float64)
        if beta == 0:
            return np.ones_like(a)
        with np.errstate(divide="ignore"):
            out = np.where(a > 0, a ** beta, 0.0)
        return out
    return m


def bessel_pow(s):
    """<D>^s with <xi> = (1 + xi^2)^{1/2}."""
    return lambda xi: (1.0 + xi.astype(np.float64) ** 2) ** (s / 2.0)


def derivative():
    """d/dx, the multiplier i*xi."""
    return lambda xi: 1j * xi.astype(np.float64)


def dispersion_symbol(alpha):
    """d_x |D|^{alpha-1}, the multiplier i*xi*|xi|^{alpha-1} (0 at xi=0)."""
    def m(xi):
        x = xi.astype(np.float64)
        return 1j * np.sign(x) * np.abs(x) ** alpha
    return m


def inverse_dx():
    """d_x^{-1}: division by i*xi, zero mode to zero."""
    def m(xi):
        x = xi.astype(np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(x != 0, 1.0 / (1j * x), 0.0)
        return out
    return m


def lp_block_multiplier(grid, k):
    """The k-th block profile P_k(D) as a multiplier array."""
    return get_blocks(grid).profile(k)


# -- norms ------------------------------------------------------------------

def sobolev_norm(field, s):
    xi = field.grid.freqs.astype(np.float64)
    weights = (1.0 + xi ** 2) ** s
    return float(np.sqrt(2.0 * np.pi * np.sum(weights * np.abs(field.spectral) ** 2)))


def homogeneous_sobolev_norm(field, s):
    xi = np.abs(field.grid.freqs.astype(np.float64))
    weights = np.zeros_like(xi)
    positive = xi > 0
    weights[positive] = xi[positive] ** (2.0 * s)
    return float(np.sqrt(2.0 * np.pi * np.sum(weights * np.abs(field.spectral) ** 2)))


def linf_norm(field):
    return float(np.max(np.abs(field.physical())))


def wk_inf_norm(field, k):
    """W^{k,inf} norm: sum of sup norms of derivatives up to order k."""
    if k < 0:
        raise ValueError("derivative count must be >= 0")
    total = 0.0
    xi = 1j * field.grid.freqs.astype(np.float64)
    coeffs = field.spectral
    for j in range(k + 1):
        values = np.fft.ifft(coeffs) * field.grid.n
        total += float(np.max(np.abs(values)))
        coeffs = coeffs * xi
    return total


def zygmund_norm(field, s):
    """C^s_* norm: sup_k 2^{ks} ||P_k u||_inf."""
    blocks = get_blocks(field.grid)
    best = 0.0
    for k in range(blocks.count):
        piece = np.fft.ifft(blocks.profile(k) * field.spectral) * field.grid.n
        best = max(best, 2.0 ** (k * s) * float(np.max(np.abs(piece))))
    return best


def norm(field, kind, s=0.0, k=0):
    """Dispatch table for the norms used across the package."""
    if kind == "hs":
        return sobolev_norm(field, s)
    if kind == "hs_dot":
        return homogeneous_sobolev_norm(field, s)
    if kind == "zygmund":
        return zygmund_norm(field, s)
    if kind == "linf":
        return linf_norm(field)
    if kind == "wkinf":
        return wk_inf_norm(field, k)
    raise ValueError(f"unknown norm kind {kind!r}")


def l2_norm(field):
    return sobolev_norm(field, 0.0)


def forward_difference(values, axis, order, width=None):
    """Iterated forward difference along one axis of a lattice array.

    The array shrinks by `order` entries along `axis`; callers are expected
    to have checked the lattice is large enough (DomainTooSmall otherwise).
    """
    out = np.asarray(values)
    if out.shape[axis] <= order:
        raise DomainTooSmall(
            f"need more than {order} lattice points along axis {axis}, "
            f"have {out.shape[axis]}"
        )
    for _ in range(order):
        upper = np.take(out, range(1, out.shape[axis]), axis=axis)
        lower = np.take(out, range(0, out.shape[axis] - 1), axis=axis)
        out = upper - lower
    return out
