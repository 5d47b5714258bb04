"""Composite studies that tie the whole stack to observable quantities:
conservation diagnostics, the gauged energy estimate, the conjugation
residual, and wave-breaking scans over grids of runs.

The studies consume trajectories from `solver.run` and reduce them to
`EstimateReport`s.  Fitted constants are envelope fits, mean plus three
standard deviations of the log-ratios, so a `bounded` verdict means no
sample escapes the ensemble's own envelope; the maximum ratio is kept
alongside to expose single-sample violations.  Wave-breaking outcomes
are observations, never assertions: a scan cell only turns inconclusive
when grid refinement cannot agree on its classification.
"""

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .flow import gauss_nodes
from .gauge import dispersion_profile, solve_commutator, solve_conjugating
from .normalform import normal_form
from .paraop import (
    DEFAULT_CUTOFF_ARGS, OperatorMatrix, adjoint_star, dealias_product,
    materialize, order_probe, pair_mask
)
from .solver import SimConfig, Trajectory, default_dt, initial_field, run
from .spectral import (
    Field, Grid, abs_d_pow, bessel_pow, derivative, homogeneous_sobolev_norm,
    l2_norm, linf_norm, multiplier_apply, sobolev_norm
)
from .symbols import Cutoff, transport_symbol

VERDICTS = ("bounded", "violated", "inconclusive")
ENVELOPE_SIGMAS = 3.0
HERMITIAN_TOL = 1e-9
SKEW_TOL = 1e-8
EQUIVALENCE_BOUND = 2.0
SMALLNESS = 0.05
ELLIPTIC_C = 2.0
ORDER_BOUND = 0.2
ENSEMBLE_FAMILIES = ("cos1", "cos_mix", "bump", "random")
ENSEMBLE_AMPLITUDES = (1e-6, 3e-6, 1e-5)
GROWTH_FACTOR = 1e3
QUIET_FACTOR = 3.0
BRACKET_PANELS = 2


class InvariantBroken(RuntimeError):
    """A certified identity failed beyond its stated tolerance."""


@dataclass(frozen=True)
class DiagnosticsRecord:
    """Scalar health readings of one state.

    `weak_criterion` is the sup norm of |D|^(2-alpha) applied to the
    dealiased square: the quantity whose time integral controls growth
    for 1 < alpha < 2 and whose divergence marks wave breaking.
    """

    t: float
    mass: float
    hamiltonian: float
    sobolev_norms: dict
    lipschitz: float
    weak_criterion: float
    sup_norm: float

    def __post_init__(self):
        values = [self.t, self.mass, self.hamiltonian, self.lipschitz,
                  self.weak_criterion, self.sup_norm,
                  *self.sobolev_norms.values()]
        if not all(math.isfinite(v) for v in values):
            raise ValueError("diagnostics of a live run must be finite")


@dataclass(frozen=True)
class EstimateReport:
    """Envelope summary of a ratio study over an ensemble."""

    fitted_constant: float
    max_ratio: float
    ensemble_size: int
    verdict: str

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {self.verdict!r}")
        if (self.verdict == "bounded") != \
                (self.max_ratio <= self.fitted_constant):
            raise ValueError(
                f"verdict {self.verdict!r} contradicts max ratio "
                f"{self.max_ratio:.3e} against envelope "
                f"{self.fitted_constant:.3e}"
            )


@dataclass(frozen=True)
class ScanCell:
    """One (family, alpha, amplitude) cell of a wave-breaking scan.

    Growth factors are from the fine grid; `outcome` is the shared
    classification or `inconclusive` when the two grids disagree.
    """

    family: str
    alpha: float
    amplitude: float
    coarse: str
    fine: str
    outcome: str
    lip_growth: float
    sup_growth: float


def _map_cells(fn, cells):
    """Independent cells in a worker pool; results keep input order."""
    cells = list(cells)
    if len(cells) <= 1:
        return [fn(cell) for cell in cells]
    workers = min(len(cells), os.cpu_count() or 1)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, cells))


def _ddt(stack, h):
    """d/dt along axis 0: 4th-order centered inside, 2nd-order at the ends."""
    stack = np.asarray(stack)
    out = np.zeros_like(stack)
    count = stack.shape[0]
    if count == 1:
        return out
    if count < 5:
        raise ValueError(f"need 1 or >= 5 time samples, got {count}")
    out[0] = (-3.0 * stack[0] + 4.0 * stack[1] - stack[2]) / (2.0 * h)
    out[-1] = (3.0 * stack[-1] - 4.0 * stack[-2] + stack[-3]) / (2.0 * h)
    out[1] = (stack[2] - stack[0]) / (2.0 * h)
    out[-2] = (stack[-1] - stack[-3]) / (2.0 * h)
    out[2:-2] = (
        -stack[4:] + 8.0 * stack[3:-1] - 8.0 * stack[1:-3] + stack[:-4]
    ) / (12.0 * h)
    return out


def _sample_spacing(times):
    times = np.asarray(times, dtype=np.float64)
    if len(times) < 5:
        raise ValueError(f"need >= 5 trajectory samples, got {len(times)}")
    gaps = np.diff(times)
    if not np.allclose(gaps, gaps[0], rtol=1e-9, atol=0.0):
        raise ValueError("study trajectories must be uniformly sampled")
    return float(gaps[0])


def _trajectories(traj):
    if isinstance(traj, Trajectory):
        return [traj]
    return list(traj)


def _envelope_fit(ratios, sigmas=ENVELOPE_SIGMAS):
    """(envelope, max) of a ratio sample; zeros stay out of the log fit."""
    ratios = np.asarray(list(ratios), dtype=np.float64)
    top = float(np.max(ratios)) if ratios.size else 0.0
    positive = ratios[ratios > 0.0]
    if positive.size == 0:
        return 0.0, top
    logs = np.log(positive)
    envelope = float(np.exp(np.mean(logs) + sigmas * np.std(logs)))
    return envelope, top


def diagnostics(u, alpha, s_list=(2.0,), t=0.0):
    """All scalar readings of a state in one record."""
    mass = l2_norm(u) ** 2
    quad = homogeneous_sobolev_norm(u, 0.5 * (alpha - 1.0)) ** 2
    cubic = 2.0 * np.pi / u.grid.n * float(np.sum(u.physical() ** 3)) / 3.0
    square = dealias_product(u, u)
    return DiagnosticsRecord(
        t=float(t),
        mass=mass,
        hamiltonian=quad + cubic,
        sobolev_norms={float(s): sobolev_norm(u, float(s)) for s in s_list},
        lipschitz=linf_norm(multiplier_apply(u, derivative())),
        weak_criterion=linf_norm(
            multiplier_apply(square, abs_d_pow(2.0 - float(alpha)))
        ),
        sup_norm=linf_norm(u),
    )


def diagnostics_csv(records, times=None):
    """CSV text, one row per sample; `times` overrides the stored t."""
    records = list(records)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    s_keys = sorted(records[0].sobolev_norms) if records else [2.0]
    writer.writerow(
        ["t", "mass", "hamiltonian", *[f"H{s:g}" for s in s_keys],
         "lipschitz", "weak_criterion", "sup"]
    )
    for i, rec in enumerate(records):
        t = rec.t if times is None else float(times[i])
        writer.writerow([
            repr(float(t)), repr(rec.mass), repr(rec.hamiltonian),
            *[repr(rec.sobolev_norms[s]) for s in s_keys],
            repr(rec.lipschitz), repr(rec.weak_criterion),
            repr(rec.sup_norm),
        ])
    return buffer.getvalue()


def standard_ensemble(n_points, alpha, t_end, dt=None, stride=1,
                      amplitudes=ENSEMBLE_AMPLITUDES,
                      equation="paralinear", seed=0, cutoff=None):
    """The 12-member run grid: four initial families, three amplitudes."""
    cutoff = Cutoff(*DEFAULT_CUTOFF_ARGS) if cutoff is None else cutoff
    return tuple(
        SimConfig(n_points=n_points, alpha=alpha, t_end=t_end,
                  equation=equation, cutoff=cutoff, dt=dt, init=family,
                  amplitude=amp, seed=seed, stride=stride)
        for family in ENSEMBLE_FAMILIES for amp in amplitudes
    )


# -- energy estimate --------------------------------------------------------

def _gauge_generator(u, alpha, cutoff):
    """The hermitian gauge generator for one state.

    The dispersive multiplier in the commutator equation already carries
    the factor i, so the right-hand side producing a hermitian generator
    is -(sigma + sigma*), without a further -i.
    """
    sigma = transport_symbol(u)
    rhs = (sigma + adjoint_star(sigma, 2)) * (-1.0)
    solution = solve_commutator(rhs, alpha, cutoff)
    return materialize(solution.p, cutoff).entries, sigma


def _cancellation_check(u, alpha, cutoff):
    """Hermiticity of the generator and skewness of the conjugated bracket.

    Hermiticity is asserted on the deep pairs, where the cutoff weighs
    both orderings of a pair at full strength; the transition ring mixes
    weights and is exact only in the continuum limit.  The bracket uses
    the operator adjoint, which is hermitian by construction, so its
    conjugated integral inherits skewness up to the transition defect.
    """
    grid = u.grid
    gauge, sigma = _gauge_generator(u, alpha, cutoff)
    psi = pair_mask(grid, cutoff)
    deep = (psi == 1.0) & (psi.T == 1.0)
    hermitian_gap = float(np.max(np.abs((gauge - gauge.conj().T)[deep])))
    if hermitian_gap > HERMITIAN_TOL:
        raise InvariantBroken(
            f"gauge generator fails hermiticity on the deep pairs: "
            f"{hermitian_gap:.3e} > {HERMITIAN_TOL:g}"
        )
    half = materialize(sigma, cutoff).entries
    transported = half + half.conj().T
    bracket = gauge @ transported - transported @ gauge
    nodes, weights = gauss_nodes(0.0, 1.0, BRACKET_PANELS)
    conjugated = np.zeros_like(bracket)
    for r, w in zip(nodes, weights):
        conjugated += w * (
            expm(-1j * r * gauge) @ bracket @ expm(1j * r * gauge)
        )
    skew_gap = float(np.max(np.abs(conjugated + conjugated.conj().T)))
    if skew_gap > SKEW_TOL:
        raise InvariantBroken(
            f"conjugated bracket fails skewness: {skew_gap:.3e} > "
            f"{SKEW_TOL:g}"
        )
    return hermitian_gap, skew_gap


def _energy_cell(traj, s, alpha, cutoff):
    h = _sample_spacing(traj.times)
    states = traj.states
    v_fields = [multiplier_apply(u, bessel_pow(s)) for u in states]
    w_fields = [normal_form(u, v, s, alpha, cutoff)
                for u, v in zip(states, v_fields)]
    v_norms = np.array([l2_norm(v) for v in v_fields])
    w_norms = np.array([l2_norm(w) for w in w_fields])

    critical = max(0.0, 1.5 - alpha) + 0.01
    if max(sobolev_norm(u, critical) for u in states) <= SMALLNESS:
        for vn, wn in zip(v_norms, w_norms):
            if vn == 0.0:
                continue
            equivalence = max(wn / vn, vn / wn)
            if equivalence > EQUIVALENCE_BOUND:
                raise InvariantBroken(
                    f"transform equivalence constant {equivalence:.3f} "
                    f"exceeds {EQUIVALENCE_BOUND:g} on small data"
                )

    rates = _ddt(w_norms, h)
    ratios = []
    for u, vn, rate in zip(states, v_norms, rates):
        smoothed = multiplier_apply(dealias_product(u, u),
                                    abs_d_pow(1.0 - alpha))
        weight = linf_norm(multiplier_apply(smoothed, derivative())) * vn
        if weight == 0.0:
            ratios.append(0.0 if rate == 0.0 else np.inf)
        else:
            ratios.append(abs(rate) / weight)

    _cancellation_check(states[len(states) // 2], alpha, cutoff)
    return ratios


def energy_estimate_study(traj, s, alpha, c=None):
    """Ratio study of the transformed unknown's energy growth.

    Per sample: v = <D>^s u, w = normal_form(u, v), and the ratio
    |d/dt ||w||| / (||d_x |D|^(1-alpha) u^2||_inf ||v||) is collected;
    the report's envelope covers all samples of all trajectories.  Each
    trajectory also passes the structural certificates: the gauge
    generator is hermitian on the deep pairs, the conjugated bracket is
    skew-hermitian, and w stays norm-equivalent to v on small data.
    """
    if not 1.0 < alpha < 2.0:
        raise ValueError(f"energy study needs alpha in (1, 2), got {alpha:g}")
    cutoff = Cutoff(*DEFAULT_CUTOFF_ARGS) if c is None else c
    trajectories = _trajectories(traj)
    per_cell = _map_cells(
        lambda tr: _energy_cell(tr, float(s), float(alpha), cutoff),
        trajectories,
    )
    ratios = [r for cell in per_cell for r in cell]
    envelope, top = _envelope_fit(ratios)
    verdict = "bounded" if top <= envelope else "violated"
    return EstimateReport(envelope, top, len(trajectories), verdict)


# -- conjugation ------------------------------------------------------------

def _pair_entries(symbol):
    """Symbol coefficients placed at (xi+eta, xi) without cutoff weight.

    The conjugating gauge exponentiates exactly this placement, so the
    study's transform inherits its residual certificate only through it.
    """
    grid = symbol.grid
    freqs = grid.freqs.astype(np.int64)
    eta = freqs[:, None] - freqs[None, :]
    valid = (-(grid.n // 2) <= eta) & (eta <= (grid.n - 1) // 2)
    rows = np.mod(eta, grid.n)
    cols = np.broadcast_to(np.arange(grid.n)[None, :], rows.shape)
    return np.where(valid, symbol.coeffs[rows, cols], 0.0)


def residual_order(residual_matrix, cutoff=None):
    """Order fit of the residual operator on wave packets.

    With a cutoff given, the probe bands are pushed above its activation
    threshold for unit frequency shifts; a packet below that threshold
    only sees the probe's noise floor and poisons the slope.
    """
    if cutoff is None:
        return order_probe(residual_matrix)
    n = residual_matrix.grid.n
    low = int(math.ceil(cutoff.big_b + cutoff.little_b)) + 6
    high = min(2 * low, n // 2 - 16)
    if high <= low:
        return order_probe(residual_matrix)
    return order_probe(residual_matrix, centers=[low, high])


def _conjugation_cell(traj, alpha, cutoff, s_probes, elliptic_c):
    h = _sample_spacing(traj.times)
    states = traj.states
    grid = states[0].grid
    solutions = solve_conjugating(states, h, alpha, cutoff)

    transforms = np.stack([
        expm(1j * _pair_entries(sol.p)) for sol in solutions
    ])
    u_stack = np.stack([u.spectral for u in states])
    w_stack = np.einsum("tij,tj->ti", transforms, u_stack)
    profile = dispersion_profile(grid, alpha)
    r_stack = _ddt(w_stack, h) + w_stack * (1j * profile)[None, :]

    w_fields = [Field(grid, w, is_real=False, _validate=False)
                for w in w_stack]
    r_fields = [Field(grid, r, is_real=False, _validate=False)
                for r in r_stack]

    ratios = []
    for u, w_field, r_field in zip(states, w_fields, r_fields):
        mean_mass = math.sqrt(2.0 * math.pi) * abs(u.coefficient(0))
        for s in s_probes:
            w_size = sobolev_norm(w_field, s)
            r_size = sobolev_norm(r_field, s)
            if w_size == 0.0:
                if r_size > 0.0:
                    raise InvariantBroken("residual without a transform")
                continue
            ratios.append(r_size / w_size)
            recovery = sobolev_norm(u, s) / (w_size + mean_mass)
            if recovery > elliptic_c:
                raise InvariantBroken(
                    f"ellipticity constant {recovery:.3f} exceeds "
                    f"{elliptic_c:g} at s = {s:g}"
                )

    # the order is an operator property; probe the defining equation's
    # residual as a matrix instead of trusting the state's thin spectrum
    mid = len(states) // 2
    transport = materialize(transport_symbol(states[mid]) * 1j, cutoff)
    ddt_transforms = _ddt(transforms, h)
    den = 1j * (profile[None, :] - profile[:, None])
    residual_entries = (
        ddt_transforms[mid] - transforms[mid] * den
        - transforms[mid] @ transport.entries
    )
    if not np.any(np.abs(residual_entries) > 0.0):
        return ratios, None
    estimate = residual_order(
        OperatorMatrix(grid, residual_entries, "conjugation residual"), cutoff
    )
    return ratios, estimate


def conjugation_study(traj, alpha, c=None, s_probes=(0.0, 1.0, 2.0),
                      elliptic_c=ELLIPTIC_C):
    """Residual study of the conjugating gauge along trajectories.

    Builds the gauge, forms w(t), and differences it in time against the
    dispersive flow: what remains should act like an operator of order
    at most `ORDER_BOUND` on w, with Sobolev ratios ||r||_s / ||w||_s
    under a uniform envelope across `s_probes`, and the transform must
    stay invertible (u recoverable from w and its mean).  A failed order
    fit voids the envelope: no constant is certified then.
    """
    if not 2.0 < alpha < 3.0:
        raise ValueError(
            f"conjugation study needs alpha in (2, 3), got {alpha:g}"
        )
    cutoff = Cutoff(*DEFAULT_CUTOFF_ARGS) if c is None else c
    trajectories = _trajectories(traj)
    per_cell = _map_cells(
        lambda tr: _conjugation_cell(tr, float(alpha), cutoff,
                                     tuple(s_probes), float(elliptic_c)),
        trajectories,
    )
    ratios = [r for cell, _ in per_cell for r in cell]
    orders = [est.slope for _, est in per_cell if est is not None]
    worst_order = max(orders) if orders else 0.0
    envelope, top = _envelope_fit(ratios)
    if worst_order > ORDER_BOUND:
        return EstimateReport(0.0, max(top, np.finfo(float).tiny),
                              len(trajectories), "violated")
    verdict = "bounded" if top <= envelope else "violated"
    return EstimateReport(envelope, top, len(trajectories), verdict)


# -- wave-breaking scans ----------------------------------------------------

def _growth_classification(traj, initial_lip, initial_sup):
    """Blow-up class from recorded growth plus the detector's verdict.

    The detector sees every step while the record is stride-censored, so
    a tripped run credits the growth its trigger guarantees: the sup
    trigger fires at 1e6x, the gradient trigger at an absolute 1e8.  A
    non-finite state is counted as amplitude divergence, since overflow
    needs astronomically large values.
    """
    lips = np.array([rec[0] for rec in traj.diagnostics])
    sups = np.array([rec[1] for rec in traj.diagnostics])
    lip_growth = float(np.max(lips) / initial_lip)
    sup_growth = float(np.max(sups) / initial_sup)
    if traj.blowup == "lipschitz":
        lip_growth = max(lip_growth, 1e8 / initial_lip)
    elif traj.blowup in ("sup_norm", "nan"):
        sup_growth = max(sup_growth, 1e6)
    if lip_growth >= GROWTH_FACTOR and sup_growth < QUIET_FACTOR:
        label = "lipschitz"
    elif sup_growth >= GROWTH_FACTOR:
        label = "sup_norm"
    elif lip_growth >= GROWTH_FACTOR:
        # gradient blew a thousandfold while the amplitude only drifted
        label = "lipschitz"
    else:
        label = "none"
    return label, lip_growth, sup_growth


def _scan_run(family, alpha, amplitude, n_points, t_end, seed, dt, cutoff):
    base = dict(n_points=n_points, alpha=alpha, t_end=t_end,
                equation="full", init=family, amplitude=amplitude,
                seed=seed)
    if cutoff is not None:
        base["cutoff"] = cutoff
    if dt is not None:
        step_dt = dt
    else:
        seed_state = initial_field(Grid(n_points), family, amplitude, seed)
        step_dt = default_dt(SimConfig(**base), seed_state)
    steps = max(1, math.ceil(t_end / step_dt))
    stride = max(1, steps // 256)
    cfg = SimConfig(**base, dt=step_dt, stride=stride)
    gradient = derivative()
    traj = run(cfg, diagnose=lambda u: (
        linf_norm(multiplier_apply(u, gradient)), linf_norm(u)
    ))
    initial_lip, initial_sup = traj.diagnostics[0]
    return _growth_classification(traj, initial_lip, initial_sup)


def blowup_scan(family, alpha_list, amplitude_list, n_pair=(512, 1024),
                t_end=10.0, seed=0, dt=None, cutoff=None):
    """Classify (alpha, amplitude) cells of one family on two grids.

    Each cell runs the full equation on both grids of `n_pair` until
    t_end or the solver's divergence detector trips, then classifies
    growth; the cell's outcome is the shared label, or `inconclusive`
    when the grids disagree.  Outcomes are recorded, never judged.
    """
    coarse_n, fine_n = n_pair

    def one_cell(cell):
        alpha, amplitude = cell
        coarse, _, _ = _scan_run(family, alpha, amplitude, coarse_n,
                                 t_end, seed, dt, cutoff)
        fine, lip_growth, sup_growth = _scan_run(
            family, alpha, amplitude, fine_n, t_end, seed, dt, cutoff
        )
        outcome = coarse if coarse == fine else "inconclusive"
        return ScanCell(family=family, alpha=float(alpha),
                        amplitude=float(amplitude), coarse=coarse,
                        fine=fine, outcome=outcome,
                        lip_growth=lip_growth, sup_growth=sup_growth)

    cells = [(alpha, amplitude) for alpha in alpha_list
             for amplitude in amplitude_list]
    return _map_cells(one_cell, cells)


def monotonicity_violations(cells):
    """Blow-up at some amplitude but not at a larger one, per (family, alpha).

    Inconclusive cells separate nothing; violations are reported for the
    caller to display, not raised.
    """
    blowing = ("lipschitz", "sup_norm")
    by_group = {}
    for cell in cells:
        by_group.setdefault((cell.family, cell.alpha), []).append(cell)
    violations = []
    for group in by_group.values():
        group.sort(key=lambda cell: cell.amplitude)
        for i, low in enumerate(group):
            if low.outcome not in blowing:
                continue
            for high in group[i + 1:]:
                if high.outcome == "none":
                    violations.append((low.family, low.alpha,
                                       low.amplitude, high.amplitude))
    return violations


def scan_csv(cells):
    """CSV text of a scan, one row per cell."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["family", "alpha", "amplitude", "coarse", "fine",
                     "outcome", "lip_growth", "sup_growth"])
    for cell in cells:
        writer.writerow([
            cell.family, repr(cell.alpha), repr(cell.amplitude),
            cell.coarse, cell.fine, cell.outcome,
            repr(cell.lip_growth), repr(cell.sup_growth),
        ])
    return buffer.getvalue()
