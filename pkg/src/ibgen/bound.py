"""Numerical evaluation of the information-theoretic generalization bound.

Everything here runs on desk-scale problems (d_x <= 3, d_u <= 4, at most 512
partition atoms).  Suprema over inputs are replaced by maxima over finite
probe sets (cell corners, random interior points and data points), so the
reported epsilon, Delta and g values are lower estimates of the true suprema.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from . import kernels
from .data import Dataset, SyntheticSource
from .errors import DeskScaleError, DomainError, IbgenError
from .nn import Rng

MAX_DX = 3
MAX_DU = 4
MAX_ATOMS = 512
INV_E = math.exp(-1.0)

BOUND_CSV_HEADER = [
    "K", "beta", "n", "delta", "epsilon_hat", "epsilon_se", "r", "delta_hat", "g_hat",
    "mi_discrete", "mi_discrete_se", "mi_klsum", "t2", "t2_se",
    "A_delta", "B_delta", "C_delta", "D_delta",
    "eps_term", "mi_term", "phi_term", "const_term", "t_term", "higher_order", "total", "total_klsum",
]


# ---------------------------------------------------------------------------
# partitions and discretized sources
# ---------------------------------------------------------------------------


@dataclass
class Partition:
    """Equivolume axis-aligned grid with ``per_axis`` cells per axis, shared by every class."""

    lo: np.ndarray
    hi: np.ndarray
    per_axis: int

    @property
    def d_x(self):
        return self.lo.shape[0]

    @property
    def K(self):
        return self.per_axis**self.d_x

    def _multi_index(self):
        grids = np.meshgrid(*[np.arange(self.per_axis)] * self.d_x, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def cell_bounds(self):
        """``(lo, hi)`` arrays of shape (K, d_x), cells in row-major order."""
        width = (self.hi - self.lo) / self.per_axis
        idx = self._multi_index()
        lo = self.lo + idx * width
        return lo, lo + width

    @property
    def centroids(self):
        lo, hi = self.cell_bounds()
        return 0.5 * (lo + hi)

    def assign(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        t = (X - self.lo) / (self.hi - self.lo) * self.per_axis
        idx = np.clip(np.floor(t).astype(np.int64), 0, self.per_axis - 1)
        flat = np.zeros(X.shape[0], dtype=np.int64)
        for j in range(self.d_x):
            flat = flat * self.per_axis + idx[:, j]
        return flat

    def corners(self, k: int) -> np.ndarray:
        lo, hi = self.cell_bounds()
        bits = np.array(np.meshgrid(*[[0, 1]] * self.d_x, indexing="ij")).reshape(self.d_x, -1).T
        return np.where(bits == 1, hi[k], lo[k])


def build_partition(data, per_axis: int, d_x: int | None = None, box=None) -> Partition:
    """Grid over ``box`` (or the data bounding box / the source box)."""
    if per_axis < 1:
        raise DomainError("need at least one cell per axis")
    if box is not None:
        lo, hi = (np.asarray(b, dtype=np.float64) for b in box)
    elif isinstance(data, SyntheticSource):
        lo, hi = data.lo.copy(), data.hi.copy()
    else:
        X = data.X if isinstance(data, Dataset) else np.atleast_2d(np.asarray(data, dtype=np.float64))
        lo, hi = X.min(axis=0), X.max(axis=0)
    if d_x is not None and lo.shape[0] != d_x:
        raise DomainError(f"data has d_x={lo.shape[0]}, expected {d_x}")
    if lo.shape[0] > MAX_DX:
        raise DeskScaleError(f"partitions are limited to d_x <= {MAX_DX}")
    if np.any(hi <= lo):
        raise DomainError("empty bounding box")
    return Partition(lo, hi, int(per_axis))


@dataclass
class DiscretizedSource:
    """Atoms (cell centroids) and joint masses P^D(x^(k), y), shape (K, |Y|)."""

    atoms: np.ndarray
    masses: np.ndarray
    n: int = 0
    exact: bool = False

    @property
    def p_x(self):
        return self.masses.sum(axis=1)

    @property
    def p_y(self):
        return self.masses.sum(axis=0)

    @property
    def n_classes(self):
        return self.masses.shape[1]

    @property
    def y_min_mass(self):
        return float(self.p_y.min())


def discretize_source(data, partition: Partition) -> DiscretizedSource:
    """Empirical cell frequencies per class for a Dataset; exact cell integrals for a SyntheticSource."""
    if isinstance(data, SyntheticSource):
        lo, hi = partition.cell_bounds()
        masses = data.cell_probs(lo, hi)
        return DiscretizedSource(partition.centroids, masses, 0, True)
    cells = partition.assign(data.X)
    masses = np.zeros((partition.K, data.n_classes))
    np.add.at(masses, (cells, data.y), 1.0)
    return DiscretizedSource(partition.centroids, masses / data.n, data.n, False)


def empirical_source(dataset: Dataset) -> DiscretizedSource:
    """Every data point is its own atom with mass 1/n (the plug-in for the true law)."""
    masses = np.zeros((dataset.n, dataset.n_classes))
    masses[np.arange(dataset.n), dataset.y] = 1.0 / dataset.n
    return DiscretizedSource(dataset.X.copy(), masses, dataset.n, False)


def reference_source(data, per_axis: int | None = None, max_atoms: int = 2048, seed: int = 0) -> DiscretizedSource:
    """Fine stand-in for the true input law used by the epsilon estimate.

    A SyntheticSource gets an exact fine grid; a Dataset is used point by
    point, subsampled to ``max_atoms``.
    """
    if isinstance(data, SyntheticSource):
        if per_axis is None:
            per_axis = max(2, int(round(max_atoms ** (1.0 / data.d_x))))
        return discretize_source(data, build_partition(data, per_axis))
    if data.n > max_atoms:
        idx = np.sort(Rng(seed).split("reference").permutation(data.n)[:max_atoms])
        data = data.take(idx)
    return empirical_source(data)


def second_moment_bound(encoder, X) -> float:
    """S = max over inputs and latent dimensions of E[U_j^2 | x]."""
    return float(np.max(encoder.second_moment(np.atleast_2d(np.asarray(X, dtype=np.float64)))))


def r_of_partition(src: DiscretizedSource, partition: Partition | None = None) -> float:
    """1 / min_k P(X in cell k); every cell needs positive mass."""
    p = src.p_x
    if np.any(p <= 0):
        raise DomainError(f"{int(np.sum(p <= 0))} empty cells; use a coarser partition")
    return float(1.0 / p.min())


# ---------------------------------------------------------------------------
# latent densities at atoms
# ---------------------------------------------------------------------------


def _check_encoder(encoder):
    if encoder.d_u > MAX_DU:
        raise DeskScaleError(f"bound estimators are limited to d_u <= {MAX_DU}")


def latent_logpdf(encoder, U, X) -> np.ndarray:
    """``out[m, a] = log q(U[m] | X[a])`` for product-form encoders."""
    U = np.atleast_2d(np.asarray(U, dtype=np.float64))
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if encoder.kind == "gaussian":
        mu, var = encoder.stats(X)
        return kernels.gauss_logpdf_matrix(U, mu, var)
    if encoder.kind == "lognormal":
        if np.any(U <= 0):
            raise DomainError("log-normal latent must be positive")
        f, alpha = encoder.stats(X)
        logu = np.log(U)
        return kernels.gauss_logpdf_matrix(logu, np.log(f), alpha**2) - logu.sum(axis=1)[:, None]
    if encoder.kind == "rbm":
        p = np.clip(encoder.hidden_probs(X), 1e-300, 1 - 1e-16)
        return U @ np.log(p).T + (1.0 - U) @ np.log1p(-p).T
    raise IbgenError(f"unsupported encoder kind {encoder.kind!r}")


def _log_masses(masses):
    with np.errstate(divide="ignore"):
        return np.log(masses)


def induced_decoder_log(encoder, src: DiscretizedSource, U) -> np.ndarray:
    logq = latent_logpdf(encoder, U, src.atoms)
    joint = kernels.class_logsumexp(logq, _log_masses(src.masses))
    top = joint.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(top)):
        raise IbgenError("induced decoder undefined: zero denominator at some latent point")
    return joint - (top + np.log(np.exp(joint - top).sum(axis=1, keepdims=True)))


def induced_decoder_discrete(encoder, src: DiscretizedSource, u) -> np.ndarray:
    """Q^D(y|u) = sum_k P^D(x_k, y) q(u|x_k) / sum_{k,y'} P^D(x_k, y') q(u|x_k); rows sum to 1."""
    U = np.asarray(u, dtype=np.float64)
    single = U.ndim == 1
    out = np.exp(induced_decoder_log(encoder, src, np.atleast_2d(U)))
    return out[0] if single else out


def _latent_samples(encoder, X, noise):
    """Reparameterized draws for rows of X with fixed noise (M, d_u) -> (n, M, d_u)."""
    U = encoder.decoder_input(X, np.broadcast_to(noise[:, None, :], (noise.shape[0], X.shape[0], noise.shape[1])))
    return np.transpose(U, (1, 0, 2))


# ---------------------------------------------------------------------------
# discretized mutual information
# ---------------------------------------------------------------------------


def discretized_mi(encoder, src: DiscretizedSource, mc_samples: int, rng: Rng):
    """Stratified MC estimate of I(X^D; U) for X^D ~ P^D_X; returns ``(value, std_error)``.

    For each atom a: mean over u ~ q(.|x_a) of log q(u|x_a) - log sum_b P(b) q(u|x_b);
    the marginal is evaluated exactly over the atoms.
    """
    p = src.p_x
    keep = np.flatnonzero(p > 0)
    atoms, w = src.atoms[keep], p[keep]
    logw = np.log(w)[:, None]
    total = 0.0
    var = 0.0
    for i, a in enumerate(keep):
        sample = encoder.encode_sample(src.atoms[a], rng.split(("mi", int(a))), mc_samples)
        U = sample.u.reshape(mc_samples, -1)
        logq = latent_logpdf(encoder, U, atoms)
        log_marg = kernels.class_logsumexp(logq, logw)[:, 0]
        terms = logq[:, i] - log_marg
        total += w[i] * terms.mean()
        if mc_samples > 1:
            var += w[i] ** 2 * terms.var(ddof=1) / mc_samples
    return float(total), float(math.sqrt(var))


# ---------------------------------------------------------------------------
# probes
# ---------------------------------------------------------------------------


def cell_probes(partition: Partition, rng: Rng, n_random: int = 64, data=None, max_data: int = 512):
    """Probe points per cell: corners, ``n_random`` interior points and (optionally) data points.

    Returns a list of arrays, one per cell.
    """
    lo, hi = partition.cell_bounds()
    data_cells = None
    if data is not None:
        X = data.X if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
        if X.shape[0] > max_data:
            X = X[np.sort(rng.split("data-probes").permutation(X.shape[0])[:max_data])]
        data_cells = (X, partition.assign(X))
    interior = rng.split("interior")
    probes = []
    for k in range(partition.K):
        parts = [partition.corners(k)]
        if n_random:
            parts.append(lo[k] + (hi[k] - lo[k]) * interior.uniform((n_random, partition.d_x)))
        if data_cells is not None:
            parts.append(data_cells[0][data_cells[1] == k])
        probes.append(np.concatenate(parts, axis=0))
    return probes


# ---------------------------------------------------------------------------
# epsilon(K)
# ---------------------------------------------------------------------------


@dataclass
class SupEstimate:
    value: float
    mc_error: float
    n_probes: int
    argmax: tuple = ()


def _modified_losses(encoder, src, X, noise):
    """-log Q_src(y | u) averaged over the fixed noise, for each row of X and every y: (n, |Y|) plus per-draw array."""
    U = _latent_samples(encoder, X, noise)
    n, m, d = U.shape
    logQ = induced_decoder_log(encoder, src, U.reshape(n * m, d)).reshape(n, m, -1)
    return -logQ


def epsilon_hat(encoder, src: DiscretizedSource, partition: Partition, reference: DiscretizedSource, probes, mc_samples: int, rng: Rng) -> SupEstimate:
    """max over probes x in cell k and labels y of |l~(x, y) - l^D(x_k, y)|.

    ``l~`` uses the induced decoder of ``reference`` (the stand-in for the true
    law) and ``l^D`` the induced decoder of ``src``.  Both losses share the
    same latent noise (common random numbers).
    """
    _check_encoder(encoder)
    noise = rng.split("eps-noise").gaussian((mc_samples, encoder.d_u))
    centre = _modified_losses(encoder, src, partition.centroids, noise)  # (K, M, Y)
    best = SupEstimate(0.0, 0.0, 0)
    count = 0
    for k, P in enumerate(probes):
        if P.shape[0] == 0:
            continue
        count += P.shape[0]
        probe = _modified_losses(encoder, reference, P, noise)  # (p, M, Y)
        diff = probe - centre[k][None]
        mean = diff.mean(axis=1)
        gap = np.abs(mean)
        i, y = np.unravel_index(np.argmax(gap), gap.shape)
        if gap[i, y] >= best.value:
            se = float(diff[i, :, y].std(ddof=1) / math.sqrt(mc_samples)) if mc_samples > 1 else float("nan")
            best = SupEstimate(float(gap[i, y]), se, 0, (k, int(i), int(y)))
    best.n_probes = count
    return best


# ---------------------------------------------------------------------------
# Delta(K)
# ---------------------------------------------------------------------------


def latent_grid(encoder, X, points_per_dim: int | None = None, width: float = 4.0) -> np.ndarray:
    """Regular grid over the region where q(.|x) has mass for the rows of X."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    d = encoder.d_u
    if points_per_dim is None:
        points_per_dim = {1: 201, 2: 41}.get(d, 13)
    if encoder.kind == "gaussian":
        mu, var = encoder.stats(X)
        sd = np.sqrt(var)
        lo, hi = (mu - width * sd).min(axis=0), (mu + width * sd).max(axis=0)
    elif encoder.kind == "lognormal":
        f, a = encoder.stats(X)
        lo, hi = np.exp((np.log(f) - width * a).min(axis=0)), np.exp((np.log(f) + width * a).max(axis=0))
    else:
        raise IbgenError("latent grid needs a continuous encoder")
    axes = [np.linspace(lo[j], hi[j], points_per_dim) for j in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def delta_hat(encoder, partition: Partition, probes, u_grid) -> SupEstimate:
    """max over cells k, probes x in cell k, grid points u of |q(u|x) - q(u|x_k)|."""
    _check_encoder(encoder)
    cents = partition.centroids
    best = 0.0
    where = ()
    count = 0
    for k, P in enumerate(probes):
        if P.shape[0] == 0:
            continue
        count += P.shape[0]
        if encoder.kind == "gaussian":
            mu_p, var_p = encoder.stats(P)
            mu_c, var_c = encoder.stats(cents[k])
            gap = kernels.density_gap_max(u_grid, mu_p, var_p, mu_c, var_c)
        else:
            dens = np.exp(latent_logpdf(encoder, u_grid, P))
            ref = np.exp(latent_logpdf(encoder, u_grid, cents[k][None]))
            gap = float(np.max(np.abs(dens - ref)))
        if gap > best:
            best, where = gap, (k,)
    return SupEstimate(float(best), 0.0, count, where)


# ---------------------------------------------------------------------------
# g(beta)
# ---------------------------------------------------------------------------


def _log_g_integral(m1, v1, m2, v2, beta, kind):
    """log of  int q1(u) q2(u)^(-gamma) du  per dimension, gamma = 2 beta / (1 + beta).

    Gaussian: q = N(m, v).  Log-normal: q = logN(m, v); after t = log u the
    integrand picks up exp(gamma * t).  Returns -inf-safe values and a mask of
    divergent entries (gamma v1 / v2 >= 1).
    """
    gamma = 2.0 * beta / (1.0 + beta)
    a = gamma / (2.0 * v2)
    denom = 1.0 - 2.0 * a * v1
    bad = denom <= 0
    denom = np.where(bad, 1.0, denom)
    dmean = m1 - m2
    b = gamma if kind == "lognormal" else 0.0
    val = 0.5 * gamma * np.log(2.0 * np.pi * v2) - 0.5 * np.log(denom) + (a * dmean**2 + b * dmean + 0.5 * b * b * v1) / denom
    if kind == "lognormal":
        val = val + gamma * m2
    return val, bad


def g_integral_quad(m1, v1, m2, v2, beta, kind="gaussian"):
    """One-dimensional quadrature of the same integral (oracle and fallback)."""
    gamma = 2.0 * beta / (1.0 + beta)

    def log_normal(t, m, v):
        return -0.5 * (math.log(2 * math.pi * v) + (t - m) ** 2 / v)

    if gamma * v1 / v2 >= 1.0:
        raise DomainError("divergent integral")

    def integrand(t):
        extra = gamma * t if kind == "lognormal" else 0.0
        return math.exp(log_normal(t, m1, v1) - gamma * log_normal(t, m2, v2) + extra)

    # the integrand is a (possibly wider) Gaussian in t; integrate over its bulk
    prec = 1.0 / v1 - gamma / v2
    centre = (m1 / v1 - gamma * m2 / v2 + (gamma if kind == "lognormal" else 0.0)) / prec
    sd = math.sqrt(1.0 / prec)
    val, _ = integrate.quad(integrand, centre - 40 * sd, centre + 40 * sd, epsabs=0.0, epsrel=1e-12, limit=400)
    return val


def g_hat(encoder, beta: float, probes, method: str = "closed") -> SupEstimate:
    """max over probe pairs (x, z) of sqrt(int q(u|x) q(u|z)^(-2 beta/(1+beta)) du).

    The integral factorizes over latent dimensions.
    """
    if not 0.0 < beta < 1.0:
        raise DomainError("beta must lie in (0, 1)")
    P = np.atleast_2d(np.asarray(probes, dtype=np.float64))
    if encoder.kind == "gaussian":
        m, v = encoder.stats(P)
    elif encoder.kind == "lognormal":
        f, a = encoder.stats(P)
        m, v = np.log(f), a**2
    else:
        raise IbgenError("g(beta) needs a continuous encoder")
    if method == "closed":
        val, bad = _log_g_integral(m[:, None, :], v[:, None, :], m[None, :, :], v[None, :, :], beta, encoder.kind)
        if np.any(bad):
            i, j, _ = np.argwhere(bad)[0]
            raise DomainError(f"divergent integral for probe pair (x={P[i].tolist()}, z={P[j].tolist()}) at beta={beta}")
        logg = 0.5 * val.sum(axis=2)
    else:
        n = P.shape[0]
        logg = np.empty((n, n))
        for i in range(n):
            for j in range(n):
                tot = 0.0
                for d in range(m.shape[1]):
                    try:
                        tot += math.log(g_integral_quad(m[i, d], v[i, d], m[j, d], v[j, d], beta, encoder.kind))
                    except DomainError as exc:
                        raise DomainError(f"divergent integral for probe pair (x={P[i].tolist()}, z={P[j].tolist()}) at beta={beta}") from exc
                logg[i, j] = 0.5 * tot
    i, j = np.unravel_index(np.argmax(logg), logg.shape)
    return SupEstimate(float(np.exp(logg[i, j])), 0.0, P.shape[0] ** 2, (int(i), int(j)))


# ---------------------------------------------------------------------------
# decoder efficiency term
# ---------------------------------------------------------------------------


def t_term(encoder, dec, src: DiscretizedSource, mc_samples: int, rng: Rng):
    """sum_{k,y} P^D(x_k, y) T(x_k, y)^2 with T = E_q[log Q^D(y|U) - log Q_dec(y|U) | x_k].

    Returns ``(estimate, std_error)`` (delta method).
    """
    total = 0.0
    var = 0.0
    for k in np.flatnonzero(src.p_x > 0):
        sample = encoder.encode_sample(src.atoms[k], rng.split(("t", int(k))), mc_samples)
        U = sample.u.reshape(mc_samples, -1)
        diff = induced_decoder_log(encoder, src, U) - dec.log_probs(U)  # (M, Y)
        T = diff.mean(axis=0)
        w = src.masses[k]
        total += float(np.sum(w * T**2))
        if mc_samples > 1:
            vt = diff.var(axis=0, ddof=1) / mc_samples
            var += float(np.sum((w * 2.0 * T) ** 2 * vt))
    return total, math.sqrt(var)


# ---------------------------------------------------------------------------
# scalar pieces
# ---------------------------------------------------------------------------


def phi(x):
    """0 for x <= 0, -x log x on (0, 1/e), 1/e for x >= 1/e."""
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        mid = -x * np.log(np.where(x > 0, x, 1.0))
    out = np.where(x <= 0, 0.0, np.where(x >= INV_E, INV_E, mid))
    return out if out.ndim else float(out)


def phi_lemma_rhs(a, beta, n):
    """(a/2) ln n / sqrt n + ((1+beta)/beta) e^-1 a^(1/(1+beta)) / sqrt n."""
    a, beta, n = (np.asarray(v, dtype=np.float64) for v in (a, beta, n))
    out = 0.5 * a * np.log(n) / np.sqrt(n) + (1.0 + beta) / beta * INV_E * a ** (1.0 / (1.0 + beta)) / np.sqrt(n)
    return out if out.ndim else float(out)


@dataclass
class DeltaConstants:
    A: float
    B: float
    C: float
    D: float


def delta_constants(n_classes: int, delta: float, S: float, p_y_min: float, d_u: int) -> DeltaConstants:
    if not 0.0 < delta < 1.0:
        raise DomainError("delta must lie in (0, 1)")
    if S <= 0:
        raise DomainError("second-moment bound S must be positive")
    if not 0.0 < p_y_min <= 1.0:
        raise DomainError("P_Y(y_min) must lie in (0, 1]")
    if n_classes < 1 or d_u < 1:
        raise DomainError("need at least one class and one latent dimension")
    L = math.log((n_classes + 4) / delta)
    B = 1.0 + math.sqrt(L)
    A = math.sqrt(2.0) * B
    C = (0.5 * d_u * math.log(4.0 * math.pi * math.e * S) - math.log(p_y_min)) * math.sqrt(n_classes) * B
    D = math.sqrt((n_classes + 4) / delta)
    return DeltaConstants(A, B, C, D)


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


@dataclass
class BoundConfig:
    delta: float = 0.05
    betas: tuple = (0.1, 0.25, 0.5, 0.75, 0.9)
    per_axis: tuple = (1, 2, 4, 8)
    n: int = 2000
    S: float = 1.0
    mc_samples: int = 64
    n_random_probes: int = 64

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise DomainError("delta must lie in (0, 1)")
        if any(not 0.0 < b < 1.0 for b in self.betas):
            raise DomainError("beta values must lie in (0, 1)")
        if self.n < 2:
            raise DomainError("need n >= 2")


@dataclass
class KComponents:
    """Estimates that depend on the partition (one per K)."""

    K: int
    epsilon: float
    r: float
    mi_discrete: float
    t2: float
    g: dict  # beta -> g_hat
    epsilon_se: float = 0.0
    delta_hat: float = float("nan")
    mi_discrete_se: float = 0.0
    t2_se: float = 0.0
    n_probes: int = 0


@dataclass
class BoundReport:
    rows: list
    best: dict
    constants: DeltaConstants
    config: BoundConfig
    n_classes: int
    p_y_min: float
    d_u: int
    mi_klsum: float
    meta: dict = field(default_factory=dict)

    @property
    def value(self):
        return self.best["total"]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(BOUND_CSV_HEADER)
            for row in self.rows:
                w.writerow([_fmt(row[k]) for k in BOUND_CSV_HEADER])

    def write_text(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    def to_text(self) -> str:
        c = self.constants
        lines = [
            "bound_value: " + _fmt(self.best["total"]),
            "bound_value_klsum: " + _fmt(min(r["total_klsum"] for r in self.rows)),
            f"argmin_K: {self.best['K']}",
            "argmin_beta: " + _fmt(self.best["beta"]),
            "delta: " + _fmt(self.config.delta),
            f"n: {self.config.n}",
            f"n_classes: {self.n_classes}",
            f"d_u: {self.d_u}",
            "S: " + _fmt(self.config.S),
            "p_y_min: " + _fmt(self.p_y_min),
            "mi_klsum: " + _fmt(self.mi_klsum),
            "A_delta: " + _fmt(c.A),
            "B_delta: " + _fmt(c.B),
            "C_delta: " + _fmt(c.C),
            "D_delta: " + _fmt(c.D),
            "higher_order_note: (K*|Y|*ln(n+1) + ln((|Y|+4)/delta))/n from the KL concentration step",
            "sup_note: epsilon, Delta and g are maxima over finite probe sets (lower estimates of the suprema)",
        ]
        for k, v in sorted(self.meta.items()):
            lines.append(f"{k}: {v}")
        by_k = {}
        for row in self.rows:
            by_k.setdefault(row["K"], []).append(row)
        for K in sorted(by_k):
            first = by_k[K][0]
            lines.append(f"K={K}:")
            for key in ("epsilon_hat", "epsilon_se", "r", "delta_hat", "mi_discrete", "mi_discrete_se", "t2", "t2_se", "higher_order"):
                lines.append(f"  {key}: {_fmt(first[key])}")
            for row in by_k[K]:
                lines.append(f"  beta={_fmt(row['beta'])}:")
                for key in ("g_hat", "eps_term", "mi_term", "phi_term", "const_term", "t_term", "total", "total_klsum"):
                    lines.append(f"    {key}: {_fmt(row[key])}")
        return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def bound_terms(comp: KComponents, beta: float, g: float, mi: float, n: int, consts: DeltaConstants, n_classes: int, delta: float):
    """The individual summands for one (K, beta)."""
    sqrt_n = math.sqrt(n)
    sqrt_mi = math.sqrt(max(mi, 0.0))
    eps_term = 2.0 * comp.epsilon
    mi_term = comp.r * consts.A * sqrt_mi * math.log(n) / sqrt_n
    phi_term = math.inf if not math.isfinite(g) else 2.0 * INV_E * g * (1.0 + beta) / beta * (math.sqrt(2.0) * comp.r * consts.B * sqrt_mi) ** (1.0 / (1.0 + beta)) / sqrt_n
    const_term = consts.C / sqrt_n
    t_part = consts.D * math.sqrt(max(comp.t2, 0.0)) / sqrt_n
    higher = (comp.K * n_classes * math.log(n + 1) + math.log((n_classes + 4) / delta)) / n
    return dict(eps_term=eps_term, mi_term=mi_term, phi_term=phi_term, const_term=const_term, t_term=t_part, higher_order=higher)


def assemble_bound(components: list[KComponents], config: BoundConfig, n_classes: int, p_y_min: float, d_u: int, mi_klsum: float = float("nan"), meta=None) -> BoundReport:
    """Evaluate the bound on the (K, beta) grid and keep the grid minimum."""
    if not components:
        raise IbgenError("no partition components to assemble")
    consts = delta_constants(n_classes, config.delta, config.S, p_y_min, d_u)
    rows = []
    for comp in components:
        for beta in config.betas:
            if beta not in comp.g:
                raise IbgenError(f"missing g estimate for beta={beta} at K={comp.K}")
            g = comp.g[beta]
            terms = bound_terms(comp, beta, g, comp.mi_discrete, config.n, consts, n_classes, config.delta)
            total = sum(terms.values())
            alt = bound_terms(comp, beta, g, mi_klsum, config.n, consts, n_classes, config.delta) if np.isfinite(mi_klsum) else terms
            rows.append(
                dict(
                    K=comp.K, beta=beta, n=config.n, delta=config.delta,
                    epsilon_hat=comp.epsilon, epsilon_se=comp.epsilon_se, r=comp.r, delta_hat=comp.delta_hat, g_hat=g,
                    mi_discrete=comp.mi_discrete, mi_discrete_se=comp.mi_discrete_se, mi_klsum=mi_klsum,
                    t2=comp.t2, t2_se=comp.t2_se,
                    A_delta=consts.A, B_delta=consts.B, C_delta=consts.C, D_delta=consts.D,
                    total=total, total_klsum=sum(alt.values()), **terms,
                )
            )
    best = min(rows, key=lambda r: (r["total"], r["K"], r["beta"]))
    return BoundReport(rows, best, consts, config, n_classes, p_y_min, d_u, mi_klsum, dict(meta or {}))


def evaluate_components(encoder, dec, data, config: BoundConfig, rng: Rng, source: SyntheticSource | None = None, reference: DiscretizedSource | None = None, data_probes=None):
    """Run every estimator for each partition in ``config.per_axis``.

    Masses come from ``source`` (exact) when given, otherwise from ``data``.
    Partitions with empty cells are skipped and listed in the second return value.
    """
    _check_encoder(encoder)
    if data.d_x > MAX_DX:
        raise DeskScaleError(f"bound evaluation is limited to d_x <= {MAX_DX}")
    if reference is None:
        reference = reference_source(source if source is not None else data)
    comps, skipped = [], []
    for m in config.per_axis:
        part = build_partition(source if source is not None else data, m)
        if part.K > MAX_ATOMS:
            raise DeskScaleError(f"K={part.K} exceeds the {MAX_ATOMS}-atom limit")
        src = discretize_source(source if source is not None else data, part)
        try:
            r = r_of_partition(src, part)
        except DomainError:
            skipped.append(part.K)
            continue
        krng = rng.split(("K", part.K))
        probes = cell_probes(part, krng.split("probes"), config.n_random_probes, data=data_probes)
        eps = epsilon_hat(encoder, src, part, reference, probes, config.mc_samples, krng.split("eps"))
        grid = latent_grid(encoder, np.concatenate(probes))
        dlt = delta_hat(encoder, part, probes, grid)
        mi, mi_se = discretized_mi(encoder, src, config.mc_samples, krng.split("mi"))
        t2, t2_se = t_term(encoder, dec, src, config.mc_samples, krng.split("t"))
        gprobes = _g_probe_set(part, probes)
        g = {}
        for b in config.betas:
            try:
                g[b] = g_hat(encoder, b, gprobes).value
            except DomainError:
                # the integral diverges for this beta; the bound is infinite there
                g[b] = math.inf
        comps.append(KComponents(part.K, eps.value, r, mi, t2, g, eps.mc_error, dlt.value, mi_se, t2_se, eps.n_probes))
    return comps, skipped


def _g_probe_set(part: Partition, probes, cap: int = 400):
    pts = np.concatenate([part.corners(k) for k in range(part.K)] + [part.centroids])
    pts = np.unique(pts, axis=0)
    if pts.shape[0] > cap:
        pts = pts[np.linspace(0, pts.shape[0] - 1, cap).astype(int)]
    return pts
