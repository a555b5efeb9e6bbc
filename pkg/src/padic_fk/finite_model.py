"""Exact matrix realization of Delta_b + V on G = p^{-N} Z_p / p^{M} Z_p.

Index j in [0, S), S = p^{N+M}, stands for the coset of x = p^{-N} j, so
|x| = p^{N - v_p(j)}.  Dual index k stands for xi = p^{-M} k modulo p^N Z_p
with |xi| = p^{M - v_p(k)}, and chi(x xi) = exp(2 pi i jk / S): the character
table is the S-point DFT matrix.  Functions on G are the locally constant
functions supported in |x| <= p^N at resolution p^{-M}; the cell measure is
p^{-M}, and kernel tables are matrix entries divided by it.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import TYPE_CHECKING

import numpy as np

from .padic import PadicNumber
from .process import ZERO_RADIUS, PathSample, TimeGrid, PadicArrayCodec
from .rng import RngSpec, run_chunks

if TYPE_CHECKING:
    from .feynman_kac import Potential

SIZE_CAP = 1 << 16


class ModelSizeError(ValueError):
    pass


def _valuations(j: np.ndarray, p: int, cap: int) -> np.ndarray:
    v = np.zeros(j.shape, dtype=np.int64)
    j = j.copy()
    zero = j == 0
    j[zero] = 1
    while True:
        div = j % p == 0
        if not div.any():
            break
        v += div
        j = np.where(div, j // p, j)
    v[zero] = cap
    return v


@dataclass(frozen=True, eq=False)
class FiniteGroupModel:
    p: int
    N: int
    M: int
    size: int
    radius_exponents: np.ndarray = field(repr=False)
    dual_norm_exponents: np.ndarray = field(repr=False)

    @property
    def cell_measure(self) -> float:
        return float(self.p) ** (-self.M)

    @property
    def norms(self) -> np.ndarray:
        """|x| per index (0 for the zero coset)."""
        return np.where(self.radius_exponents == ZERO_RADIUS, 0.0,
                        float(self.p) ** self.radius_exponents.astype(float))

    @property
    def dual_norms(self) -> np.ndarray:
        return np.where(self.dual_norm_exponents == ZERO_RADIUS, 0.0,
                        float(self.p) ** self.dual_norm_exponents.astype(float))

    def element(self, j: int) -> PadicNumber:
        j %= self.size
        if j == 0:
            return PadicNumber.zero(self.p)
        return PadicNumber.from_rational(Fraction(j) * Fraction(self.p) ** -self.N, self.p, self.N + self.M)

    def index_of(self, x) -> int:
        """Index of the coset containing x (x must satisfy |x| <= p^N)."""
        if not isinstance(x, PadicNumber):
            x = PadicNumber.from_rational(x, self.p, self.N + self.M + 1)
        if x.is_zero or x.valuation >= self.M:
            return 0
        if x.valuation < -self.N:
            raise ValueError(f"|x| = {x.norm()} lies outside the ball p^{self.N}")
        return (x.unit * self.p ** (x.valuation + self.N)) % self.size

    def pairing_phases(self) -> np.ndarray:
        """Exact phases jk/S mod 1 as integers jk mod S."""
        j = np.arange(self.size, dtype=np.int64)
        return np.outer(j, j) % self.size

    def pairing_matrix(self) -> np.ndarray:
        return np.exp(2j * np.pi * self.pairing_phases() / self.size)

    def difference(self, x: int, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y) - x) % self.size


def build_model(p: int, N: int, M: int, size_cap: int = SIZE_CAP) -> FiniteGroupModel:
    S = p ** (N + M)
    if N + M < 1:
        raise ValueError("need N + M >= 1")
    if S > size_cap:
        raise ModelSizeError(f"p^(N+M) = {S} exceeds the size cap {size_cap}")
    j = np.arange(S, dtype=np.int64)
    v = _valuations(j, p, N + M)
    rad = np.where(j == 0, ZERO_RADIUS, N - v)
    dual = np.where(j == 0, ZERO_RADIUS, M - v)
    return FiniteGroupModel(p, N, M, S, rad, dual)


# -- operators ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    matrix: np.ndarray
    role: str

    def is_symmetric(self, tol: float = 0.0) -> bool:
        return bool(np.max(np.abs(self.matrix - self.matrix.T)) <= tol)


def symbol(model: FiniteGroupModel, b: float) -> np.ndarray:
    """|xi|^b per dual index, 0 at the trivial character."""
    return model.dual_norms ** b


def _circulant(model: FiniteGroupModel, first: np.ndarray) -> np.ndarray:
    idx = (np.arange(model.size)[None, :] - np.arange(model.size)[:, None]) % model.size
    return first[idx]


def vladimirov_matrix(model: FiniteGroupModel, b: float) -> OperatorMatrix:
    if not b > 0:
        raise ValueError("b must be positive")
    c = np.real(np.fft.ifft(symbol(model, b)))
    m = _circulant(model, c)
    return OperatorMatrix(0.5 * (m + m.T), "laplacian")


def potential_values(model: FiniteGroupModel, V: "Potential") -> np.ndarray:
    return V.evaluate(model.radius_exponents, model.p)


def potential_matrix(model: FiniteGroupModel, V: "Potential") -> OperatorMatrix:
    return OperatorMatrix(np.diag(potential_values(model, V)), "potential")


def hamiltonian_matrix(model: FiniteGroupModel, b: float, V: "Potential | None" = None) -> OperatorMatrix:
    H = vladimirov_matrix(model, b).matrix.copy()
    if V is not None:
        H[np.diag_indices(model.size)] += potential_values(model, V)
    return OperatorMatrix(H, "hamiltonian")


class Propagator:
    """e^{-tH} through one symmetric eigendecomposition, reused for every t."""

    def __init__(self, model: FiniteGroupModel, b: float, V: "Potential | None" = None):
        self.model, self.b, self.V = model, b, V
        H = hamiltonian_matrix(model, b, V).matrix
        try:
            self.eigenvalues, self.eigenvectors = np.linalg.eigh(H)
        except np.linalg.LinAlgError as exc:  # symmetric input: failure means a bug upstream
            raise RuntimeError(f"eigendecomposition failed for S={model.size}") from exc

    def matrix(self, t: float) -> np.ndarray:
        if not t > 0:
            raise ValueError("t must be positive")
        U = self.eigenvectors
        return (U * np.exp(-t * self.eigenvalues)) @ U.T

    def kernel(self, t: float) -> np.ndarray:
        return self.matrix(t) / self.model.cell_measure

    def kernel_row(self, t: float, i: int) -> np.ndarray:
        """K(x_i, .) without forming the full matrix."""
        if not t > 0:
            raise ValueError("t must be positive")
        U = self.eigenvectors
        return (U[i] * np.exp(-t * self.eigenvalues)) @ U.T / self.model.cell_measure

    def spectrum(self) -> np.ndarray:
        return self.eigenvalues.copy()


def propagator_kernel(model: FiniteGroupModel, b: float, V: "Potential | None", t: float) -> np.ndarray:
    """Kernel table K(x, y) of e^{-t(Delta_b + V)} (matrix entry / cell measure)."""
    return Propagator(model, b, V).kernel(t)


def spectrum_csv(eigenvalues: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "eigenvalue"])
    for i, lam in enumerate(np.sort(eigenvalues)):
        w.writerow([i, f"{lam:.17g}"])
    return buf.getvalue()


def kernel_csv(K: np.ndarray, rows: np.ndarray | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x_index", "y_index", "K"])
    rows = range(K.shape[0]) if rows is None else rows
    for i in rows:
        for j in range(K.shape[1]):
            w.writerow([int(i), j, f"{K[i, j]:.17g}"])
    return buf.getvalue()


# -- free kernel ----------------------------------------------------------------

def free_kernel(model: FiniteGroupModel, b: float, t: float) -> np.ndarray:
    """k_t(x) = K_free(0, x) for V = 0, via the FFT (length S)."""
    return np.real(np.fft.ifft(np.exp(-t * symbol(model, b)))) / model.cell_measure


def free_kernel_series(model: FiniteGroupModel, b: float, t: float) -> np.ndarray:
    """The same kernel from the finite ball expansion

        k_t(x) = sum_{r=-N}^{M} (phi_r - phi_{r+1}) p^r 1[|x| <= p^{-r}],

    phi_{-N} = 1 (the dual ball of radius p^{-N} is {0}), phi_r = e^{-t p^{rb}}
    otherwise, phi_{M+1} = 0.
    """
    p, N, M = model.p, model.N, model.M
    r = np.arange(-N, M + 1)
    phi = np.exp(-t * float(p) ** (r * b))
    phi[0] = 1.0
    phi = np.append(phi, 0.0)
    w = (phi[:-1] - phi[1:]) * float(p) ** r.astype(float)
    # |x| <= p^{-r}  <=>  r <= -radius (zero coset: every r)
    s = model.radius_exponents
    out = np.zeros(model.size)
    for ri, wi in zip(r, w):
        out += wi * ((s == ZERO_RADIUS) | (s <= -ri))
    return out


def wraparound_offset(p: int, N: int, b: float, t: float, eps: float = 1e-16) -> float:
    """k_t(x) - f_t(x) on shells p^{-M+1} <= |x| <= p^N (standard profile, delta = 0):

        sum_{r <= -N} (p^r - p^{r-1}) (1 - e^{-t p^{rb}}) > 0.

    The finite group identifies everything beyond p^N with the ball itself,
    so the continuum mass outside is spread uniformly over G.
    """
    total, r = 0.0, -N
    while True:
        term = (p ** float(r) - p ** float(r - 1)) * -math.expm1(-t * p ** (r * b))
        total += term
        if term <= eps * total or term == 0.0:
            return total
        r -= 1


def trotter_kernel(model: FiniteGroupModel, b: float, V: "Potential", t: float, steps: int) -> np.ndarray:
    """Kernel of (e^{-dV} e^{-d Delta_b})^steps, d = t/steps: the exact target of
    the left-rule pinned-weight estimator."""
    d = t / steps
    P = _circulant(model, free_kernel(model, b, d) * model.cell_measure)
    D = np.exp(-d * potential_values(model, V))
    A = D[:, None] * P
    return np.linalg.matrix_power(A, steps) / model.cell_measure


# -- bridges --------------------------------------------------------------------

@dataclass
class BridgeBatch:
    model: FiniteGroupModel
    grid: TimeGrid
    x: int
    y: int
    indices: np.ndarray  # (samples, steps + 1)
    rng: RngSpec

    def marginal(self, j: int) -> np.ndarray:
        return np.bincount(self.indices[:, j], minlength=self.model.size)

    def path(self, i: int) -> PathSample:
        """One bridge as a PathSample with values in the fixed window of G."""
        codec = PadicArrayCodec(self.model.p, self.model.N, self.model.M)
        vals = np.stack([codec.encode(self.model.element(int(k)))[None, :] for k in self.indices[i]])
        return PathSample((self.model.element(self.x),), self.grid, codec, vals, self.rng, i)


def bridge_marginal(model: FiniteGroupModel, b: float, x: int, y: int, T: float, t: float) -> np.ndarray:
    """P(X(t) = u | X(0) = x, X(T) = y) on G, from the direct formula."""
    u = np.arange(model.size)
    w = free_kernel(model, b, t)[(u - x) % model.size] * free_kernel(model, b, T - t)[(y - u) % model.size]
    return w / w.sum()


def _step_tables(model: FiniteGroupModel, b: float, y: int, grid: TimeGrid) -> list[np.ndarray]:
    """Flattened row CDFs of the conditional step laws, row i offset by i."""
    S = model.size
    u = np.arange(S)
    kd = free_kernel(model, b, grid.dt)
    tables = []
    for j in range(grid.steps - 1):
        rest = grid.T - grid.nodes[j + 1]
        to_y = free_kernel(model, b, rest)[(y - u) % S]
        W = kd[(u[None, :] - u[:, None]) % S] * to_y[None, :]
        C = np.cumsum(W, axis=1)
        C /= C[:, -1:]
        C[:, -1] = 1.0
        tables.append((C + np.arange(S)[:, None]).ravel())
    return tables


def exact_bridge_sampler(model: FiniteGroupModel, b: float, x: int, y: int, T: float, grid: TimeGrid,
                         rng: RngSpec, n_samples: int = 1, threads: int | None = None) -> BridgeBatch:
    """Bridges from x to y over [0, T] on G, drawn step by step from the exact
    conditional laws P(X(t_{j+1}) = u | X(t_j) = w, X(T) = y)
    proportional to k_dt(u - w) k_{T - t_{j+1}}(y - u)."""
    if abs(grid.T - T) > 1e-12 * T:
        raise ValueError("grid horizon must equal T")
    S = model.size
    tables = _step_tables(model, b, y, grid)

    def chunk(c, a, stop):
        g = rng.rng(c)
        n = stop - a
        out = np.empty((n, grid.steps + 1), dtype=np.int64)
        out[:, 0] = x
        cur = np.full(n, x, dtype=np.int64)
        for j, tab in enumerate(tables):
            pos = np.searchsorted(tab, cur + g.random(n), side="right")
            cur = np.minimum(pos - cur * S, S - 1)
            out[:, j + 1] = cur
        out[:, -1] = y
        return out

    return BridgeBatch(model, grid, x, y, np.concatenate(run_chunks(chunk, n_samples, threads)), rng)


@dataclass(frozen=True)
class BridgeEstimate:
    estimate: float
    stderr: float
    oracle: float
    n: int

    @property
    def z(self) -> float:
        return abs(self.estimate - self.oracle) / self.stderr if self.stderr > 0 else math.inf


def bridge_kernel_estimate(model: FiniteGroupModel, b: float, V: "Potential", x: int, y: int,
                           T: float, steps: int, rng: RngSpec, n_samples: int,
                           threads: int | None = None) -> BridgeEstimate:
    """E_bridge[exp(-dt sum_{j<M} V(omega_j))] * k_T(y - x) against e^{-TH}(x, y)."""
    grid = TimeGrid(T, steps)
    batch = exact_bridge_sampler(model, b, x, y, T, grid, rng, n_samples, threads)
    vals = potential_values(model, V)[batch.indices[:, :-1]]
    w = np.exp(-grid.dt * vals.sum(axis=1)) * free_kernel(model, b, T)[(y - x) % model.size]
    oracle = float(Propagator(model, b, V).kernel(T)[x, y])
    return BridgeEstimate(float(w.mean()), float(w.std(ddof=1) / math.sqrt(n_samples)), oracle, n_samples)


# -- continuous-time bridges --------------------------------------------------------

JUMP_TABLE_CAP = 1 << 25  # entries in the stacked step CDFs (256 MiB of float64)


@dataclass
class JumpBridgeBatch:
    """Continuous-time bridges on G by uniformization.

    With lam = max diag(Delta_b) and R = I - Delta_b / lam, X jumps at the
    events of a rate-lam Poisson clock with transition matrix R.  Sample s
    has ``counts[s]`` clock events at ``times[s, :counts[s]]`` (sorted) and
    visits ``states[s, 0..counts[s]]``; padding repeats T and y.
    """

    model: FiniteGroupModel
    T: float
    x: int
    y: int
    rate: float
    counts: np.ndarray
    states: np.ndarray  # (samples, n_max + 1)
    times: np.ndarray   # (samples, n_max)
    rng: RngSpec

    def state_at(self, t: float) -> np.ndarray:
        """X(t) for every sample (right-continuous)."""
        if not 0 <= t <= self.T:
            raise ValueError("t outside [0, T]")
        k = np.sum(self.times <= t, axis=1)
        return self.states[np.arange(len(k)), k]

    def potential_integral(self, V: "Potential") -> np.ndarray:
        """int_0^T V(X(s)) ds per sample, exactly (piecewise-constant paths)."""
        n = len(self.counts)
        edges = np.concatenate([np.zeros((n, 1)), self.times, np.full((n, 1), self.T)], axis=1)
        return np.sum(potential_values(self.model, V)[self.states] * np.diff(edges, axis=1), axis=1)


def _jump_chain(model: FiniteGroupModel, b: float) -> tuple[float, np.ndarray]:
    L = vladimirov_matrix(model, b).matrix
    lam = float(np.max(np.diag(L)))
    R = np.maximum(np.eye(model.size) - L / lam, 0.0)  # clip round-off below zero
    return lam, R / R.sum(axis=1, keepdims=True)


def jump_bridge_sampler(model: FiniteGroupModel, b: float, x: int, y: int, T: float, rng: RngSpec,
                        n_samples: int = 1, threads: int | None = None, tail: float = 1e-16) -> JumpBridgeBatch:
    """Exact continuous-time bridges from x to y over [0, T].

    Given X(T) = y, the event count n has weights Pois(lam T; n) R^n(x, y),
    the event times are uniform order statistics independent of the chain,
    and the visited states are a discrete R-bridge drawn step by step from
    P(u | w, r steps left) proportional to R(w, u) R^{r-1}(u, y).
    """
    if not T > 0:
        raise ValueError("T must be positive")
    S = model.size
    lam, R = _jump_chain(model, b)
    mu = lam * T
    n_max = int(math.ceil(mu + 12 * math.sqrt(mu) + 30))
    if n_max * S * S > JUMP_TABLE_CAP:
        raise ModelSizeError(f"jump tables need {n_max} x {S}^2 entries (cap {JUMP_TABLE_CAP})")
    to_y = np.empty((n_max + 1, S))  # to_y[r] = R^r(., y)
    to_y[0] = 0.0
    to_y[0, y] = 1.0
    for r in range(1, n_max + 1):
        to_y[r] = R @ to_y[r - 1]
    n = np.arange(n_max + 1)
    logw = n * math.log(mu) - mu - np.array([math.lgamma(k + 1) for k in n])
    w = np.exp(logw) * to_y[:, x]
    if w[-1] > tail * w.sum():
        raise RuntimeError("Poisson truncation too short")  # n_max is chosen to rule this out
    count_cdf = np.cumsum(w) / w.sum()
    # row g = (r - 1) S + w: law of the next state with r events left
    W = R[None, :, :] * to_y[:-1, None, :]
    tot = W.sum(axis=2, keepdims=True)
    C = np.cumsum(W, axis=2) / np.where(tot > 0, tot, 1.0)
    C[:, :, -1] = 1.0
    flat = (C.reshape(n_max * S, S) + np.arange(n_max * S)[:, None]).ravel()

    def chunk(c, a, stop):
        g = rng.rng(c)
        m = stop - a
        cnt = np.minimum(np.searchsorted(count_cdf, g.random(m), side="right"), n_max)
        u = g.random((m, n_max))
        u[np.arange(n_max)[None, :] >= cnt[:, None]] = 1.0
        times = T * np.sort(u, axis=1)
        states = np.full((m, n_max + 1), y, dtype=np.int64)
        cur = np.full(m, x, dtype=np.int64)
        states[:, 0] = x
        for i in range(n_max):
            live = cnt > i
            if not live.any():
                break
            row = (cnt[live] - i - 1) * S + cur[live]
            pos = np.searchsorted(flat, row + g.random(int(live.sum())), side="right")
            cur[live] = np.minimum(pos - row * S, S - 1)
            states[live, i + 1] = cur[live]
        return cnt, states, times

    parts = run_chunks(chunk, n_samples, threads)
    counts, states, times = (np.concatenate([p[i] for p in parts]) for i in range(3))
    return JumpBridgeBatch(model, T, x, y, lam, counts, states, times, rng)


def jump_bridge_kernel_estimate(model: FiniteGroupModel, b: float, V: "Potential", x: int, y: int, T: float,
                                rng: RngSpec, n_samples: int, threads: int | None = None) -> BridgeEstimate:
    """E_bridge[exp(-int_0^T V)] * k_T(y - x) with the exact time integral:
    unbiased for e^{-TH}(x, y) / cell at any sample size."""
    batch = jump_bridge_sampler(model, b, x, y, T, rng, n_samples, threads)
    w = np.exp(-batch.potential_integral(V)) * free_kernel(model, b, T)[(y - x) % model.size]
    oracle = float(Propagator(model, b, V).kernel(T)[x, y])
    return BridgeEstimate(float(w.mean()), float(w.std(ddof=1) / math.sqrt(n_samples)), oracle, n_samples)


def _cconv(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.real(np.fft.ifft(np.fft.fft(a) * np.fft.fft(b)))


@dataclass(frozen=True)
class ConditionalMoment:
    value: float
    bound_constant: float
    k: float


def conditional_product_moment(model: FiniteGroupModel, b: float, k: float, t1: float, t2: float,
                               t3: float, T: float, z: int) -> ConditionalMoment:
    """E[|X(t2)-X(t1)|^k |X(t3)-X(t2)|^k | X(0)=0, X(T)=z] on G, exactly.

    ``bound_constant`` is value * k_T(z) / (t3 - t1)^{2k/b}, the empirical A
    in value <= A (t3 - t1)^{2k/b} / k_T(z).
    """
    if not 0 < t1 < t2 < t3 < T:
        raise ValueError("need 0 < t1 < t2 < t3 < T")
    cell = model.cell_measure
    nk = model.norms ** k
    chain = _cconv(_cconv(_cconv(free_kernel(model, b, t1), nk * free_kernel(model, b, t2 - t1)),
                          nk * free_kernel(model, b, t3 - t2)), free_kernel(model, b, T - t3))
    kT = free_kernel(model, b, T)[z % model.size]
    value = float(chain[z % model.size] * cell ** 3 / kT)
    return ConditionalMoment(value, value * kT / (t3 - t1) ** (2 * k / b), k)
