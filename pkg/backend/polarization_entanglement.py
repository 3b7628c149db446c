"""Two-qubit polarization states: CHSH, tomography, fidelity and Born-rule sampling.

Basis order is |HH>, |HV>, |VH>, |VV> with the X photon as the first qubit.
H and V are the eigenstates of sigma_z, D = (H + V)/sqrt2 of sigma_x and
R = (H + iV)/sqrt2 of sigma_y.
"""

import csv
import logging
import math
from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy.linalg import sqrtm
from scipy.optimize import minimize

from backend.errors import DataError, ParameterError

logger = logging.getLogger(__name__)

MATRIX_TOL = 1e-9
MIX_EPS = 1e-6
MLE_MAXITER = 10_000
MLE_FTOL = 1e-12

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = (I2, SX, SY, SZ)

KET_H = np.array([1, 0], dtype=complex)
KET_V = np.array([0, 1], dtype=complex)
KET_D = np.array([1, 1], dtype=complex) / math.sqrt(2)
KET_R = np.array([1, 1j], dtype=complex) / math.sqrt(2)
TOMOGRAPHY_LABELS = ("H", "V", "D", "R")
TOMOGRAPHY_KETS = dict(zip(TOMOGRAPHY_LABELS, (KET_H, KET_V, KET_D, KET_R)))

PHI_PLUS = np.array([1, 0, 0, 1], dtype=complex) / math.sqrt(2)
PHI_MINUS = np.array([1, 0, 0, -1], dtype=complex) / math.sqrt(2)
KET_HH = np.array([1, 0, 0, 0], dtype=complex)


# -----------------------------
# States and settings
# -----------------------------
@dataclass(frozen=True, eq=False)
class DensityMatrix:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (4, 4):
            raise ParameterError("two-qubit density matrix must be 4x4")
        if not np.allclose(m, m.conj().T, atol=MATRIX_TOL, rtol=0):
            raise ParameterError("density matrix is not Hermitian")
        if abs(np.trace(m).real - 1.0) > MATRIX_TOL:
            raise ParameterError("density matrix trace is not 1")
        if np.linalg.eigvalsh(m).min() < -MATRIX_TOL:
            raise ParameterError("density matrix has negative eigenvalues")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_pure(cls, ket):
        ket = _normalized(ket)
        return cls(np.outer(ket, ket.conj()))

    @classmethod
    def werner(cls, p, ket=PHI_PLUS):
        if not 0.0 <= p <= 1.0:
            raise ParameterError("Werner weight must lie in [0, 1]")
        ket = _normalized(ket)
        return cls(p * np.outer(ket, ket.conj()) + (1.0 - p) * np.eye(4) / 4.0)

    @classmethod
    def maximally_mixed(cls):
        return cls(np.eye(4, dtype=complex) / 4.0)

    @property
    def eigenvalues(self):
        return np.linalg.eigvalsh(self.matrix)

    def purity(self):
        return float(np.real(np.trace(self.matrix @ self.matrix)))

    def concurrence(self):
        """Wootters concurrence."""
        yy = np.kron(SY, SY)
        tilde = yy @ self.matrix.conj() @ yy
        lam = np.sqrt(np.abs(np.linalg.eigvals(self.matrix @ tilde).real))
        lam = np.sort(lam)[::-1]
        return float(max(0.0, lam[0] - lam[1] - lam[2] - lam[3]))

    def with_coherence_phase(self, phase):
        """Rotate the HH-VV coherence by exp(i phase)."""
        m = self.matrix.copy()
        m[0, 3] *= np.exp(1j * phase)
        m[3, 0] = np.conj(m[0, 3])
        return DensityMatrix(m)


def _normalized(ket):
    ket = np.asarray(ket, dtype=complex)
    if ket.shape != (4,):
        raise ParameterError("two-qubit state vector must have 4 entries")
    norm = np.linalg.norm(ket)
    if abs(norm - 1.0) > MATRIX_TOL:
        raise ParameterError(f"target state is not normalized (norm {norm:.12g})")
    return ket


@dataclass(frozen=True)
class MeasurementSetting:
    """Analyzer along a Bloch direction; outcome +1 projects onto (I + n.sigma)/2."""

    bloch: tuple

    def __post_init__(self):
        vec = tuple(float(c) for c in self.bloch)
        if len(vec) != 3 or abs(math.sqrt(sum(c * c for c in vec)) - 1.0) > MATRIX_TOL:
            raise ParameterError(f"Bloch vector {self.bloch!r} is not a unit 3-vector")
        object.__setattr__(self, "bloch", vec)

    @property
    def operator(self):
        x, y, z = self.bloch
        return x * SX + y * SY + z * SZ

    def projector(self, outcome):
        return (I2 + outcome * self.operator) / 2.0


SIGMA_Z = MeasurementSetting((0.0, 0.0, 1.0))
SIGMA_Y = MeasurementSetting((0.0, 1.0, 0.0))
SIGMA_X = MeasurementSetting((1.0, 0.0, 0.0))
CHSH_X_SETTINGS = (SIGMA_Z, SIGMA_Y)
CHSH_XX_SETTINGS = (MeasurementSetting((0.0, -1.0 / math.sqrt(2), 1.0 / math.sqrt(2))),
                    MeasurementSetting((0.0, 1.0 / math.sqrt(2), 1.0 / math.sqrt(2))))
CHSH_SIGNS = np.array([[1.0, 1.0], [1.0, -1.0]])
OUTCOMES = (1, -1)


def outcome_probabilities(rho, setting_x, setting_xx):
    """Born-rule probabilities of (+,+), (+,-), (-,+), (-,-)."""
    return np.array([np.real(np.trace(rho.matrix @ np.kron(setting_x.projector(a), setting_xx.projector(b))))
                     for a, b in product(OUTCOMES, OUTCOMES)]).clip(0.0, 1.0)


# -----------------------------
# CHSH
# -----------------------------
@dataclass(frozen=True)
class ChshResult:
    s_value: float
    sigma_s: float
    correlators: tuple
    sigmas: tuple = (0.0, 0.0, 0.0, 0.0)

    def to_dict(self):
        return {"s_value": self.s_value, "sigma_s": self.sigma_s,
                "correlators": list(self.correlators), "sigmas": list(self.sigmas)}


def correlator(rho, setting_x, setting_xx):
    return float(np.real(np.trace(rho.matrix @ np.kron(setting_x.operator, setting_xx.operator))))


def chsh_expectation(rho, x_settings=CHSH_X_SETTINGS, xx_settings=CHSH_XX_SETTINGS):
    """S = E00 + E01 + E10 - E11 of a density matrix."""
    e = np.array([[correlator(rho, a, b) for b in xx_settings] for a in x_settings])
    return ChshResult(float((CHSH_SIGNS * e).sum()), 0.0, tuple(e.ravel().tolist()))


def chsh_from_counts(counts):
    """CHSH from counts indexed [x setting, xx setting, x outcome, xx outcome], outcome 0 is +1."""
    counts = np.asarray(counts, dtype=float)
    if counts.shape != (2, 2, 2, 2):
        raise DataError("CHSH counts must have shape (2, 2, 2, 2)")
    if np.any(counts < 0):
        raise DataError("negative coincidence count")
    totals = counts.sum(axis=(2, 3))
    if np.any(totals <= 0):
        raise DataError("a CHSH setting has zero total counts")
    e = (counts[..., 0, 0] + counts[..., 1, 1] - counts[..., 0, 1] - counts[..., 1, 0]) / totals
    sigma = np.sqrt(np.clip(1.0 - e * e, 0.0, None) / totals)
    s = float((CHSH_SIGNS * e).sum())
    return ChshResult(s, float(np.sqrt((sigma ** 2).sum())), tuple(e.ravel().tolist()),
                      tuple(sigma.ravel().tolist()))


def read_chsh_csv(path):
    """Columns: setting_x, setting_xx (0/1), outcome_x, outcome_xx (+1/-1), count."""
    counts = np.zeros((2, 2, 2, 2))
    try:
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                i, j = int(row["setting_x"]), int(row["setting_xx"])
                a = OUTCOMES.index(int(row["outcome_x"]))
                b = OUTCOMES.index(int(row["outcome_xx"]))
                counts[i, j, a, b] += float(row["count"])
    except (OSError, KeyError, ValueError, IndexError) as exc:
        raise DataError(f"cannot parse CHSH counts {path}: {exc}") from None
    return counts


# -----------------------------
# Tomography
# -----------------------------
@dataclass(frozen=True, eq=False)
class TomographyCounts:
    """Coincidences per projector pair, indexed by TOMOGRAPHY_LABELS for X and XX."""

    counts: np.ndarray
    norm: np.ndarray = None

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=float)
        norm = np.ones((4, 4)) if self.norm is None else np.asarray(self.norm, dtype=float)
        if counts.shape != (4, 4) or norm.shape != (4, 4):
            raise DataError("tomography needs a 4x4 table over {H,V,D,R} x {H,V,D,R}")
        if np.any(counts < 0):
            raise DataError("negative coincidence count")
        if np.any(norm <= 0):
            raise DataError("normalization of every setting must be positive")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "norm", norm)

    @classmethod
    def expected(cls, rho, total_per_setting=1.0):
        probs = np.array([[np.real(TOMOGRAPHY_PROJECTORS[i][j].ravel() @ rho.matrix.T.ravel())
                           for j in range(4)] for i in range(4)])
        return cls(probs * total_per_setting)

    @classmethod
    def read_csv(cls, path):
        """Columns: x (H/V/D/R), xx (H/V/D/R), count, optional norm; all 16 settings once each."""
        counts = np.zeros((4, 4))
        norm = np.ones((4, 4))
        seen = np.zeros((4, 4), dtype=bool)
        try:
            with open(path, newline="") as fh:
                for row in csv.DictReader(fh):
                    i = TOMOGRAPHY_LABELS.index(row["x"].strip().upper())
                    j = TOMOGRAPHY_LABELS.index(row["xx"].strip().upper())
                    if seen[i, j]:
                        raise DataError(f"setting {TOMOGRAPHY_LABELS[i]}{TOMOGRAPHY_LABELS[j]} listed twice")
                    seen[i, j] = True
                    counts[i, j] = float(row["count"])
                    if row.get("norm"):
                        norm[i, j] = float(row["norm"])
        except (OSError, KeyError, ValueError) as exc:
            raise DataError(f"cannot parse tomography counts {path}: {exc}") from None
        if not seen.all():
            missing = [TOMOGRAPHY_LABELS[i] + TOMOGRAPHY_LABELS[j] for i, j in zip(*np.nonzero(~seen))]
            raise DataError(f"settings not informationally complete, missing {', '.join(missing)}")
        return cls(counts, norm)


def _projector_pair(i, j):
    ket = np.kron(TOMOGRAPHY_KETS[TOMOGRAPHY_LABELS[i]], TOMOGRAPHY_KETS[TOMOGRAPHY_LABELS[j]])
    return np.outer(ket, ket.conj())


TOMOGRAPHY_PROJECTORS = [[_projector_pair(i, j) for j in range(4)] for i in range(4)]
_PROJECTOR_STACK = np.array([TOMOGRAPHY_PROJECTORS[i][j] for i in range(4) for j in range(4)])
_PAULI_BASIS = [np.kron(a, b) for a in PAULIS for b in PAULIS]


def _linear_inversion(counts):
    freq = (counts.counts / counts.norm).ravel()
    design = np.array([[np.real(np.trace(p @ s)) / 4.0 for s in _PAULI_BASIS] for p in _PROJECTOR_STACK])
    coeffs = np.linalg.solve(design, freq)
    rho = sum(c * s for c, s in zip(coeffs, _PAULI_BASIS)) / 4.0
    rho = (rho + rho.conj().T) / 2.0
    return rho / np.trace(rho).real


def _project_to_states(matrix):
    """Closest density matrix in the eigenbasis: eigenvalues projected onto the simplex."""
    w, v = np.linalg.eigh(matrix)
    u = np.sort(w)[::-1]
    css = np.cumsum(u)
    k = np.arange(1, len(u) + 1)
    cond = u - (css - 1.0) / k > 0
    rank = k[cond][-1]
    theta = (css[cond][-1] - 1.0) / rank
    lam = np.clip(w - theta, 0.0, None)
    rho = (v * lam) @ v.conj().T
    return (rho + rho.conj().T) / 2.0


def _log_likelihood(rho, n, w):
    mu = w * np.real(np.einsum("kij,ji->k", _PROJECTOR_STACK, rho))
    total = mu.sum()
    observed = n > 0
    if np.any(mu[observed] <= 0):
        return -math.inf
    return float((n[observed] * np.log(mu[observed])).sum() - n.sum() * math.log(total))


def _unpack(params):
    low = np.tril_indices(4)
    lower = np.zeros((4, 4), dtype=complex)
    lower[low] = params[:10] + 1j * params[10:]
    return lower


def tomography_reconstruct(counts):
    """Linear inversion, projection onto states, then maximum likelihood (rho = L L^dag)."""
    n = counts.counts.ravel()
    w = counts.norm.ravel()
    if n.sum() <= 0:
        raise DataError("all tomography counts are zero")

    projected = _project_to_states(_linear_inversion(counts))
    start = (1.0 - MIX_EPS) * projected + MIX_EPS * np.eye(4) / 4.0
    lower = np.linalg.cholesky(start)
    low = np.tril_indices(4)
    x0 = np.concatenate([lower[low].real, lower[low].imag])
    n_tot = n.sum()

    def objective(params):
        lw = _unpack(params)
        m = lw @ lw.conj().T
        mu = np.maximum(w * np.real(np.einsum("kij,ji->k", _PROJECTOR_STACK, m)), 1e-300)
        total = mu.sum()
        ll = (n * np.log(mu)).sum() - n_tot * math.log(total)
        g = np.einsum("k,kij->ij", (n / mu - n_tot / total) * w, _PROJECTOR_STACK)
        k_t = (lw.conj().T @ g).T
        grad = np.concatenate([2.0 * k_t.real[low], -2.0 * k_t.imag[low]])
        return -ll / n_tot, -grad / n_tot

    result = minimize(objective, x0, jac=True, method="L-BFGS-B",
                      options={"maxiter": MLE_MAXITER, "ftol": MLE_FTOL, "gtol": 1e-10})
    lw = _unpack(result.x)
    rho = lw @ lw.conj().T
    rho = (rho + rho.conj().T) / 2.0
    rho /= np.trace(rho).real
    if _log_likelihood(rho, n, w) < _log_likelihood(projected, n, w):
        logger.warning("likelihood ascent did not improve on the projected estimate")
        rho = projected
    logger.debug("tomography MLE finished after %d iterations (%s)", result.nit, result.message)
    return DensityMatrix(rho)


# -----------------------------
# Fidelity
# -----------------------------
def fidelity(rho, target=PHI_PLUS):
    """F = <psi|rho|psi> for a normalized pure target."""
    ket = _normalized(target)
    return float(np.real(ket.conj() @ rho.matrix @ ket).clip(0.0, 1.0))


PURE_TOL = 1e-10


def state_fidelity(rho, sigma):
    """Uhlmann fidelity (Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2 of two density matrices.

    With a pure argument this is <psi|other|psi>, evaluated directly.
    """
    for pure, other in ((sigma, rho), (rho, sigma)):
        if pure.purity() > 1.0 - PURE_TOL:
            w, v = np.linalg.eigh(pure.matrix)
            ket = v[:, int(np.argmax(w))]
            return float(np.real(ket.conj() @ other.matrix @ ket).clip(0.0, 1.0))
    root = sqrtm(rho.matrix)
    inner = np.trace(sqrtm(root @ sigma.matrix @ root))
    return float(min(np.real(inner) ** 2, 1.0))


def phase_optimized_fidelity(rho):
    """Fidelity to (|HH> + e^{i phi}|VV>)/sqrt2 maximised over phi."""
    m = rho.matrix
    return float(min(0.5 * np.real(m[0, 0] + m[3, 3]) + abs(m[0, 3]), 1.0))


# -----------------------------
# Sampling
# -----------------------------
def sample_polarization_pairs(rho, setting_x, setting_xx, size, rng):
    """Arrays of +-1 outcomes for both photons."""
    probs = outcome_probabilities(rho, setting_x, setting_xx)
    idx = rng.choice(4, size=size, p=probs / probs.sum())
    return np.where(idx < 2, 1, -1), np.where(idx % 2 == 0, 1, -1)


def sample_polarization_pair(rho, settings, rng):
    a, b = sample_polarization_pairs(rho, settings[0], settings[1], 1, rng)
    return int(a[0]), int(b[0])


def sample_phase_rotated_pairs(rho, setting_x, setting_xx, phases, rng):
    """Outcomes with a per-event phase applied to the HH-VV coherence."""
    base = rho.matrix.copy()
    coherence = base[0, 3]
    base[0, 3] = base[3, 0] = 0.0
    probs = np.empty((len(phases), 4))
    for col, (a, b) in enumerate(product(OUTCOMES, OUTCOMES)):
        proj = np.kron(setting_x.projector(a), setting_xx.projector(b))
        static = np.real(np.trace(base @ proj))
        probs[:, col] = static + 2.0 * np.real(coherence * np.exp(1j * phases) * proj[3, 0])
    probs = probs.clip(0.0, None)
    cum = np.cumsum(probs / probs.sum(axis=1, keepdims=True), axis=1)
    idx = (rng.random(len(phases))[:, None] > cum[:, :3]).sum(axis=1)
    return np.where(idx < 2, 1, -1), np.where(idx % 2 == 0, 1, -1)
