"""
Reduction of MISO and MIMO channels to effective scalar subchannels.

MISO: limited-feedback beamforming from a codebook of unit vectors, after which
the link behaves like SISO with gain |h^T w|.
MIMO: compact SVD plus waterfilling over the singular values, giving M parallel
SISO links with gains lambda_i sqrt(xi_i).
Outdated CSI: the matrix extension of the perfect-feedback recursion.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from core.python.channel import complex_normal
from core.python.errors import (
    CodebookFormatError,
    ConfigurationError,
    ConsistencyError,
    DegenerateChannelError,
    DimensionError,
    ResultsIOError,
)

logger = logging.getLogger(__name__)

UNIT_NORM_TOL = 1e-6
HERMITIAN_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class BeamformingCodebook:
    """2^B unit-norm beamforming vectors of length Mt, one per row"""

    vectors: np.ndarray
    b: int
    kind: str
    declared_min_dist: float = None
    source: str = None

    @property
    def mt(self):
        return self.vectors.shape[1]

    @property
    def size(self):
        return self.vectors.shape[0]


def build_rvq_codebook(mt, b, seed):
    """
    Random vector quantization codebook shared through a common seed.

    Args:
        mt: Transmit antennas
        b: Feedback bits
        seed: Seed known to both ends

    Returns:
        BeamformingCodebook of 2^b isotropic unit vectors
    """
    if b < 1 or mt < 1:
        raise ConfigurationError(f"need b >= 1 and mt >= 1, got b={b} mt={mt}", field="codebook")
    rng = np.random.default_rng(seed)
    v = complex_normal(rng, (1 << b, mt))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return BeamformingCodebook(vectors=v, b=b, kind="rvq")


def load_codebook(path):
    """
    Read a codebook file.

    Format: first line 'Mt B', then 2^B rows of 2 Mt reals (re/im interleaved),
    optionally a trailing '# min_dist <value>' line. Blank lines are skipped.
    """
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ResultsIOError(f"cannot read codebook: {exc.strerror or exc}", path=path)

    header = None
    rows = []
    declared = None
    for lineno, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text:
            continue
        if text.startswith("#"):
            parts = text[1:].split()
            if len(parts) == 2 and parts[0] == "min_dist":
                try:
                    declared = float(parts[1])
                except ValueError:
                    raise CodebookFormatError(f"bad min_dist value {parts[1]!r}", path, lineno)
            continue
        fields = text.split()
        if header is None:
            if len(fields) != 2:
                raise CodebookFormatError("header must be 'Mt B'", path, lineno)
            try:
                mt, b = int(fields[0]), int(fields[1])
            except ValueError:
                raise CodebookFormatError(f"header must hold two integers, got {text!r}", path, lineno)
            if mt < 1 or b < 1:
                raise CodebookFormatError(f"Mt and B must be >= 1, got {mt} {b}", path, lineno)
            header = (mt, b, lineno)
            continue
        mt = header[0]
        if len(fields) != 2 * mt:
            raise CodebookFormatError(
                f"expected {2 * mt} reals, found {len(fields)}", path, lineno
            )
        try:
            values = np.array([float(f) for f in fields])
        except ValueError:
            raise CodebookFormatError(f"non-numeric entry in {text!r}", path, lineno)
        vec = values[0::2] + 1j * values[1::2]
        if abs(np.linalg.norm(vec) - 1.0) > UNIT_NORM_TOL:
            raise CodebookFormatError(
                f"vector norm {np.linalg.norm(vec):.9f} is not 1", path, lineno
            )
        rows.append(vec)

    if header is None:
        raise CodebookFormatError("empty codebook file", path)
    mt, b, header_line = header
    if len(rows) != 1 << b:
        raise CodebookFormatError(
            f"header declares {1 << b} vectors, found {len(rows)}", path, header_line
        )
    logger.debug(f"Loaded {1 << b} x {mt} codebook from {path}")
    return BeamformingCodebook(
        vectors=np.array(rows), b=b, kind="grassmannian", declared_min_dist=declared, source=str(path)
    )


def chordal_distances(codebook):
    """Pairwise chordal distances sqrt(1 - |u^H v|^2) of distinct vectors"""
    v = codebook.vectors
    gram = np.abs(v.conj() @ v.T) ** 2
    iu = np.triu_indices(codebook.size, k=1)
    return np.sqrt(np.clip(1.0 - gram[iu], 0.0, None))


def min_chordal_distance(codebook):
    return float(chordal_distances(codebook).min())


def validate_codebook(codebook, tol=UNIT_NORM_TOL):
    """Check norms and, when declared, the minimum chordal distance"""
    norms = np.linalg.norm(codebook.vectors, axis=1)
    if np.max(np.abs(norms - 1.0)) > tol:
        raise CodebookFormatError("codebook holds non-unit vectors", codebook.source)
    measured = min_chordal_distance(codebook)
    if codebook.declared_min_dist is not None and abs(measured - codebook.declared_min_dist) > tol:
        raise CodebookFormatError(
            f"declared min_dist {codebook.declared_min_dist} but measured {measured:.9f}",
            codebook.source,
        )
    return measured


def select_beamformer(h, codebook):
    """
    Pick the codeword maximizing |h^T f_j|^2 (lowest index on ties).

    Returns:
        (index, w)
    """
    h = np.asarray(h)
    if h.shape != (codebook.mt,):
        raise DimensionError(f"channel of shape {h.shape} for a {codebook.mt}-antenna codebook")
    quality = np.abs(codebook.vectors @ h) ** 2
    index = int(np.argmax(quality))
    return index, codebook.vectors[index]


def miso_effective(h, w, y):
    """
    Rotate the MISO output onto a real nonnegative effective gain.

    Returns:
        (lambda_tilde, y_tilde) with y_tilde = exp(-j arg(h^T w)) y
    """
    c = complex(np.dot(np.asarray(h), np.asarray(w)))
    lam = abs(c)
    if lam == 0:
        return 0.0, np.asarray(y)
    return lam, np.exp(-1j * np.angle(c)) * np.asarray(y)


@dataclass(frozen=True, eq=False)
class SpatialDecomposition:
    u: np.ndarray
    lam: np.ndarray
    v: np.ndarray
    xi: np.ndarray
    water_level: float

    @property
    def effective_gains(self):
        return self.lam * np.sqrt(self.xi)

    @property
    def m(self):
        return len(self.lam)


def waterfill(lam, rho):
    """
    Power fractions xi_i = max(0, mu - 1 / (rho lambda_i^2)) with sum xi = 1.

    Args:
        lam: Singular values sorted descending
        rho: Total transmit power

    Returns:
        (xi, mu)
    """
    lam = np.asarray(lam, dtype=float)
    with np.errstate(divide="ignore"):
        inv = np.where(lam > 0, 1.0 / (rho * lam**2), np.inf)
    xi = np.zeros_like(lam)
    active = int(np.count_nonzero(np.isfinite(inv)))
    if active == 0:
        raise DegenerateChannelError("all singular values are zero")
    for m in range(active, 1, -1):
        mu = (1.0 + inv[:m].sum()) / m
        if mu - inv[m - 1] > 0:
            xi[:m] = mu - inv[:m]
            # exact renormalization against rounding
            xi[:m] += (1.0 - xi[:m].sum()) / m
            return xi, mu
    # only the strongest subchannel is active
    xi[0] = 1.0
    return xi, 1.0 + inv[0]


def svd_waterfill(H, rho):
    """
    Compact SVD of H with waterfilling power fractions.

    Args:
        H: Mr x Mt channel matrix
        rho: Total transmit power

    Returns:
        SpatialDecomposition
    """
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2:
        raise DimensionError(f"expected a matrix, got shape {H.shape}")
    if not np.any(H):
        raise DegenerateChannelError("channel matrix is all zero")
    u, s, vh = np.linalg.svd(H, full_matrices=False)
    xi, mu = waterfill(s, rho)
    return SpatialDecomposition(u=u, lam=s, v=vh.conj().T, xi=xi, water_level=mu)


@dataclass(frozen=True, eq=False)
class SpatialMap:
    """
    One block's reduction to M effective scalar links.

    transmit maps x_tilde (M, L) to the antenna signal, receive maps the
    antenna output to y_tilde (M, L).
    """

    gains: np.ndarray
    kind: str
    w: np.ndarray = None
    rotation: complex = 1.0
    decomposition: SpatialDecomposition = None

    @property
    def m(self):
        return len(self.gains)

    def transmit(self, x_tilde):
        x_tilde = np.asarray(x_tilde)
        if self.kind == "siso":
            return x_tilde
        if self.kind == "miso":
            return self.w[:, None] * x_tilde[0][None, :]
        d = self.decomposition
        return d.v @ (np.sqrt(d.xi)[:, None] * x_tilde)

    def receive(self, y):
        y = np.asarray(y)
        if self.kind == "siso":
            return y
        if self.kind == "miso":
            return (self.rotation * y)[None, :]
        return self.decomposition.u.conj().T @ y


def siso_map(h):
    return SpatialMap(gains=np.array([complex(h)]), kind="siso")


def miso_map(h, w):
    c = complex(np.dot(h, w))
    lam = abs(c)
    rotation = np.exp(-1j * np.angle(c)) if lam > 0 else 1.0
    return SpatialMap(gains=np.array([lam], dtype=complex), kind="miso", w=np.asarray(w), rotation=rotation)


def mimo_map(H, rho):
    H = np.asarray(H, dtype=complex)
    try:
        d = svd_waterfill(H, rho)
    except DegenerateChannelError:
        # nothing gets through; keep the stream geometry so buffers stay aligned
        mr, mt = H.shape
        m = min(mr, mt)
        logger.debug(f"all-zero {mr}x{mt} channel block")
        d = SpatialDecomposition(
            u=np.eye(mr, m, dtype=complex),
            lam=np.zeros(m),
            v=np.eye(mt, m, dtype=complex),
            xi=np.full(m, 1.0 / m),
            water_level=0.0,
        )
    return SpatialMap(gains=d.effective_gains.astype(complex), kind="mimo", decomposition=d)


def miso_capacity(mt, rho, draws, rng):
    """E[log2(1 + rho ||h||^2)] with perfect transmit CSI"""
    h = complex_normal(rng, (draws, mt))
    return float(np.mean(np.log2(1.0 + rho * np.sum(np.abs(h) ** 2, axis=1))))


def limited_feedback_capacity(codebook, rho, draws, rng):
    """E[log2(1 + rho max_j |h^T f_j|^2)]"""
    h = complex_normal(rng, (draws, codebook.mt))
    best = np.max(np.abs(h @ codebook.vectors.T) ** 2, axis=1)
    return float(np.mean(np.log2(1.0 + rho * best)))


def subchannel_capacities(mr, mt, rho, draws, rng):
    """Per-subchannel E[log2(1 + rho xi_i lambda_i^2)] under waterfilling"""
    m = min(mr, mt)
    total = np.zeros(m)
    for _ in range(draws):
        d = svd_waterfill(complex_normal(rng, (mr, mt)), rho)
        total += np.log2(1.0 + rho * d.xi * d.lam**2)
    return total / draws


def transmit_capacity(mr, mt, rho, draws, rng):
    """Ergodic rate with SVD precoding and waterfilling"""
    return float(np.sum(subchannel_capacities(mr, mt, rho, draws, rng)))


def _hermitian_inv_sqrt(A):
    A = np.asarray(A)
    drift = np.max(np.abs(A - A.conj().T))
    if drift > HERMITIAN_TOL * max(1.0, np.max(np.abs(A))):
        raise ConsistencyError(f"matrix drifted from Hermitian by {drift:.3e}")
    w, V = np.linalg.eigh(0.5 * (A + A.conj().T))
    return (V / np.sqrt(w)) @ V.conj().T


class OutdatedMimoCoder:
    """
    Perfect-feedback vector recursion when the source only knows past H.

        x[k+1] = (I + c H^H H)^(-1/2) (x[k] - c H^H z[k]),   c = factor * rho
        theta_hat[k] = theta_hat[k-1] + Phi[k-1] (I + c H^H H)^(-1) c H^H y[k]

    factor = 1 keeps the recursion as written; factor = M reproduces the
    alternative constant in the definition of Phi. Encoder and decoder always
    share the same constant.
    """

    def __init__(self, rho, mt, factor=1.0):
        if rho <= 0:
            raise ConfigurationError(f"must be > 0, got {rho}", field="rho")
        self.rho = float(rho)
        self.mt = int(mt)
        self.c = float(factor) * self.rho
        self.k = 0
        self.phi = np.eye(self.mt, dtype=complex)
        self.theta_hat = None
        self._gram = np.zeros((self.mt, self.mt), dtype=complex)

    def _gram_matrix(self, H):
        H = np.asarray(H, dtype=complex)
        if H.ndim != 2 or H.shape[1] != self.mt:
            raise DimensionError(f"channel of shape {H.shape} for {self.mt} transmit antennas")
        return np.eye(self.mt) + self.c * (H.conj().T @ H), H

    def encode_step(self, x, H, z):
        """Next transmit vector from the current one and the fed-back noise z"""
        G, H = self._gram_matrix(H)
        return _hermitian_inv_sqrt(G) @ (np.asarray(x) - self.c * (H.conj().T @ np.asarray(z)))

    def decode_step(self, y, H):
        """Absorb observation y[k] = H x[k] + z[k]; returns the biased estimate"""
        G, H = self._gram_matrix(H)
        x_hat = np.linalg.solve(G, self.c * (H.conj().T @ np.asarray(y)))
        phi_inv = np.linalg.inv(self.phi)
        self._gram += phi_inv.conj().T @ (H.conj().T @ H) @ phi_inv
        step = self.phi @ x_hat
        self.theta_hat = step if self.theta_hat is None else self.theta_hat + step
        self.phi = self.phi @ _hermitian_inv_sqrt(G)
        self.k += 1
        return self.theta_hat

    @property
    def bias(self):
        """I - Phi Phi^H"""
        return np.eye(self.mt) - self.phi @ self.phi.conj().T

    def unbiased_estimate(self):
        if self.k == 0:
            raise DegenerateChannelError("no observation absorbed yet")
        bias = self.bias
        if np.linalg.cond(bias) > 1e12:
            raise DegenerateChannelError("I - Phi Phi^H is singular")
        return np.linalg.solve(bias, self.theta_hat)

    def error_covariance(self):
        """Covariance of the unbiased estimation error given the channel trace"""
        P = self.phi @ self.phi.conj().T
        Q = np.linalg.solve(self.bias, P)
        return self.c**2 * Q @ self._gram @ Q.conj().T
