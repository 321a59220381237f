import numpy as np
from scipy import integrate, stats

from domadapt.backend import BackendModel, PldaParams
from domadapt.embedio import EmbeddingSet


def make_set(vectors, prefix="u", labels=None, domain="test"):
    vectors = np.asarray(vectors, dtype=np.float64)
    return EmbeddingSet(
        ids=[f"{prefix}{i}" for i in range(vectors.shape[0])],
        vectors=vectors,
        labels=labels,
        domain=domain,
    )


def random_spd(rng, d, n=None):
    """Sample covariance of n >> d Gaussian draws with a random anisotropic covariance."""
    n = n or 20 * d
    a = rng.standard_normal((d, d)) * rng.uniform(0.2, 2.0, size=d)
    return np.atleast_2d(np.cov(rng.standard_normal((n, d)) @ a, rowvar=False))


def data_with_cov(cov, n=None):
    """Rows whose unbiased sample covariance equals ``cov`` exactly (up to round-off)
    and whose mean is zero: whiten a random draw, then color it."""
    cov = np.asarray(cov, dtype=np.float64)
    d = cov.shape[0]
    n = n or 4 * d + 4
    z = np.random.default_rng(d).standard_normal((n, d))
    z -= z.mean(axis=0)
    s, u = np.linalg.eigh(np.cov(z, rowvar=False))
    z = z @ u @ np.diag(s ** -0.5) @ u.T
    w, v = np.linalg.eigh(cov)
    return z @ (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def corrupt(rng, data: bytes) -> bytes:
    """One random corruption: truncation, byte flips, insertion, deletion,
    separator swap, or replacement by random bytes."""
    data = bytearray(data)
    kind = rng.integers(6)
    if kind == 0 and len(data) > 1:
        return bytes(data[: rng.integers(len(data))])
    if kind == 1:
        for _ in range(rng.integers(1, 4)):
            data[rng.integers(len(data))] = rng.integers(256)
        return bytes(data)
    if kind == 2:
        pos = rng.integers(len(data) + 1)
        return bytes(data[:pos]) + rng.bytes(rng.integers(1, 9)) + bytes(data[pos:])
    if kind == 3 and len(data) > 2:
        a, b = sorted(rng.integers(len(data), size=2))
        return bytes(data[:a] + data[b:])
    if kind == 4:
        pos = rng.integers(len(data))
        return bytes(data[:pos]) + bytes(data[pos:]).replace(b"\t", b" ", 1).replace(b"1", b"\t", 1)
    return rng.bytes(rng.integers(0, 64))


# ---------------------------------------------------------------------------
# metric oracles by direct counting, independent of the DET implementation


def brute_force_points(tar, non):
    """Operating points by direct counting at every distinct score and +inf."""
    points = []
    for th in sorted(set(tar) | set(non)) + [float("inf")]:
        p_miss = sum(1 for s in tar if s < th) / len(tar)
        p_fa = sum(1 for s in non if s >= th) / len(non)
        points.append((p_miss, p_fa))
    return points


def brute_force_eer(tar, non):
    points = brute_force_points(tar, non)
    for (m0, f0), (m1, f1) in zip(points, points[1:]):
        if m0 == f0:
            return m0
        if m0 < f0 and m1 >= f1:
            # intersect the segment with the diagonal
            t = (f0 - m0) / ((m1 - m0) - (f1 - f0))
            return m0 + t * (m1 - m0)
    return points[-1][0]


def brute_force_min_cost(tar, non, priors=(0.01, 0.005), c_miss=1.0, c_fa=1.0):
    points = brute_force_points(tar, non)
    out = []
    for p in priors:
        best = min(c_miss * p * m + c_fa * (1 - p) * f for m, f in points)
        out.append(best / min(c_miss * p, c_fa * (1 - p)))
    return sum(out) / len(out)


def random_score_case(rng):
    n = int(rng.integers(2, 201))
    n_tar = int(rng.integers(1, n))
    scores = np.round(rng.standard_normal(n), int(rng.integers(1, 4)))  # rounding creates ties
    scores[:n_tar] += rng.uniform(0, 3)
    return list(scores[:n_tar]), list(scores[n_tar:])


# ---------------------------------------------------------------------------
# PLDA oracle by numerical integration over the latent speaker variable


def quadrature_llr(e, t, mu=0.0, b=1.0, w=1.0):
    def joint(y):
        return stats.norm.pdf(y, mu, np.sqrt(b)) * stats.norm.pdf(e, y, np.sqrt(w)) * stats.norm.pdf(t, y, np.sqrt(w))

    same, _ = integrate.quad(joint, -np.inf, np.inf, epsabs=0, epsrel=1e-12)
    diff = stats.norm.pdf(e, mu, np.sqrt(b + w)) * stats.norm.pdf(t, mu, np.sqrt(b + w))
    return np.log(same) - np.log(diff)


def plda_model_1d(mu=0.0, b=1.0, w=1.0):
    plda = PldaParams(mu=np.array([mu]), between=np.array([[b]]), within=np.array([[w]]))
    return BackendModel(center_mean=np.zeros(1), pca=np.eye(1), lda=np.eye(1), plda=plda)
