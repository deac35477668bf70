"""Independent reference computations used only by the tests."""

import math

import numpy as np
from scipy.linalg import cho_factor, cho_solve


def trig_basis(m):
    """Real orthonormal trigonometric basis of grid functions on m^3 nodes.

    Returns (Phi, modes, self_conjugate): Phi[:, a] is the a-th basis
    function (mean of its square is 1), modes[a] the integer wavevector
    in [-m/2, m/2) per axis.
    """
    idx = np.arange(m)
    J = np.stack(np.meshgrid(idx, idx, idx, indexing="ij"), axis=-1).reshape(-1, 3)
    half = m // 2
    cols, modes, selfc = [], [], []
    seen = set()
    for n in np.ndindex(m, m, m):
        n = tuple(((np.asarray(n) + half) % m) - half)
        conj = tuple(((-np.asarray(n) + half) % m) - half)
        if n in seen:
            continue
        seen.add(n)
        seen.add(conj)
        theta = 2 * math.pi * (J @ np.asarray(n)) / m
        if conj == n:
            cols.append(np.cos(theta))
            modes.append(n)
            selfc.append(True)
        else:
            cols.append(math.sqrt(2) * np.cos(theta))
            cols.append(math.sqrt(2) * np.sin(theta))
            modes += [n, n]
            selfc += [False, False]
    return np.stack(cols, axis=1), np.asarray(modes), np.asarray(selfc)


def dense_brinkman(rho, j, L, pinned):
    """Galerkin solve of the discrete Brinkman problem in an explicit divergence-free basis.

    Builds the dense matrix of (grad u, grad w) + 6 pi (rho u, w) over
    basis fields phi(x) a with a orthogonal to the (Nyquist-zeroed)
    wavevector, and solves it by Cholesky.
    """
    m = rho.shape[0]
    Phi, modes, _ = trig_basis(m)
    scale = 2 * math.pi / (2 * L)
    k2 = np.sum((modes * scale) ** 2, axis=1)
    kt = np.where(modes == -(m // 2), 0, modes).astype(float)
    col, dirs = [], []
    for a, t in enumerate(kt):
        if pinned and not np.any(modes[a]):
            continue
        if not np.any(t):
            D = np.eye(3)
        else:
            # orthonormal complement of t
            q, _ = np.linalg.qr(np.column_stack([t, np.eye(3)]))
            D = q[:, 1:3].T
        for d in D:
            col.append(a)
            dirs.append(d)
    col = np.asarray(col)
    dirs = np.asarray(dirs)
    r = 6 * math.pi * rho.ravel()
    S = (Phi.T * r) @ Phi / m**3
    K = S[np.ix_(col, col)]
    K *= dirs @ dirs.T
    K[np.diag_indices_from(K)] += k2[col]
    J = Phi.T @ (6 * math.pi * j.reshape(3, -1).T) / m**3
    rhs = np.sum(dirs * J[col], axis=1)
    coef = cho_solve(cho_factor(K), rhs)
    u = np.stack([Phi[:, col] @ (coef * dirs[:, c]) for c in range(3)])
    return u.reshape(3, m, m, m)


def graph_neumann_eigenvalue(delta, m):
    """Second-smallest eigenvalue of the graph Laplacian of the annulus cells, by shift-invert Lanczos.

    Cells of [-1, 1]^3 (m per side) outside the open cube of half width
    1 - 1/delta, joined to their face neighbours; the Laplacian is scaled
    by 1/h^2.
    """
    import scipy.sparse as sp
    from scipy.sparse.csgraph import laplacian
    from scipy.sparse.linalg import eigsh

    h = 2.0 / m
    c = -1 + h / 2 + h * np.arange(m)
    X = np.stack(np.meshgrid(c, c, c, indexing="ij"), -1)
    keep = (np.max(np.abs(X), -1) > 1 - 1 / delta).ravel()
    P = sp.diags([1, 1], [-1, 1], shape=(m, m))
    eye = sp.identity(m)
    adj = (sp.kron(sp.kron(P, eye), eye) + sp.kron(sp.kron(eye, P), eye) + sp.kron(sp.kron(eye, eye), P)).tocsr()
    adj = adj[keep][:, keep]
    lap = laplacian(adj).tocsc() / h**2
    w = eigsh(lap, k=2, sigma=-1.0, which="LM", return_eigenvectors=False)
    return float(sorted(w)[1])


def cube_distance_cdf(r):
    """P(|X - Y| < r) for X, Y independent uniform on the unit cube, 0 <= r <= 1."""
    return 4 * math.pi / 3 * r**3 - 3 * math.pi / 2 * r**4 + 8 / 5 * r**5 - r**6 / 6


def two_point_frequency(alpha, draws, seed, conditioned):
    """Fraction of pairs of uniform points of the unit cube closer than 2^-alpha.

    With ``conditioned`` the pairs closer than 1 (overlapping spheres of
    radius 1/2) are discarded first.
    """
    rng = np.random.default_rng(seed)
    d = np.linalg.norm(rng.random((draws, 3)) - rng.random((draws, 3)), axis=1)
    if conditioned:
        d = d[d > 1.0]
    return float(np.mean(d < 2.0**-alpha)) if len(d) else math.nan
