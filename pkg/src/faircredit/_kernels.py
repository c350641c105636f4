"""Hot numeric loops, compiled with numba when available.

Every kernel has two implementations with identical semantics: a loop form
compiled with ``numba.njit`` and a vectorised numpy form. The numpy path is
used when numba cannot be imported or when the environment variable
``FAIRCREDIT_DISABLE_NUMBA`` is set to anything other than ``""``/``"0"``.
Both forms stay importable so tests and ``benchmarks/bench_kernels.py`` can
compare them directly.
"""

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

DISABLED = os.environ.get("FAIRCREDIT_DISABLE_NUMBA", "") not in ("", "0")
HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not DISABLED

# column order of one confusion row
TP, FP, TN, FN = 0, 1, 2, 3


def _njit(fn):
    if not HAVE_NUMBA:
        return None
    return numba.njit(cache=True, nogil=True)(fn)


# --------------------------------------------------------------------------
# weighted logistic regression, full batch gradient descent
# --------------------------------------------------------------------------

def _logistic_gd_loops(X, y, w, l2, step, max_iter, tol, theta0):
    n, d = X.shape
    theta = theta0.copy()
    grad = np.empty(d + 1)
    hist = np.empty(max_iter + 1)
    n_iter = 0
    converged = False
    for it in range(max_iter + 1):
        for j in range(d + 1):
            grad[j] = 0.0
        loss = 0.0
        for i in range(n):
            z = theta[d]
            for j in range(d):
                z += X[i, j] * theta[j]
            if z > 0.0:
                e = np.exp(-z)
                softplus = z + np.log1p(e)
                p = 1.0 / (1.0 + e)
            else:
                e = np.exp(z)
                softplus = np.log1p(e)
                p = e / (1.0 + e)
            loss += w[i] * (softplus - y[i] * z)
            r = w[i] * (p - y[i])
            for j in range(d):
                grad[j] += r * X[i, j]
            grad[d] += r
        loss /= n
        gnorm = 0.0
        for j in range(d):
            grad[j] = grad[j] / n + l2 * theta[j]
            loss += 0.5 * l2 * theta[j] * theta[j]
            gnorm += grad[j] * grad[j]
        grad[d] /= n
        gnorm += grad[d] * grad[d]
        hist[it] = loss
        n_iter = it
        if np.sqrt(gnorm) < tol:
            converged = True
            break
        if it == max_iter:
            break
        for j in range(d + 1):
            theta[j] -= step * grad[j]
    return theta, n_iter, converged, hist[: n_iter + 1].copy()


def _logistic_gd_numpy(X, y, w, l2, step, max_iter, tol, theta0):
    n, d = X.shape
    theta = theta0.copy()
    hist = np.empty(max_iter + 1)
    n_iter = 0
    converged = False
    for it in range(max_iter + 1):
        z = X @ theta[:d] + theta[d]
        softplus = np.logaddexp(0.0, z)
        p = 0.5 * (1.0 + np.tanh(0.5 * z))
        coef = theta[:d]
        hist[it] = np.dot(w, softplus - y * z) / n + 0.5 * l2 * np.dot(coef, coef)
        r = w * (p - y)
        grad = np.empty(d + 1)
        grad[:d] = X.T @ r / n + l2 * coef
        grad[d] = r.sum() / n
        n_iter = it
        if np.sqrt(np.dot(grad, grad)) < tol:
            converged = True
            break
        if it == max_iter:
            break
        theta -= step * grad
    return theta, n_iter, converged, hist[: n_iter + 1].copy()


_logistic_gd_jit = _njit(_logistic_gd_loops)


def logistic_gd(X, y, w, l2, step, max_iter, tol, theta0):
    """Run fixed-step gradient descent on the weighted, L2-penalised NLL.

    ``X`` is the (already standardised) design matrix without an intercept
    column; ``theta0`` holds ``d`` coefficients followed by the intercept.
    The objective is ``sum(w * nll) / n + l2/2 * |coef|^2`` (intercept not
    penalised). Returns ``(theta, n_iter, converged, loss_history)`` where the
    history holds the objective at every visited iterate.
    """
    args = (
        np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(y, dtype=np.float64),
        np.ascontiguousarray(w, dtype=np.float64),
        float(l2),
        float(step),
        int(max_iter),
        float(tol),
        np.ascontiguousarray(theta0, dtype=np.float64),
    )
    if USE_NUMBA:
        return _logistic_gd_jit(*args)
    return _logistic_gd_numpy(*args)


# --------------------------------------------------------------------------
# per-group confusion counts
# --------------------------------------------------------------------------

def _group_confusion_loops(y, yhat, prot, w):
    out = np.zeros((2, 4))
    for i in range(y.shape[0]):
        g = 1 if prot[i] > 0.5 else 0
        a = yhat[i] * w[i]
        b = (1.0 - yhat[i]) * w[i]
        if y[i] > 0.5:
            out[g, TP] += a
            out[g, FN] += b
        else:
            out[g, FP] += a
            out[g, TN] += b
    return out


def _group_confusion_numpy(y, yhat, prot, w):
    out = np.zeros((2, 4))
    pos = y > 0.5
    a = yhat * w
    b = (1.0 - yhat) * w
    for g in (0, 1):
        m = (prot > 0.5) if g else (prot <= 0.5)
        out[g, TP] = a[m & pos].sum()
        out[g, FN] = b[m & pos].sum()
        out[g, FP] = a[m & ~pos].sum()
        out[g, TN] = b[m & ~pos].sum()
    return out


_group_confusion_jit = _njit(_group_confusion_loops)


def group_confusion(y, yhat, prot, w):
    """Return a (2, 4) array of [TP, FP, TN, FN] for groups (0, 1).

    ``yhat`` may be fractional (expected favourable probability), in which
    case the counts are expectations.
    """
    args = tuple(np.ascontiguousarray(a, dtype=np.float64) for a in (y, yhat, prot, w))
    if USE_NUMBA:
        return _group_confusion_jit(*args)
    return _group_confusion_numpy(*args)


# --------------------------------------------------------------------------
# reject-option grid scan
# --------------------------------------------------------------------------

def _roc_scan_loops(p, y, prot, thresholds, margins):
    nt = thresholds.shape[0]
    nm = margins.shape[0]
    out = np.zeros((nt, nm, 2, 4))
    for a in range(nt):
        t = thresholds[a]
        for b in range(nm):
            m = margins[b]
            for i in range(p.shape[0]):
                g = 1 if prot[i] > 0.5 else 0
                if abs(p[i] - t) <= m:
                    fav = g == 0
                else:
                    fav = p[i] >= t
                if y[i] > 0.5:
                    out[a, b, g, TP if fav else FN] += 1.0
                else:
                    out[a, b, g, FP if fav else TN] += 1.0
    return out


def _roc_scan_numpy(p, y, prot, thresholds, margins):
    t = thresholds[:, None, None]
    m = margins[None, :, None]
    priv = prot > 0.5
    inside = np.abs(p[None, None, :] - t) <= m
    fav = np.where(inside, ~priv[None, None, :], p[None, None, :] >= t)
    pos = y > 0.5
    out = np.zeros((thresholds.shape[0], margins.shape[0], 2, 4))
    for g in (0, 1):
        gm = priv if g else ~priv
        out[:, :, g, TP] = (fav & (gm & pos)).sum(axis=2)
        out[:, :, g, FN] = (~fav & (gm & pos)).sum(axis=2)
        out[:, :, g, FP] = (fav & (gm & ~pos)).sum(axis=2)
        out[:, :, g, TN] = (~fav & (gm & ~pos)).sum(axis=2)
    return out


_roc_scan_jit = _njit(_roc_scan_loops)


def roc_scan(p, y, prot, thresholds, margins):
    """Confusion counts of the reject-option rule over a (threshold, margin) grid.

    Returns an array of shape ``(len(thresholds), len(margins), 2, 4)``.
    """
    args = tuple(
        np.ascontiguousarray(a, dtype=np.float64)
        for a in (p, y, prot, thresholds, margins)
    )
    if USE_NUMBA:
        return _roc_scan_jit(*args)
    return _roc_scan_numpy(*args)


def backend():
    return "numba" if USE_NUMBA else "numpy"
