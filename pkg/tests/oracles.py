"""Independent reference implementations used only by the tests."""
import numpy as np
from scipy import integrate


def cox_de_boor(knots, p, i, x):
    """Textbook recursive B-spline with 0/0 = 0; right-closed on the last span."""
    knots = np.asarray(knots, float)
    if p == 0:
        if knots[i] <= x < knots[i + 1]:
            return 1.0
        last = x == knots[-1] and knots[i] < knots[i + 1] == knots[-1]
        return 1.0 if last else 0.0
    out = 0.0
    d1 = knots[i + p] - knots[i]
    if d1 > 0:
        out += (x - knots[i]) / d1 * cox_de_boor(knots, p - 1, i, x)
    d2 = knots[i + p + 1] - knots[i + 1]
    if d2 > 0:
        out += (knots[i + p + 1] - x) / d2 * cox_de_boor(knots, p - 1, i + 1, x)
    return out


def cox_de_boor_deriv(knots, p, i, x, r):
    """r-th derivative by the recursive derivative formula."""
    if r == 0:
        return cox_de_boor(knots, p, i, x)
    knots = np.asarray(knots, float)
    out = 0.0
    d1 = knots[i + p] - knots[i]
    if d1 > 0:
        out += p / d1 * cox_de_boor_deriv(knots, p - 1, i, x, r - 1)
    d2 = knots[i + p + 1] - knots[i + 1]
    if d2 > 0:
        out -= p / d2 * cox_de_boor_deriv(knots, p - 1, i + 1, x, r - 1)
    return out


def adaptive_gram(knots, p, idx, r, s, weight=None):
    """int w(x) B_i^(r) B_j^(s) dx by adaptive quadrature, span by span."""
    bp = np.unique(knots)
    n = len(idx)
    out = np.zeros((n, n))
    w = weight or (lambda x: 1.0)
    for a in range(n):
        for b in range(n):
            total = 0.0
            for lo, hi in zip(bp[:-1], bp[1:]):
                val, _ = integrate.quad(
                    lambda x: w(x) * cox_de_boor_deriv(knots, p, idx[a], x, r) * cox_de_boor_deriv(knots, p, idx[b], x, s),
                    lo, hi, epsabs=1e-14, epsrel=1e-13)
                total += val
            out[a, b] = total
    return out


def reference_cg(A, b, tol, maxiter):
    """Plain unpreconditioned CG returning every iterate."""
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rr = r @ r
    iterates = []
    for _ in range(maxiter):
        Ap = A @ p
        alpha = rr / (p @ Ap)
        x = x + alpha * p
        r = r - alpha * Ap
        iterates.append(x.copy())
        if np.linalg.norm(r) <= tol * np.linalg.norm(b):
            break
        rr_new = r @ r
        p = r + rr_new / rr * p
        rr = rr_new
    return iterates
