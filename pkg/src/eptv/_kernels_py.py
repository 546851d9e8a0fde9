"""Vectorised NumPy kernels for 1-D tilted moments (fallback backend).

Every function takes arrays ``m`` (cavity mean of the gradient) and ``c``
(cavity variance, > 0) plus scalar prior hyperparameters, and returns
``(mean, variance, abs_mean)`` of the normalised density
``N(u; m, c) * phi(u)``.

The compiled module ``_kernels`` implements the same arithmetic.
"""
import numpy as np
from scipy.special import erf, erfc, erfcx, expit

SQRT2 = np.sqrt(2.0)
SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)
# below this standardised truncation point the erfcx closed form is accurate
# to ~1e-13; above it the continued fraction is exact at depth CF_DEPTH
CF_SWITCH = 4.0
CF_DEPTH = 50
TINY = 1e-300


def log_erfcx(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = np.log(erfcx(x[pos]))
    xn = x[~pos]
    out[~pos] = xn * xn + np.log(erfc(xn))
    return out


def half_normal_moments(alpha):
    """Mean and variance of ``N(-alpha, 1)`` restricted to ``[0, inf)``."""
    alpha = np.asarray(alpha, dtype=float)
    mean = np.empty_like(alpha)
    var = np.empty_like(alpha)
    lo = alpha < CF_SWITCH
    a = alpha[lo]
    h = SQRT_2_OVER_PI / erfcx(a / SQRT2)
    mean[lo] = h - a
    var[lo] = 1.0 + a * h - h * h
    hi = ~lo
    if hi.any():
        a = alpha[hi]
        # Laplace continued fraction for the Mills ratio, c_k = 1/(a + k c_{k+1});
        # mean = c_2 and var = c_2^2 c_3 (a + 4 c_3 - 3 c_4) avoid all cancellation
        ck = np.zeros_like(a)
        c3 = c4 = None
        for k in range(CF_DEPTH, 1, -1):
            ck = 1.0 / (a + k * ck)
            if k == 4:
                c4 = ck
            elif k == 3:
                c3 = ck
        mean[hi] = ck
        var[hi] = ck * ck * c3 * (a + 4.0 * c3 - 3.0 * c4)
    return mean, var


def folded_mean(mu, var):
    """``E|u|`` for ``u ~ N(mu, var)``; ``var`` may be zero."""
    mu = np.asarray(mu, dtype=float)
    var = np.asarray(var, dtype=float)
    sd = np.sqrt(var)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = mu / (sd * SQRT2)
        out = sd * SQRT_2_OVER_PI * np.exp(-z * z) + mu * erf(z)
    return np.where(sd > 0, out, np.abs(mu))


def l1tv_moments(m, c, lam):
    m = np.asarray(m, dtype=float)
    c = np.asarray(c, dtype=float)
    if lam == 0.0:
        return m.copy(), c.copy(), folded_mean(m, c)
    s = np.sqrt(c)
    z = m / s
    lam_s = lam * s
    # u > 0 branch is N(m - lam c, c) on [0, inf); u < 0 branch mirrors it
    a_pos = lam_s - z
    a_neg = lam_s + z
    l_pos = log_erfcx(a_pos / SQRT2)
    l_neg = log_erfcx(a_neg / SQRT2)
    w_pos = expit(l_pos - l_neg)
    w_neg = expit(l_neg - l_pos)
    w_pos[w_pos < TINY] = 0.0
    w_neg[w_neg < TINY] = 0.0
    t_pos, v_pos = half_normal_moments(a_pos)
    t_neg, v_neg = half_normal_moments(a_neg)
    m_pos = s * t_pos
    m_neg = -s * t_neg
    mean = w_pos * m_pos + w_neg * m_neg
    diff = m_pos - m_neg
    var = c * (w_pos * v_pos + w_neg * v_neg) + w_pos * w_neg * diff * diff
    abs_mean = w_pos * m_pos - w_neg * m_neg
    return mean, var, abs_mean


def gauss_mixture_moments(m, c, omega, s1_sq, s2_sq):
    """Two zero-mean Gaussian components; ``s2_sq == 0`` gives a point mass."""
    m = np.asarray(m, dtype=float)
    c = np.asarray(c, dtype=float)
    t1 = c + s1_sq
    t2 = c + s2_sq
    with np.errstate(divide="ignore"):
        log_w1 = np.log(omega)
        log_w2 = np.log1p(-omega)
    l1 = log_w1 - 0.5 * np.log(t1) - 0.5 * m * m / t1
    l2 = log_w2 - 0.5 * np.log(t2) - 0.5 * m * m / t2
    with np.errstate(invalid="ignore"):
        r1 = expit(l1 - l2)
        r2 = expit(l2 - l1)
    r1[r1 < TINY] = 0.0
    r2[r2 < TINY] = 0.0
    mu1 = m * (s1_sq / t1)
    mu2 = m * (s2_sq / t2)
    v1 = c * (s1_sq / t1)
    v2 = c * (s2_sq / t2)
    mean = r1 * mu1 + r2 * mu2
    d = mu1 - mu2
    var = r1 * v1 + r2 * v2 + r1 * r2 * d * d
    abs_mean = r1 * folded_mean(mu1, v1) + r2 * folded_mean(mu2, v2)
    return mean, var, abs_mean


def mog2_moments(m, c, omega, s1_sq, s2_sq):
    return gauss_mixture_moments(m, c, omega, s1_sq, s2_sq)


def bg_moments(m, c, omega, s_sq):
    return gauss_mixture_moments(m, c, omega, s_sq, 0.0)
