"""Error decompositions for reconstruction under a wrong system model.

Every routine here answers the same question for one inversion scheme:
if the measurement came from system H but the solver believed Hhat =
H + Delta, how does the estimate split into a clean part, a term driven
by the model error, and a term where the error couples into the noise?

The Wiener, gradient-step, and ADMM-step splits are exact algebraic
identities; their residual is round-off. The direct-inversion split is
first order, with a residual that provably shrinks quadratically in
||Delta||. Everything runs at dense oracle scale (vectors up to a few
hundred entries), small enough to check against brute-force solves.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from maskcam.recover import NumericalError, soft_threshold

_MAX_ORACLE_DIM = 256


@dataclass(frozen=True)
class MismatchTerms:
    """One estimate split as clean + model_mismatch + noise_amp + residual."""

    clean_estimate: np.ndarray
    model_mismatch_term: np.ndarray
    noise_amplification_term: np.ndarray
    residual: np.ndarray

    def __post_init__(self):
        shape = np.shape(self.clean_estimate)
        for name in ("model_mismatch_term", "noise_amplification_term", "residual"):
            arr = getattr(self, name)
            if np.shape(arr) != shape:
                raise ValueError(f"{name} shape {np.shape(arr)} != {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
        if not np.all(np.isfinite(self.clean_estimate)):
            raise ValueError("clean_estimate contains non-finite entries")

    @property
    def noisy_estimate(self):
        return (
            self.clean_estimate
            + self.model_mismatch_term
            + self.noise_amplification_term
            + self.residual
        )

    def relative_residual(self):
        denom = np.linalg.norm(np.ravel(self.noisy_estimate))
        if denom == 0:
            return 0.0 if np.linalg.norm(np.ravel(self.residual)) == 0 else np.inf
        return float(np.linalg.norm(np.ravel(self.residual)) / denom)


def _square_system(sys):
    h = sys.h
    delta = sys.delta if sys.delta is not None else np.zeros_like(h)
    if sys.crop is not None:
        s = sys.selection_matrix()
        h = s @ h
        delta = s @ delta
    return h, delta


def _check_oracle_dim(n):
    if n > _MAX_ORACLE_DIM:
        raise ValueError(
            f"decomposition oracle is limited to dim {_MAX_ORACLE_DIM}, got {n}"
        )


# ------------------------------------------------------------------ direct


def direct_inversion_decomposition(sys, x, n):
    """First-order split of Hhat^{-1} y around the true inverse.

    y = H x + n but the inversion solves with Hhat = H + Delta:

        Hhat^{-1} y = x - H^{-1} Delta x + (I - H^{-1} Delta) H^{-1} n + r

    where r collects the second-and-higher-order Neumann terms, so
    ||r|| = O(||Delta||^2). Requires H invertible and spectral radius of
    H^{-1} Delta below 1 (otherwise the expansion is meaningless).
    """
    h, delta = _square_system(sys)
    if h.shape[0] != h.shape[1]:
        raise ValueError("direct inversion needs a square system")
    _check_oracle_dim(h.shape[0])
    x = np.asarray(x, dtype=float).ravel()
    n = np.asarray(n, dtype=float).ravel()
    if x.size != h.shape[1] or n.size != h.shape[0]:
        raise ValueError("x/n dimensions do not match the system")
    cond = np.linalg.cond(h)
    if not np.isfinite(cond) or cond > 1e12:
        raise NumericalError(f"true system is near-singular (cond={cond:.3g})")
    hinv_delta = np.linalg.solve(h, delta)
    radius = np.max(np.abs(np.linalg.eigvals(hinv_delta)))
    if radius >= 1.0:
        raise NumericalError(
            f"spectral radius of H^-1 Delta is {radius:.3g} >= 1; expansion diverges"
        )
    hinv_n = np.linalg.solve(h, n)
    clean = x
    mismatch = -hinv_delta @ x
    noise_amp = hinv_n - hinv_delta @ hinv_n
    exact = np.linalg.solve(h + delta, h @ x + n)
    residual = exact - clean - mismatch - noise_amp
    return MismatchTerms(clean, mismatch, noise_amp, residual)


def direct_inversion_residual_slope(sys, x, n, octaves=3):
    """Log-log slope of the residual norm as Delta is halved repeatedly.

    Evaluates the decomposition at Delta, Delta/2, ..., spanning
    ``octaves`` octaves, and fits log2||r|| against log2(scale). The
    quadratic remainder shows up as a slope of 2.
    """
    if sys.delta is None or not np.any(sys.delta):
        raise ValueError("slope probe needs a nonzero delta")
    scales = [0.5**k for k in range(octaves + 1)]
    norms = []
    for s in scales:
        scaled = dataclasses.replace(sys, delta=sys.delta * s)
        terms = direct_inversion_decomposition(scaled, x, n)
        norms.append(np.linalg.norm(terms.residual))
    if min(norms) == 0:
        raise NumericalError("residual vanished; slope undefined")
    slope = np.polyfit(np.log2(scales), np.log2(norms), 1)[0]
    return float(slope)


# ------------------------------------------------------------------ wiener


def _field(arr):
    if hasattr(arr, "samples"):
        arr = arr.samples
    return np.asarray(arr, dtype=complex)


def wiener_decomposition(p, delta_p, x, n, reg):
    """Exact per-bin split of the Wiener estimate built from P + Delta_P.

    With Y = P X + N, B = |P|^2 + R and

        Delta_B = |Delta_P|^2 + conj(Delta_P) P + conj(P) Delta_P
        M = conj(Delta_P)/B - Delta_B (conj(P) + conj(Delta_P)) / (B^2 + B Delta_B)

    the perturbed estimate satisfies, with no truncation,

        conj(P+Delta_P) Y / (|P+Delta_P|^2 + R) = clean + M P X + M N.

    Returns (terms, M). All arrays are per-frequency-bin and elementwise,
    so any common shape works.
    """
    p = _field(p)
    delta_p = _field(delta_p)
    x = _field(x)
    n = _field(n)
    reg = np.asarray(reg, dtype=float) if not np.isscalar(reg) else float(reg)
    b = np.abs(p) ** 2 + reg
    if np.min(b) <= 0:
        raise NumericalError("B = |P|^2 + R must be positive in every bin")
    delta_b = np.abs(delta_p) ** 2 + np.conj(delta_p) * p + np.conj(p) * delta_p
    b_noisy = b + delta_b
    if np.min(np.abs(b_noisy)) <= 1e-300:
        raise NumericalError("B + Delta_B vanishes in some bin")
    y = p * x + n
    clean = np.conj(p) * y / b
    m = np.conj(delta_p) / b - delta_b * (np.conj(p) + np.conj(delta_p)) / (
        b**2 + b * delta_b
    )
    mismatch = m * p * x
    noise_amp = m * n
    p_hat = p + delta_p
    noisy = np.conj(p_hat) * y / (np.abs(p_hat) ** 2 + reg)
    residual = noisy - clean - mismatch - noise_amp
    return MismatchTerms(clean, mismatch, noise_amp, residual), m


# ------------------------------------------------------------------ gd step


def gd_step_decomposition(sys, x, n, x_prev, alpha):
    """Exact split of one least-squares gradient step under Hhat.

    Clean step: xc = x_prev - alpha H^T (H x_prev - y) with y = H x + n.
    The step taken with Hhat = H + Delta satisfies exactly

        x_noisy = xc + alpha (Delta^T H x - delta_H x_prev + Delta^T n)

    with delta_H = Delta^T H + Hhat^T Delta. Works for rectangular
    systems; crop is folded into H and Delta when present.
    """
    _, noisy, terms = _gd_paths(sys, x, n, x_prev, alpha)
    return terms


def _gd_paths(sys, x, n, x_prev, alpha):
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    h, delta = _square_system(sys)
    _check_oracle_dim(max(h.shape))
    x = np.asarray(x, dtype=float).ravel()
    n = np.asarray(n, dtype=float).ravel()
    x_prev = np.asarray(x_prev, dtype=float).ravel()
    if x.size != h.shape[1] or x_prev.size != h.shape[1] or n.size != h.shape[0]:
        raise ValueError("x/x_prev/n dimensions do not match the system")
    hhat = h + delta
    y = h @ x + n
    clean = x_prev - alpha * (h.T @ (h @ x_prev - y))
    delta_h = delta.T @ h + hhat.T @ delta
    mismatch = alpha * (delta.T @ (h @ x) - delta_h @ x_prev)
    noise_amp = alpha * (delta.T @ n)
    noisy = x_prev - alpha * (hhat.T @ (hhat @ x_prev - y))
    residual = noisy - clean - mismatch - noise_amp
    return clean, noisy, MismatchTerms(clean, mismatch, noise_amp, residual)


def prox_step_mismatch(sys, x, n, x_prev, alpha, beta):
    """Shrinkage applied on top of the GD-step split.

    Thresholds both the clean and the perturbed gradient step with
    T_beta and reports which elements were zeroed in both - entries
    where the thresholding discarded the accumulated mismatch outright.
    The mismatch/noise terms are inherited from the linear step; the
    residual absorbs the (nonlinear) thresholding difference, so it is
    only small where the threshold did not bind differently. beta = 0
    reduces to gd_step_decomposition exactly.

    Returns (terms, discarded) with ``discarded`` a boolean mask.
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    clean_step, noisy_step, linear = _gd_paths(sys, x, n, x_prev, alpha)
    clean_prox = soft_threshold(clean_step, beta)
    noisy_prox = soft_threshold(noisy_step, beta)
    residual = (
        noisy_prox
        - clean_prox
        - linear.model_mismatch_term
        - linear.noise_amplification_term
    )
    terms = MismatchTerms(
        clean_prox,
        linear.model_mismatch_term,
        linear.noise_amplification_term,
        residual,
    )
    discarded = (noisy_prox == 0) & (clean_prox == 0)
    return terms, discarded


# ------------------------------------------------------------------ admm step


@dataclass(frozen=True)
class AdmmStepContext:
    """Frozen state for one x-update of the cropped-sensor ADMM.

    The same previous-iterate state (x_prev, the n-space dual xi of the
    v-split, and the delta-free additive bundle ``aux`` collecting the
    remaining splits' contributions) is fed to a step built on the true
    system and to one built on hhat = true + delta_h; the decomposition
    is exact for that pair. ``noise`` lives in the cropped measurement
    space, ``x_true`` in scene space.
    """

    hhat: np.ndarray
    delta_h: np.ndarray
    c: np.ndarray
    rho_x: float
    rho_y: float
    rho_z: float
    x_prev: np.ndarray
    aux: np.ndarray
    dual_xi: np.ndarray
    noise: np.ndarray
    x_true: np.ndarray

    def __post_init__(self):
        hhat = np.asarray(self.hhat, dtype=float)
        object.__setattr__(self, "hhat", hhat)
        ndim = hhat.shape[0]
        if hhat.ndim != 2 or hhat.shape[0] != hhat.shape[1]:
            raise ValueError("hhat must be square")
        _check_oracle_dim(ndim)
        for name, shape in (
            ("delta_h", (ndim, ndim)),
            ("x_prev", (ndim,)),
            ("aux", (ndim,)),
            ("dual_xi", (ndim,)),
            ("x_true", (ndim,)),
        ):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
            object.__setattr__(self, name, arr)
        c = np.asarray(self.c, dtype=float)
        if c.ndim != 2 or c.shape[1] != ndim:
            raise ValueError(f"c must be (k, {ndim})")
        object.__setattr__(self, "c", c)
        noise = np.asarray(self.noise, dtype=float).ravel()
        if noise.size != c.shape[0]:
            raise ValueError("noise must live in the cropped space (k,)")
        object.__setattr__(self, "noise", noise)
        for name in ("rho_x", "rho_y", "rho_z"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def h_true(self):
        return self.hhat - self.delta_h

    def measurement(self):
        return self.c @ (self.h_true @ self.x_true) + self.noise


def _admm_x_update(a, ctx, y, g):
    """One v-then-x update with system matrix ``a`` from the frozen state."""
    v = g @ (ctx.c.T @ y + ctx.dual_xi + ctx.rho_x * (a @ ctx.x_prev))
    normal = (
        ctx.rho_x * a.T @ a
        + ctx.rho_z * ctx.c.T @ ctx.c
        + ctx.rho_y * np.eye(a.shape[0])
    )
    return np.linalg.solve(normal, a.T @ (ctx.rho_x * v - ctx.dual_xi) + ctx.aux)


def admm_step_decomposition(ctx):
    """Exact split of one ADMM x-update run with hhat instead of H.

    Both paths start from the identical frozen state, so the difference
    between the hhat-step and the H-step is pure algebra:

        x_noisy = x_clean - W1^{-1} rho_x delta_H x_clean
                  + W4 W2 (C^T C H x_true + gamma) + W4 W3   (model mismatch)
                  + W4 W2 C^T noise                          (noise amplification)

    with W1 = rho_x hhat^T hhat + rho_z C^T C + rho_y I,
    delta_H = Delta^T H + hhat^T Delta, G = (C^T C + rho_x I)^{-1},
    W2 = (W1 - rho_x delta_H)^{-1} rho_x Delta^T G,
    W3 = (W1 - rho_x delta_H)^{-1} rho_x^2 hhat^T G Delta x_prev,
    W4 = I - W1^{-1} rho_x delta_H, and
    gamma = rho_x H x_prev - C^T C dual_xi / rho_x.

    Returns (terms, mats) where mats carries W1..W4 and delta_H. The
    residual is round-off; delta_h = 0 collapses W2, W3 to zero and W4
    to I, giving bitwise-equal paths.
    """
    h = ctx.h_true
    delta = ctx.delta_h
    hhat = ctx.hhat
    ndim = hhat.shape[0]
    eye = np.eye(ndim)
    ctc = ctx.c.T @ ctx.c
    g = np.linalg.inv(ctc + ctx.rho_x * eye)
    y = ctx.measurement()

    x_clean = _admm_x_update(h, ctx, y, g)
    x_noisy = _admm_x_update(hhat, ctx, y, g)

    delta_h_mat = delta.T @ h + hhat.T @ delta
    w1 = ctx.rho_x * hhat.T @ hhat + ctx.rho_z * ctc + ctx.rho_y * eye
    w_clean = w1 - ctx.rho_x * delta_h_mat
    for name, mat in (("W1", w1), ("clean-path normal matrix", w_clean)):
        cond = np.linalg.cond(mat)
        if not np.isfinite(cond) or cond > 1e10:
            raise NumericalError(f"{name} is ill-conditioned (cond={cond:.3g})")

    w2 = np.linalg.solve(w_clean, ctx.rho_x * delta.T @ g)
    w3 = np.linalg.solve(
        w_clean, ctx.rho_x**2 * hhat.T @ (g @ (delta @ ctx.x_prev))
    )
    w4 = eye - np.linalg.solve(w1, ctx.rho_x * delta_h_mat)

    gamma = ctx.rho_x * h @ ctx.x_prev - ctc @ ctx.dual_xi / ctx.rho_x
    mismatch = (
        -np.linalg.solve(w1, ctx.rho_x * delta_h_mat @ x_clean)
        + w4 @ (w2 @ (ctc @ (h @ ctx.x_true) + gamma))
        + w4 @ w3
    )
    noise_amp = w4 @ (w2 @ (ctx.c.T @ ctx.noise))
    residual = x_noisy - x_clean - mismatch - noise_amp
    terms = MismatchTerms(x_clean, mismatch, noise_amp, residual)
    mats = {"W1": w1, "W2": w2, "W3": w3, "W4": w4, "delta_H": delta_h_mat}
    return terms, mats
