"""Classical inversion of the shift-invariant camera model.

All solvers share the forward operator of :mod:`maskcam.forward` (linear
convolution, centered PSF) and are pure functions: same inputs, bitwise
same outputs. Multi-channel images are processed channel by channel with
the matching PSF channel.

Numerical breakdown (singular systems, diverging iterates, conditioning
guards) raises :class:`NumericalError`; bad arguments raise ValueError.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from maskcam.core import with_channel_axis
from maskcam.forward import (
    convolve_lsi,
    convolve_lsi_adjoint,
    padded_shape,
    rolled_psf_fft,
    _psf_array,
)


class NumericalError(RuntimeError):
    """A computation failed numerically (singularity, divergence, guard)."""


def soft_threshold(v, beta):
    """Shrinkage operator: per element (|v| - beta)+ * sign(v)."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    v = np.asarray(v)
    return np.sign(v) * np.maximum(np.abs(v) - beta, 0.0)


def tv_grad_ops():
    """Forward-difference gradient and its adjoint, Neumann boundary.

    Returns (apply, adjoint). ``apply`` maps (H, W) to (H, W, 2) with the
    row difference in channel 0 and the column difference in channel 1;
    the last difference along each axis is 0 (replicate boundary).
    ``adjoint`` is the exact dot-product adjoint (negative divergence).
    """

    def apply(x):
        x = np.asarray(x, dtype=float)
        g = np.zeros(x.shape + (2,))
        g[:-1, :, 0] = x[1:, :] - x[:-1, :]
        g[:, :-1, 1] = x[:, 1:] - x[:, :-1]
        return g

    def adjoint(g):
        g = np.asarray(g, dtype=float)
        out = np.zeros(g.shape[:2])
        gr = g[:, :, 0]
        gc = g[:, :, 1]
        out[1:, :] += gr[:-1, :]
        out[:-1, :] -= gr[:-1, :]
        out[:, 1:] += gc[:, :-1]
        out[:, :-1] -= gc[:, :-1]
        return out

    return apply, adjoint


def power_iteration_lipschitz(forward, adjoint, shape, iters=20, seed=0):
    """Largest eigenvalue of A^T A estimated by power iteration."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=shape)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = adjoint(forward(v))
        norm = np.linalg.norm(w)
        if norm == 0:
            return 0.0
        lam = norm
        v = w / norm
    return float(lam)


@dataclass(frozen=True)
class WienerParams:
    """Frequency-domain regularizer: scalar K or per-frequency grid R.

    A grid must match the padded spectrum shape (scene + psf - 1 per
    axis) and be nonnegative everywhere.
    """

    reg: object = 1e-3

    def __post_init__(self):
        reg = self.reg
        if np.isscalar(reg):
            if reg < 0:
                raise ValueError("scalar reg must be nonnegative")
        else:
            reg = np.asarray(reg, dtype=float)
            if reg.ndim != 2 or reg.min() < 0:
                raise ValueError("grid reg must be a nonnegative 2D array")
            object.__setattr__(self, "reg", reg)


def wiener_filter(meas, psf, params):
    """Closed-form deconvolution: X = P* Y / (|P|^2 + R) per channel.

    Operates on the zero-padded grid so the division sees the same OTF
    that produced the measurement, then crops back to the measurement
    window. Raises :class:`NumericalError` if any denominator bin is
    (near) zero - e.g. scalar reg 0 with a zero of the OTF.
    """
    meas3, had_c = with_channel_axis(meas)
    psf3, _ = with_channel_axis(_psf_array(psf))
    if psf3.shape[2] not in (1, meas3.shape[2]):
        raise ValueError("psf/measurement channel mismatch")
    out = np.empty(meas3.shape)
    for c in range(meas3.shape[2]):
        pc = psf3[:, :, min(c, psf3.shape[2] - 1)]
        out[:, :, c] = _wiener_channel(meas3[:, :, c], pc, params.reg)
    return out if had_c else out[:, :, 0]


def _wiener_channel(meas2d, psf2d, reg):
    sh, sw = meas2d.shape
    grid = padded_shape(meas2d.shape, psf2d.shape)
    r0 = (grid[0] - sh) // 2
    c0 = (grid[1] - sw) // 2
    padded = np.zeros(grid)
    padded[r0 : r0 + sh, c0 : c0 + sw] = meas2d
    otf = rolled_psf_fft(psf2d, grid)
    if not np.isscalar(reg) and reg.shape != grid:
        raise ValueError(f"reg grid shape {reg.shape} != padded shape {grid}")
    denom = np.abs(otf) ** 2 + reg
    if denom.min() <= 1e-15 * max(denom.max(), 1.0):
        raise NumericalError("singular frequency bin: |P|^2 + R is ~0 somewhere")
    spectrum = np.conj(otf) * np.fft.fft2(padded) / denom
    est = np.fft.ifft2(spectrum).real
    return est[r0 : r0 + sh, c0 : c0 + sw]


def direct_inverse(sys, y):
    """Solve the assumed dense system (h + delta) x = y exactly.

    Requires a square system with condition number below 1e12; singular
    or near-singular matrices raise :class:`NumericalError` instead of
    returning garbage.
    """
    a = sys.assumed
    if a.shape[0] != a.shape[1]:
        raise ValueError("direct inversion needs a square system")
    y = np.asarray(y, dtype=float).ravel()
    if y.size != a.shape[0]:
        raise ValueError(f"y has {y.size} entries, system expects {a.shape[0]}")
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > 1e12:
        raise NumericalError(f"system is singular or near-singular (cond={cond:.3g})")
    return np.linalg.solve(a, y)


@dataclass(frozen=True)
class IstaParams:
    """Proximal-gradient settings for the TV-regularized least squares.

    alpha: gradient step; None picks 1/L from a power-iteration estimate.
    beta: TV weight (0 disables the prox entirely).
    accelerated: FISTA momentum on/off (off = plain ISTA).
    tv_inner_iters: iterations of the inner dual solver for the TV prox.
    """

    alpha: float = None
    beta: float = 0.0
    iterations: int = 100
    accelerated: bool = True
    tv_inner_iters: int = 30

    def __post_init__(self):
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.tv_inner_iters < 1:
            raise ValueError("tv_inner_iters must be >= 1")


def _tv_prox(v, kappa, iters, warm=None):
    """prox of kappa * ||D x||_1 at v, via the dual projected gradient.

    Maximizes the dual of min_x 0.5||x - v||^2 + kappa||Dx||_1 over the
    box ||p||_inf <= kappa with Nesterov momentum; 1/8 bounds the norm of
    D D^T for 2D forward differences. Returns (x, dual) so callers can
    warm-start the next prox.
    """
    apply_d, adjoint_d = tv_grad_ops()
    p = np.zeros(v.shape + (2,)) if warm is None else warm.copy()
    q = p.copy()
    t = 1.0
    for _ in range(iters):
        grad = apply_d(v - adjoint_d(q))
        p_new = np.clip(q + 0.125 * grad, -kappa, kappa)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        q = p_new + ((t - 1.0) / t_new) * (p_new - p)
        p, t = p_new, t_new
    return v - adjoint_d(p), p


def tv_objective(x, y, psf2d, beta):
    apply_d, _ = tv_grad_ops()
    resid = convolve_lsi(x, psf2d) - y
    return 0.5 * float(np.sum(resid**2)) + beta * float(np.abs(apply_d(x)).sum())


def fista_tv(meas, psf, params, return_history=False):
    """Minimize 0.5||Hx - y||^2 + beta ||Dx||_1 by (accelerated) ISTA.

    Starts from x = 0; the final objective never exceeds the starting
    one. If ``params.alpha`` exceeds the stability bound 1/L the solver
    warns and backs off to 1/L. With ``return_history`` the per-iteration
    total objective (summed over channels) is returned alongside the
    estimate.
    """
    meas3, had_c = with_channel_axis(meas)
    psf3, _ = with_channel_axis(_psf_array(psf))
    if psf3.shape[2] not in (1, meas3.shape[2]):
        raise ValueError("psf/measurement channel mismatch")
    out = np.empty(meas3.shape)
    histories = []
    for c in range(meas3.shape[2]):
        pc = psf3[:, :, min(c, psf3.shape[2] - 1)]
        est, hist = _fista_channel(meas3[:, :, c], pc, params)
        out[:, :, c] = est
        histories.append(hist)
    result = out if had_c else out[:, :, 0]
    if return_history:
        total = np.sum(np.asarray(histories), axis=0)
        return result, list(total)
    return result


def _fista_channel(y, psf2d, params):
    lip = power_iteration_lipschitz(
        lambda v: convolve_lsi(v, psf2d),
        lambda v: convolve_lsi_adjoint(v, psf2d),
        y.shape,
        iters=20,
    )
    bound = 1.0 / lip if lip > 0 else 1.0
    alpha = params.alpha if params.alpha is not None else bound
    if alpha > bound:
        warnings.warn(
            f"step {alpha:.3g} exceeds the stability bound {bound:.3g}; backing off",
            stacklevel=3,
        )
        alpha = bound
    x = np.zeros_like(y, dtype=float)
    z = x.copy()
    t = 1.0
    dual = None
    history = [tv_objective(x, y, psf2d, params.beta)]
    for _ in range(params.iterations):
        grad = convolve_lsi_adjoint(convolve_lsi(z, psf2d) - y, psf2d)
        v = z - alpha * grad
        if params.beta > 0:
            x_new, dual = _tv_prox(v, alpha * params.beta, params.tv_inner_iters, dual)
        else:
            x_new = v
        if params.accelerated:
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            z = x_new + ((t - 1.0) / t_new) * (x_new - x)
            t = t_new
        else:
            z = x_new
        x = x_new
        history.append(tv_objective(x, y, psf2d, params.beta))
    return x, history


@dataclass(frozen=True)
class AdmmParams:
    """Penalties and schedule for the TV + nonnegativity ADMM.

    Defaults follow the standard open-source configuration for
    DiffuserCam-style reconstruction (mu1=1e-6, mu2=1e-5, mu3=4e-5,
    tau=1e-4, 100 iterations). ``per_iteration_overrides`` maps an
    iteration index (0-based) to replacement values for any of
    mu1/mu2/mu3/tau from that iteration on - the "unrolled" schedule as
    plain data.
    """

    mu1: float = 1e-6
    mu2: float = 1e-5
    mu3: float = 4e-5
    tau: float = 1e-4
    iterations: int = 100
    per_iteration_overrides: dict = field(default=None)

    def __post_init__(self):
        for name in ("mu1", "mu2", "mu3", "tau"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.per_iteration_overrides is not None:
            for k, over in self.per_iteration_overrides.items():
                if int(k) < 0:
                    raise ValueError("override iteration indices must be >= 0")
                unknown = set(over) - {"mu1", "mu2", "mu3", "tau"}
                if unknown:
                    raise ValueError(f"unknown override keys {sorted(unknown)}")
                if any(val <= 0 for val in over.values()):
                    raise ValueError("override values must be positive")

    def schedule(self):
        """(mu1, mu2, mu3, tau) for each iteration, overrides applied."""
        current = [self.mu1, self.mu2, self.mu3, self.tau]
        names = ("mu1", "mu2", "mu3", "tau")
        overrides = {int(k): v for k, v in (self.per_iteration_overrides or {}).items()}
        out = []
        for k in range(self.iterations):
            if k in overrides:
                for i, name in enumerate(names):
                    if name in overrides[k]:
                        current[i] = overrides[k][name]
            out.append(tuple(current))
        return out


def admm_tv(meas, psf, params):
    """ADMM with splits for TV sparsity, nonnegativity, and sensor crop.

    The estimate lives on the zero-padded grid where convolution is
    circular; a crop variable ties it to the measurement window, exactly
    mirroring the forward model of convolve_lsi. Runs exactly
    ``params.iterations`` iterations and returns the nonnegative center
    window. Divergence (non-finite iterate) raises
    :class:`NumericalError` naming the iteration.

    The default penalties were tuned for unit-energy measurements and
    diffuse unit-energy PSFs, whose DC gain (l1 over l2 norm) is large.
    Each channel is normalized to that regime internally - PSF and
    measurement scaled to unit energy, compact PSFs lifted to a minimum
    DC gain - and the output is mapped back, so the defaults behave
    consistently from delta to diffuser PSFs and across intensity
    scales.
    """
    meas3, had_c = with_channel_axis(meas)
    psf3, _ = with_channel_axis(_psf_array(psf))
    if psf3.shape[2] not in (1, meas3.shape[2]):
        raise ValueError("psf/measurement channel mismatch")
    out = np.empty(meas3.shape)
    for c in range(meas3.shape[2]):
        pc = psf3[:, :, min(c, psf3.shape[2] - 1)]
        out[:, :, c] = _admm_channel(meas3[:, :, c], pc, params)
    return out if had_c else out[:, :, 0]


def _circ_diff(x, axis):
    return np.roll(x, -1, axis=axis) - x


def _circ_diff_adjoint(g, axis):
    return np.roll(g, 1, axis=axis) - g


# Minimum DC gain (l1/l2 norm ratio) for the normalized operator. Below
# this the mu1 data term is too weak for the defaults to converge in a
# typical iteration budget; diffuse PSFs sit far above it untouched.
_MIN_OPERATOR_GAIN = 50.0


def _admm_channel(y, psf2d, params):
    sh, sw = y.shape
    psf_energy = float(np.linalg.norm(psf2d))
    meas_energy = float(np.linalg.norm(y))
    if psf_energy == 0.0 or meas_energy == 0.0:
        return np.zeros(y.shape)
    p_work = psf2d / psf_energy
    dc_gain = float(np.abs(p_work).sum())
    lift = max(1.0, _MIN_OPERATOR_GAIN / dc_gain)
    p_work = p_work * lift
    y = y / meas_energy
    gh, gw = padded_shape(y.shape, p_work.shape)
    r0 = (gh - sh) // 2
    c0 = (gw - sw) // 2
    otf = rolled_psf_fft(p_work, (gh, gw))
    otf_sq = np.abs(otf) ** 2
    # circular first-difference power spectra: |e^{2 pi i k / N} - 1|^2
    psi_y = (2.0 * np.sin(np.pi * np.arange(gh) / gh)) ** 2
    psi_x = (2.0 * np.sin(np.pi * np.arange(gw) / gw)) ** 2
    psi_spectrum = psi_y[:, None] + psi_x[None, :]
    window = np.zeros((gh, gw))
    window[r0 : r0 + sh, c0 : c0 + sw] = 1.0
    cty = np.zeros((gh, gw))
    cty[r0 : r0 + sh, c0 : c0 + sw] = y

    x = np.zeros((gh, gw))
    u = np.zeros((gh, gw, 2))
    xi = np.zeros((gh, gw))
    eta = np.zeros((gh, gw, 2))
    rho = np.zeros((gh, gw))
    hx = np.zeros((gh, gw))

    freq_denom = None
    last_mus = None
    for k, (mu1, mu2, mu3, tau) in enumerate(params.schedule()):
        if (mu1, mu2, mu3) != last_mus:
            freq_denom = mu1 * otf_sq + mu2 * psi_spectrum + mu3
            last_mus = (mu1, mu2, mu3)
        grad = np.stack([_circ_diff(x, 0), _circ_diff(x, 1)], axis=2)
        u = soft_threshold(grad + eta / mu2, tau / mu2)
        v = (cty + mu1 * hx + xi) / (window + mu1)
        w = np.maximum(x + rho / mu3, 0.0)
        rhs_spatial = (
            _circ_diff_adjoint(mu2 * u[:, :, 0] - eta[:, :, 0], 0)
            + _circ_diff_adjoint(mu2 * u[:, :, 1] - eta[:, :, 1], 1)
            + mu3 * w
            - rho
        )
        x_hat = (
            np.conj(otf) * np.fft.fft2(mu1 * v - xi) + np.fft.fft2(rhs_spatial)
        ) / freq_denom
        x = np.fft.ifft2(x_hat).real
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"admm diverged at iteration {k}")
        hx = np.fft.ifft2(otf * x_hat).real
        grad = np.stack([_circ_diff(x, 0), _circ_diff(x, 1)], axis=2)
        xi = xi + mu1 * (hx - v)
        eta = eta + mu2 * (grad - u)
        rho = rho + mu3 * (x - w)
    result = np.maximum(x, 0.0)
    back_scale = lift * meas_energy / psf_energy
    return result[r0 : r0 + sh, c0 : c0 + sw] * back_scale
