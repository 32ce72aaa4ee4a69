"""Hot per-timestep recurrence kernels for the two stateful layer families.

Two interchangeable implementations live here:

* a numba ``@njit`` path with explicit loops (default when numba imports), and
* a pure-numpy path vectorized over batch/width with a python loop over time.

Selection: set ``FEDTA_NUMBA=0`` in the environment to force the numpy path;
anything else (or an importable numba) selects the jitted path.  Both paths
are exposed through ``IMPLEMENTATIONS`` so they can be cross-checked and
benchmarked against each other (see ``benchmarks/bench_kernels.py``).

Conventions shared by both paths:

* inputs ``u`` are (batch, time, width) float64,
* LIF state starts at U=0, S=0; the spike emitted at step t is
  S[t+1] = spike(U[t+1]) with U[t+1] = alpha*(U[t] - theta*S[t]) + gain*u[t],
* SSM state starts at x=0; the output at step t uses the pre-update state,
  y[t] = GELU(Re(C x[t]) + Im(C x[t])), then x[t+1] = A*x[t] + B*u[t],
* ``relaxed`` replaces the Heaviside spike with the piecewise-linear ramp
  whose derivative is the boxcar surrogate (used for gradient checking),
* ``detach_reset`` blocks the gradient path through the reset term.

Backward passes accumulate batch reductions in a fixed serial order so a
given backend is bitwise reproducible.
"""

import math
import os

import numpy as np
from scipy.special import erf as _erf

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)

_flag = os.environ.get("FEDTA_NUMBA", "1").strip().lower()
_WANT_NUMBA = _flag not in {"0", "false", "no", "off"}

if _WANT_NUMBA:
    try:
        from numba import njit

        HAS_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        HAS_NUMBA = False
else:
    HAS_NUMBA = False


def gelu(x):
    """Exact (erf-based) GELU, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + _erf(x * _INV_SQRT2))


def gelu_grad(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (1.0 + _erf(x * _INV_SQRT2)) + x * np.exp(-0.5 * x * x) * _INV_SQRT2PI


# ---------------------------------------------------------------------------
# numpy path
# ---------------------------------------------------------------------------


def _spike_np(U, threshold, width, relaxed):
    if relaxed:
        return np.clip((U - threshold + width) / (2.0 * width), 0.0, 1.0)
    return (U >= threshold).astype(np.float64)


def _lif_forward_np(u, alpha, gain, threshold, width, relaxed):
    nb, nt, nh = u.shape
    out = np.empty((nb, nt, nh))
    utrace = np.empty((nb, nt, nh))
    U = np.zeros((nb, nh))
    S = np.zeros((nb, nh))
    for t in range(nt):
        U = alpha * (U - threshold * S) + gain * u[:, t]
        S = _spike_np(U, threshold, width, relaxed)
        utrace[:, t] = U
        out[:, t] = S
    return out, utrace


def _lif_backward_np(gout, utrace, u, alpha, gain, threshold, width,
                     relaxed, detach_reset, tied_gain):
    nb, nt, nh = u.shape
    gu = np.empty((nb, nt, nh))
    galpha = np.zeros(nh)
    inv2w = 1.0 / (2.0 * width)
    lam = np.zeros((nb, nh))
    for t in range(nt - 1, -1, -1):
        un = utrace[:, t]
        d = (np.abs(un - threshold) <= width) * inv2w
        if detach_reset:
            lam = gout[:, t] * d + alpha * lam
        else:
            lam = gout[:, t] * d + alpha * (1.0 - threshold * d) * lam
        if t > 0:
            up = utrace[:, t - 1]
            sp = _spike_np(up, threshold, width, relaxed)
        else:
            up = 0.0
            sp = 0.0
        ga = lam * (up - threshold * sp)
        if tied_gain:
            ga = ga - lam * u[:, t]
        galpha += ga.sum(axis=0)
        gu[:, t] = gain * lam
    return gu, galpha


def _ssm_forward_np(u, A, B, C):
    nb, nt, nh = u.shape
    nstate = A.shape[1]
    x = np.zeros((nb, nh, nstate), dtype=np.complex128)
    xtrace = np.empty((nb, nt, nh, nstate), dtype=np.complex128)
    p = np.empty((nb, nt, nh))
    cp = C.real + C.imag
    cm = C.real - C.imag
    for t in range(nt):
        xtrace[:, t] = x
        p[:, t] = np.einsum("bhn,hn->bh", x.real, cp) + np.einsum("bhn,hn->bh", x.imag, cm)
        x = A * x + B * u[:, t, :, None]
    return gelu(p), p, xtrace


def _ssm_backward_np(gy, p, xtrace, u, A, B, C):
    nb, nt, nh = u.shape
    gp = gy * gelu_grad(p)
    lam = np.zeros((nb, nh, A.shape[1]), dtype=np.complex128)
    src = (1.0 + 1.0j) * np.conj(C)
    cA = np.conj(A)
    cB = np.conj(B)
    gA = np.zeros_like(A)
    gB = np.zeros_like(B)
    gC = np.zeros_like(C)
    gu = np.empty((nb, nt, nh))
    for t in range(nt - 1, -1, -1):
        cxt = np.conj(xtrace[:, t])
        gA += np.einsum("bhn,bhn->hn", lam, cxt)
        gB += np.einsum("bhn,bh->hn", lam, u[:, t])
        gu[:, t] = np.einsum("bhn,hn->bh", lam, cB).real
        gC += (1.0 + 1.0j) * np.einsum("bh,bhn->hn", gp[:, t], cxt)
        lam = gp[:, t, :, None] * src + cA * lam
    return gu, gA, gB, gC


NUMPY_IMPL = {
    "lif_forward": _lif_forward_np,
    "lif_backward": _lif_backward_np,
    "ssm_forward": _ssm_forward_np,
    "ssm_backward": _ssm_backward_np,
}

# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

NUMBA_IMPL = None

if HAS_NUMBA:

    @njit(cache=True, nogil=True)
    def _lif_forward_nb(u, alpha, gain, threshold, width, relaxed):
        nb, nt, nh = u.shape
        out = np.empty((nb, nt, nh))
        utrace = np.empty((nb, nt, nh))
        inv2w = 1.0 / (2.0 * width)
        for b in range(nb):
            U = np.zeros(nh)
            S = np.zeros(nh)
            for t in range(nt):
                for h in range(nh):
                    un = alpha[h] * (U[h] - threshold * S[h]) + gain[h] * u[b, t, h]
                    if relaxed:
                        s = (un - threshold + width) * inv2w
                        if s < 0.0:
                            s = 0.0
                        elif s > 1.0:
                            s = 1.0
                    else:
                        s = 1.0 if un >= threshold else 0.0
                    U[h] = un
                    S[h] = s
                    utrace[b, t, h] = un
                    out[b, t, h] = s
        return out, utrace

    @njit(cache=True, nogil=True)
    def _lif_backward_nb(gout, utrace, u, alpha, gain, threshold, width,
                         relaxed, detach_reset, tied_gain):
        nb, nt, nh = u.shape
        gu = np.empty((nb, nt, nh))
        galpha = np.zeros(nh)
        inv2w = 1.0 / (2.0 * width)
        for b in range(nb):
            lam = np.zeros(nh)
            for t in range(nt - 1, -1, -1):
                for h in range(nh):
                    un = utrace[b, t, h]
                    d = inv2w if abs(un - threshold) <= width else 0.0
                    if detach_reset:
                        l = gout[b, t, h] * d + alpha[h] * lam[h]
                    else:
                        l = gout[b, t, h] * d + alpha[h] * (1.0 - threshold * d) * lam[h]
                    if t > 0:
                        up = utrace[b, t - 1, h]
                        if relaxed:
                            sp = (up - threshold + width) * inv2w
                            if sp < 0.0:
                                sp = 0.0
                            elif sp > 1.0:
                                sp = 1.0
                        else:
                            sp = 1.0 if up >= threshold else 0.0
                    else:
                        up = 0.0
                        sp = 0.0
                    ga = l * (up - threshold * sp)
                    if tied_gain:
                        ga -= l * u[b, t, h]
                    galpha[h] += ga
                    gu[b, t, h] = gain[h] * l
                    lam[h] = l
        return gu, galpha

    @njit(cache=True, nogil=True)
    def _ssm_forward_nb(u, A, B, C):
        nb, nt, nh = u.shape
        nstate = A.shape[1]
        y = np.empty((nb, nt, nh))
        p = np.empty((nb, nt, nh))
        xtrace = np.empty((nb, nt, nh, nstate), dtype=np.complex128)
        for b in range(nb):
            x = np.zeros((nh, nstate), dtype=np.complex128)
            for t in range(nt):
                for h in range(nh):
                    acc = 0.0
                    for n in range(nstate):
                        xv = x[h, n]
                        xtrace[b, t, h, n] = xv
                        c = C[h, n]
                        acc += (c.real + c.imag) * xv.real + (c.real - c.imag) * xv.imag
                    p[b, t, h] = acc
                    y[b, t, h] = 0.5 * acc * (1.0 + math.erf(acc * _INV_SQRT2))
                    uv = u[b, t, h]
                    for n in range(nstate):
                        x[h, n] = A[h, n] * x[h, n] + B[h, n] * uv
        return y, p, xtrace

    @njit(cache=True, nogil=True)
    def _ssm_backward_nb(gy, p, xtrace, u, A, B, C):
        nb, nt, nh = u.shape
        nstate = A.shape[1]
        gA = np.zeros((nh, nstate), dtype=np.complex128)
        gB = np.zeros((nh, nstate), dtype=np.complex128)
        gC = np.zeros((nh, nstate), dtype=np.complex128)
        gu = np.empty((nb, nt, nh))
        one_j = 1.0 + 1.0j
        for b in range(nb):
            lam = np.zeros((nh, nstate), dtype=np.complex128)
            for t in range(nt - 1, -1, -1):
                for h in range(nh):
                    pv = p[b, t, h]
                    phi = math.exp(-0.5 * pv * pv) * _INV_SQRT2PI
                    gp = gy[b, t, h] * (0.5 * (1.0 + math.erf(pv * _INV_SQRT2)) + pv * phi)
                    uv = u[b, t, h]
                    gu_acc = 0.0
                    for n in range(nstate):
                        l = lam[h, n]
                        cx = np.conj(xtrace[b, t, h, n])
                        gA[h, n] += l * cx
                        gB[h, n] += l * uv
                        gu_acc += (l * np.conj(B[h, n])).real
                        gC[h, n] += one_j * gp * cx
                        lam[h, n] = gp * one_j * np.conj(C[h, n]) + np.conj(A[h, n]) * l
                    gu[b, t, h] = gu_acc
        return gu, gA, gB, gC

    NUMBA_IMPL = {
        "lif_forward": _lif_forward_nb,
        "lif_backward": _lif_backward_nb,
        "ssm_forward": _ssm_forward_nb,
        "ssm_backward": _ssm_backward_nb,
    }

IMPLEMENTATIONS = {"numpy": NUMPY_IMPL}
if NUMBA_IMPL is not None:
    IMPLEMENTATIONS["numba"] = NUMBA_IMPL

USING_NUMBA = NUMBA_IMPL is not None
_ACTIVE = NUMBA_IMPL if USING_NUMBA else NUMPY_IMPL


def _f8(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _c16(a):
    return np.ascontiguousarray(a, dtype=np.complex128)


def lif_forward(u, alpha, gain, threshold=1.0, width=0.5, relaxed=False):
    """Run the LIF recurrence over a (batch, time, width) input block.

    Returns (spikes, membrane trace); the trace holds U[t+1] for each step and
    is what the backward pass consumes.
    """
    return _ACTIVE["lif_forward"](_f8(u), _f8(alpha), _f8(gain),
                                  float(threshold), float(width), bool(relaxed))


def lif_backward(gout, utrace, u, alpha, gain, threshold=1.0, width=0.5,
                 relaxed=False, detach_reset=True, tied_gain=True):
    """Reverse-mode pass matching :func:`lif_forward`.

    ``tied_gain`` means the input gain is (1 - alpha), so d(gain)/d(alpha) = -1
    contributes to the alpha gradient.  Returns (grad wrt input, grad wrt alpha).
    """
    return _ACTIVE["lif_backward"](_f8(gout), _f8(utrace), _f8(u), _f8(alpha),
                                   _f8(gain), float(threshold), float(width),
                                   bool(relaxed), bool(detach_reset), bool(tied_gain))


def ssm_forward(u, A, B, C):
    """Run the diagonal linear recurrence; returns (outputs, pre-activations, state trace)."""
    return _ACTIVE["ssm_forward"](_f8(u), _c16(A), _c16(B), _c16(C))


def ssm_backward(gy, p, xtrace, u, A, B, C):
    """Reverse-mode pass matching :func:`ssm_forward`.

    Complex gradients are carriers: real part is the gradient wrt the real
    part of the parameter, imaginary part wrt the imaginary part.
    Returns (grad wrt input, gA, gB, gC).
    """
    return _ACTIVE["ssm_backward"](_f8(gy), _f8(p), _c16(xtrace), _f8(u),
                                   _c16(A), _c16(B), _c16(C))
