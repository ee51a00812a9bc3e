"""
Exact forward-backward (BCJR) processing in the log domain.

Two trellises live here: the ISI channel itself (MAP equalizer, ``2**L_h``
states) and the rate-1/2 recursive systematic convolutional code with
feedback ``1 + D + D^2`` and parity ``1 + D^2`` (4 states).  Both use the
exact Jacobian logarithm, not max-log.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .channel import make_rng
from .soft_info import clip_llr

__all__ = [
    "MAX_ISI_MEMORY",
    "Interleaver",
    "RscCode",
    "bcjr_decode",
    "bcjr_equalize",
    "rsc_encode",
]

MAX_ISI_MEMORY = 10


@numba.njit(cache=True, nogil=True, inline="always")
def _max_star(a, b):
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    if a > b:
        return a + np.log1p(np.exp(b - a))
    return b + np.log1p(np.exp(a - b))


# ---------------------------------------------------------------------------
# ISI channel trellis
# ---------------------------------------------------------------------------


@numba.njit(cache=True, nogil=True)
def _branch_metrics(r, taps, noise_variance, la, n_sym, n, out):
    # out[s, u]: channel term plus half the a priori term; -inf for forbidden
    lh = taps.size - 1
    n_states = 1 << lh
    inv2n0 = 1.0 / (2.0 * noise_variance)
    interior = n >= lh and n < n_sym
    for s in range(n_states):
        past = 0.0
        for k in range(1, lh + 1):
            m = n - k
            if interior or (0 <= m < n_sym):
                # state bit k-1 set means x[n-k] = -1
                past += taps[k] * (1.0 - 2.0 * ((s >> (k - 1)) & 1))
        for u in range(2):
            if n >= n_sym:
                if u == 1:
                    out[s, u] = -np.inf
                    continue
                e = r[n] - past
                out[s, u] = -e * e * inv2n0
            else:
                x = 1.0 - 2.0 * u
                e = r[n] - past - taps[0] * x
                out[s, u] = -e * e * inv2n0 + 0.5 * la[n] * x


@numba.njit(cache=True, nogil=True)
def _isi_bcjr(r, taps, noise_variance, la, n_sym):
    lh = taps.size - 1
    n_states = 1 << lh
    mask = n_states - 1
    half = n_states >> 1
    n_steps = n_sym + lh
    g = np.empty((n_states, 2))

    # guard symbols before the packet are masked out of the branch outputs,
    # so a uniform start over all states is exact
    alpha = np.empty((n_steps + 1, n_states))
    alpha[0, :] = 0.0
    for n in range(n_steps):
        _branch_metrics(r, taps, noise_variance, la, n_sym, n, g)
        top = -np.inf
        for ns in range(n_states):
            u = ns & 1
            s0 = ns >> 1
            s1 = s0 | half
            v = _max_star(alpha[n, s0] + g[s0, u], alpha[n, s1] + g[s1, u])
            alpha[n + 1, ns] = v
            if v > top:
                top = v
        for ns in range(n_states):
            alpha[n + 1, ns] -= top

    beta = np.zeros(n_states)
    new_beta = np.empty(n_states)
    terms = np.empty((n_states, 2))
    ext = np.zeros(n_sym)
    for n in range(n_steps - 1, -1, -1):
        _branch_metrics(r, taps, noise_variance, la, n_sym, n, g)
        top = -np.inf
        for s in range(n_states):
            b0 = g[s, 0] + beta[(s << 1) & mask]
            b1 = g[s, 1] + beta[((s << 1) | 1) & mask]
            v = _max_star(b0, b1)
            new_beta[s] = v
            if v > top:
                top = v
            if n < n_sym:
                terms[s, 0] = alpha[n, s] + b0
                terms[s, 1] = alpha[n, s] + b1
        if n < n_sym:
            # extrinsic: drop the a priori half-LLR carried by each branch
            l0 = _logsumexp(terms[:, 0]) - 0.5 * la[n]
            l1 = _logsumexp(terms[:, 1]) + 0.5 * la[n]
            ext[n] = l0 - l1
        for s in range(n_states):
            beta[s] = new_beta[s] - top
    return ext


@numba.njit(cache=True, nogil=True)
def _logsumexp(v):
    m = -np.inf
    for x in v:
        if x > m:
            m = x
    if m == -np.inf:
        return m
    acc = 0.0
    for x in v:
        acc += np.exp(x - m)
    return m + np.log(acc)


def bcjr_equalize(r, taps, noise_variance, llr_apriori) -> np.ndarray:
    """MAP equalizer: extrinsic LLRs of all symbols of a packet.

    Parameters
    ----------
    r : array_like
        Received samples, ``len(llr_apriori) + L_h`` of them (shorter input
        is zero-padded, longer input truncated).
    taps : array_like
        Channel impulse response assumed by the receiver.
    noise_variance : float
        Noise variance assumed by the receiver.
    llr_apriori : array_like
        A priori LLR per symbol.

    Returns
    -------
    ndarray
        A posteriori LLR minus a priori LLR, clipped.
    """
    taps = np.ascontiguousarray(taps, dtype=np.float64)
    lh = taps.size - 1
    if lh > MAX_ISI_MEMORY:
        raise ValueError(f"channel memory {lh} exceeds {MAX_ISI_MEMORY}")
    if not noise_variance > 0:
        raise ValueError("noise_variance must be positive")
    la = clip_llr(llr_apriori)
    n_sym = la.size
    r = np.asarray(r, dtype=np.float64)
    r_full = np.zeros(n_sym + lh)
    avail = min(r.size, r_full.size)
    r_full[:avail] = r[:avail]
    return clip_llr(_isi_bcjr(r_full, taps, float(noise_variance), la, n_sym))


# ---------------------------------------------------------------------------
# Recursive systematic convolutional code
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RscCode:
    """Rate-1/2 RSC code, feedback 1+D+D^2, parity 1+D^2, 2 tail steps."""

    n_states: int = 4
    memory: int = 2

    @staticmethod
    def step(state: int, u: int) -> tuple[int, int]:
        """Return ``(next_state, parity)``; state packs ``(a[k-1], a[k-2])``."""
        a1, a2 = state & 1, (state >> 1) & 1
        a = u ^ a1 ^ a2
        return (a | (a1 << 1)), a ^ a2

    @staticmethod
    def tail_input(state: int) -> int:
        return (state & 1) ^ ((state >> 1) & 1)

    def coded_length(self, msg_len: int) -> int:
        return 2 * (msg_len + self.memory)


def rsc_encode(msg) -> np.ndarray:
    """Encode and terminate; output is ``[u0, p0, u1, p1, ...]`` with tails."""
    msg = np.asarray(msg, dtype=np.int64)
    code = RscCode()
    out = np.empty(code.coded_length(msg.size), dtype=np.int8)
    state = 0
    for k, u in enumerate(msg):
        state, p = code.step(state, int(u))
        out[2 * k], out[2 * k + 1] = u, p
    for t in range(code.memory):
        u = code.tail_input(state)
        state, p = code.step(state, u)
        k = msg.size + t
        out[2 * k], out[2 * k + 1] = u, p
    assert state == 0
    return out


def _rsc_tables():
    code = RscCode()
    nxt = np.empty((4, 2), dtype=np.int64)
    par = np.empty((4, 2), dtype=np.int64)
    for s in range(4):
        for u in range(2):
            nxt[s, u], par[s, u] = code.step(s, u)
    return nxt, par


_NEXT, _PARITY = _rsc_tables()


@numba.njit(cache=True, nogil=True)
def _rsc_bcjr(l_sys, l_par, n_msg, nxt, par):
    n_steps = l_sys.size
    alpha = np.full((n_steps + 1, 4), -np.inf)
    alpha[0, 0] = 0.0

    def allowed(k, s, u):
        if k < n_msg:
            return True
        # tail steps must drive the feedback register to zero
        return u == ((s & 1) ^ ((s >> 1) & 1))

    for k in range(n_steps):
        for s in range(4):
            a = alpha[k, s]
            if a == -np.inf:
                continue
            for u in range(2):
                if not allowed(k, s, u):
                    continue
                p = par[s, u]
                g = 0.5 * (l_sys[k] * (1 - 2 * u) + l_par[k] * (1 - 2 * p))
                ns = nxt[s, u]
                alpha[k + 1, ns] = _max_star(alpha[k + 1, ns], a + g)
        top = -np.inf
        for s in range(4):
            top = max(top, alpha[k + 1, s])
        for s in range(4):
            alpha[k + 1, s] -= top

    beta = np.full(4, -np.inf)
    beta[0] = 0.0
    new_beta = np.empty(4)
    post_sys = np.zeros(n_steps)
    post_par = np.zeros(n_steps)
    for k in range(n_steps - 1, -1, -1):
        u0 = -np.inf
        u1 = -np.inf
        p0 = -np.inf
        p1 = -np.inf
        for s in range(4):
            new_beta[s] = -np.inf
        for s in range(4):
            for u in range(2):
                if not allowed(k, s, u):
                    continue
                p = par[s, u]
                ns = nxt[s, u]
                g = 0.5 * (l_sys[k] * (1 - 2 * u) + l_par[k] * (1 - 2 * p))
                new_beta[s] = _max_star(new_beta[s], g + beta[ns])
                t = alpha[k, s] + g + beta[ns]
                if u == 0:
                    u0 = _max_star(u0, t)
                else:
                    u1 = _max_star(u1, t)
                if p == 0:
                    p0 = _max_star(p0, t)
                else:
                    p1 = _max_star(p1, t)
        post_sys[k] = u0 - u1
        post_par[k] = p0 - p1
        top = -np.inf
        for s in range(4):
            top = max(top, new_beta[s])
        for s in range(4):
            beta[s] = new_beta[s] - top
    return post_sys, post_par


def bcjr_decode(coded_llr, n_msg=None):
    """Soft-in soft-out decoding of the terminated RSC code.

    Parameters
    ----------
    coded_llr : array_like
        Channel LLRs of ``[u0, p0, u1, p1, ...]`` including the tail pairs
        (``+`` favours bit 0).
    n_msg : int, optional
        Message length; defaults to ``len(coded_llr) // 2 - 2``.

    Returns
    -------
    extrinsic : ndarray
        Extrinsic LLR of every coded bit, same layout as the input.
    message_llr : ndarray
        A posteriori LLR of each message bit.
    """
    llr = clip_llr(coded_llr)
    if llr.size % 2 or llr.size < 4:
        raise ValueError("coded LLR length must be even and include the tail")
    n_steps = llr.size // 2
    if n_msg is None:
        n_msg = n_steps - RscCode.memory
    if n_msg + RscCode.memory != n_steps:
        raise ValueError(f"{llr.size} coded LLRs do not frame {n_msg} message bits")
    l_sys = np.ascontiguousarray(llr[0::2])
    l_par = np.ascontiguousarray(llr[1::2])
    post_sys, post_par = _rsc_bcjr(l_sys, l_par, n_msg, _NEXT, _PARITY)
    ext = np.empty_like(llr)
    ext[0::2] = post_sys - l_sys
    ext[1::2] = post_par - l_par
    return clip_llr(ext), clip_llr(post_sys[:n_msg])


# ---------------------------------------------------------------------------
# Interleaver
# ---------------------------------------------------------------------------


class Interleaver:
    """Random permutation; ``interleave(s)[i] = s[perm[i]]``."""

    def __init__(self, perm):
        perm = np.asarray(perm, dtype=np.int64)
        if not np.array_equal(np.sort(perm), np.arange(perm.size)):
            raise ValueError("not a permutation")
        self.perm = perm
        self.inverse = np.argsort(perm)

    @classmethod
    def random(cls, size: int, seed=None) -> "Interleaver":
        return cls(make_rng(seed).permutation(size))

    @classmethod
    def identity(cls, size: int) -> "Interleaver":
        return cls(np.arange(size))

    def __len__(self):
        return self.perm.size

    def _check(self, seq):
        seq = np.asarray(seq)
        if seq.shape[0] != self.perm.size:
            raise ValueError(f"length {seq.shape[0]} does not match interleaver {self.perm.size}")
        return seq

    def interleave(self, seq) -> np.ndarray:
        return self._check(seq)[self.perm]

    def deinterleave(self, seq) -> np.ndarray:
        return self._check(seq)[self.inverse]
