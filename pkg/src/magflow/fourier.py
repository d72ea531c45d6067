"""Real trigonometric polynomials with exact term-wise derivatives.

A :class:`TrigPolynomial` stores complex coefficients ``c_k`` on integer
modes ``k`` and represents ``f(x) = sum_k c_k exp(i <k * scales, x>)``.
Real-valuedness is encoded by the conjugate symmetry ``c_{-k} = conj(c_k)``.
Derivatives of every order are evaluated exactly from the coefficients, so
no numerical differencing is ever involved.
"""

from __future__ import annotations

import itertools

import numpy as np

TWO_PI = 2.0 * np.pi

# points per evaluation block; bounds the (points x modes) work array
_CHUNK = 4096


def _half_space(mode):
    """True for the lexicographically positive representative of +/- mode."""
    for m in mode:
        if m != 0:
            return m > 0
    return False


class TrigPolynomial:
    """Finite trigonometric polynomial in ``d`` variables.

    Parameters
    ----------
    modes : array_like of int, shape (n, d)
    coeffs : array_like of complex, shape (n,)
    scales : array_like of float, shape (d,)
        Angular frequency of a unit mode along each axis (``2*pi`` for the
        unit torus, ``1`` for an angle variable).
    """

    def __init__(self, modes, coeffs, scales):
        modes = np.asarray(modes, dtype=int)
        coeffs = np.asarray(coeffs, dtype=complex)
        scales = np.asarray(scales, dtype=float)
        if modes.ndim != 2 or modes.shape[0] != coeffs.shape[0]:
            raise ValueError("modes must be (n, d) and match coeffs")
        if modes.shape[1] != scales.shape[0]:
            raise ValueError("scales must have one entry per variable")
        self.modes = modes
        self.coeffs = coeffs
        self.scales = scales
        self._freq = modes * scales

    @property
    def dim(self):
        return self.scales.shape[0]

    @property
    def degree(self):
        """Maximum absolute mode per axis (tuple of int)."""
        if len(self.modes) == 0:
            return (0,) * self.dim
        return tuple(int(v) for v in np.abs(self.modes).max(axis=0))

    def __len__(self):
        return len(self.coeffs)

    def __repr__(self):
        return f"TrigPolynomial(n_terms={len(self)}, degree={self.degree})"

    # construction ---------------------------------------------------------

    @classmethod
    def zero(cls, scales):
        scales = np.asarray(scales, dtype=float)
        return cls(np.zeros((0, len(scales)), dtype=int), np.zeros(0), scales)

    @classmethod
    def constant(cls, value, scales):
        scales = np.asarray(scales, dtype=float)
        return cls(np.zeros((1, len(scales)), dtype=int), [complex(value)], scales)

    @classmethod
    def from_real_terms(cls, terms, scales):
        """Build from real cosine/sine terms.

        ``terms`` is an iterable of ``(mode, a, b)`` meaning
        ``a*cos(<k,x>) + b*sin(<k,x>)``; the zero mode contributes ``a``.
        """
        acc = {}
        for mode, a, b in terms:
            mode = tuple(int(m) for m in mode)
            neg = tuple(-m for m in mode)
            if all(m == 0 for m in mode):
                acc[mode] = acc.get(mode, 0.0) + a
                continue
            acc[mode] = acc.get(mode, 0.0) + 0.5 * (a - 1j * b)
            acc[neg] = acc.get(neg, 0.0) + 0.5 * (a + 1j * b)
        keys = sorted(acc)
        scales = np.asarray(scales, dtype=float)
        if not keys:
            return cls.zero(scales)
        return cls(np.array(keys, dtype=int), [acc[k] for k in keys], scales)

    @classmethod
    def random(cls, rng, max_degree, scales, amplitude=1.0, decay=0.5,
               include_constant=True):
        """Random real trigonometric polynomial.

        ``max_degree`` is an int or one int per axis. Coefficient magnitudes
        decay like ``amplitude * exp(-decay * |k|_1)``.
        """
        scales = np.asarray(scales, dtype=float)
        d = len(scales)
        degs = (max_degree,) * d if np.isscalar(max_degree) else tuple(max_degree)
        acc = {}
        for mode in itertools.product(*[range(-n, n + 1) for n in degs]):
            if all(m == 0 for m in mode):
                if include_constant:
                    acc[mode] = complex(amplitude * rng.standard_normal())
                continue
            if not _half_space(mode):
                continue
            size = amplitude * np.exp(-decay * sum(abs(m) for m in mode))
            c = size * (rng.standard_normal() + 1j * rng.standard_normal()) / np.sqrt(2)
            acc[mode] = c
            acc[tuple(-m for m in mode)] = np.conj(c)
        keys = sorted(acc)
        if not keys:
            return cls.zero(scales)
        return cls(np.array(keys, dtype=int), [acc[k] for k in keys], scales)

    # algebra --------------------------------------------------------------

    def simplified(self, tol=0.0):
        """Merge duplicate modes and drop coefficients with ``|c| <= tol``."""
        acc = {}
        for mode, c in zip(map(tuple, self.modes), self.coeffs):
            acc[mode] = acc.get(mode, 0.0) + c
        keys = sorted(k for k, c in acc.items() if abs(c) > tol)
        if not keys:
            return TrigPolynomial.zero(self.scales)
        return TrigPolynomial(np.array(keys), [acc[k] for k in keys], self.scales)

    def __add__(self, other):
        if np.isscalar(other):
            other = TrigPolynomial.constant(other, self.scales)
        return TrigPolynomial(np.vstack([self.modes, other.modes]),
                              np.concatenate([self.coeffs, other.coeffs]),
                              self.scales).simplified()

    __radd__ = __add__

    def __neg__(self):
        return TrigPolynomial(self.modes, -self.coeffs, self.scales)

    def __sub__(self, other):
        return self + (-other)

    def scaled(self, factor):
        return TrigPolynomial(self.modes, factor * self.coeffs, self.scales)

    def derivative(self, axis, order=1):
        """Exact partial derivative along ``axis``."""
        factor = (1j * self._freq[:, axis]) ** order
        return TrigPolynomial(self.modes, self.coeffs * factor, self.scales).simplified()

    def mean(self):
        """Average over one period cell (the zero-mode coefficient)."""
        zero = np.all(self.modes == 0, axis=1)
        return float(self.coeffs[zero].sum().real)

    def conjugate_residual(self):
        """``max |c_{-k} - conj(c_k)|``; zero for a real polynomial."""
        table = {tuple(m): c for m, c in zip(self.modes, self.coeffs)}
        worst = 0.0
        for mode, c in table.items():
            partner = table.get(tuple(-m for m in mode), 0.0)
            worst = max(worst, abs(partner - np.conj(c)))
        return worst

    # evaluation -----------------------------------------------------------

    def _complex_jet(self, x, order):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected trailing dimension {self.dim}, got {x.shape}")
        lead = x.shape[:-1]
        flat = x.reshape(-1, self.dim)
        npts, d = flat.shape
        val = np.zeros(npts, dtype=complex)
        grad = np.zeros((npts, d), dtype=complex) if order >= 1 else None
        hess = np.zeros((npts, d, d), dtype=complex) if order >= 2 else None
        if len(self.coeffs):
            w = 1j * self._freq
            ww = w[:, :, None] * w[:, None, :]
            for lo in range(0, npts, _CHUNK):
                blk = flat[lo:lo + _CHUNK]
                terms = np.exp(1j * (blk @ self._freq.T)) * self.coeffs
                val[lo:lo + _CHUNK] = terms.sum(axis=1)
                if order >= 1:
                    grad[lo:lo + _CHUNK] = terms @ w
                if order >= 2:
                    hess[lo:lo + _CHUNK] = np.einsum("pn,nij->pij", terms, ww)
        out = [val.reshape(lead)]
        if order >= 1:
            out.append(grad.reshape(lead + (d,)))
        if order >= 2:
            out.append(hess.reshape(lead + (d, d)))
        return out

    def __call__(self, x):
        return self._complex_jet(x, 0)[0].real

    def jet(self, x, order=2):
        """Value and derivatives through ``order`` (0, 1 or 2) at points ``x``.

        Returns a tuple ``(value, grad, hess)`` truncated to ``order``; arrays
        have shapes ``(...)``, ``(..., d)`` and ``(..., d, d)``.
        """
        return tuple(a.real for a in self._complex_jet(x, order))

    def max_imag(self, x):
        """Largest imaginary part of the raw sum at ``x`` (roundoff only)."""
        return float(np.max(np.abs(self._complex_jet(x, 0)[0].imag), initial=0.0))

    # serialization --------------------------------------------------------

    def table(self):
        """Coefficient table rows ``[k_1, ..., k_d, re, im]``."""
        return [[int(v) for v in m] + [float(c.real), float(c.imag)]
                for m, c in zip(self.modes, self.coeffs)]

    @classmethod
    def from_table(cls, rows, scales):
        scales = np.asarray(scales, dtype=float)
        d = len(scales)
        if not rows:
            return cls.zero(scales)
        rows = np.asarray(rows, dtype=float)
        if rows.shape[1] != d + 2:
            raise ValueError(f"table rows need {d + 2} columns")
        return cls(rows[:, :d].astype(int), rows[:, d] + 1j * rows[:, d + 1], scales)


def torus_series(terms=()):
    """Real Fourier series on the unit 2-torus from ``(mode, a, b)`` terms."""
    return TrigPolynomial.from_real_terms(terms, (TWO_PI, TWO_PI))


def periodic_derivative(samples, period=1.0, axis=0):
    """Spectral derivative of uniformly sampled periodic data."""
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[axis]
    k = np.fft.fftfreq(n, d=period / n) * TWO_PI
    if n % 2 == 0:
        k[n // 2] = 0.0
    shape = [1] * samples.ndim
    shape[axis] = n
    spec = np.fft.fft(samples, axis=axis) * (1j * k).reshape(shape)
    return np.fft.ifft(spec, axis=axis).real


def periodic_shift(samples, shift, period=1.0, axis=0):
    """Evaluate uniformly sampled periodic data at ``t + shift`` (band-limited)."""
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[axis]
    k = np.fft.fftfreq(n, d=period / n) * TWO_PI
    phase = np.exp(1j * k * shift)
    if n % 2 == 0:
        phase[n // 2] = np.cos(k[n // 2] * shift)
    shape = [1] * samples.ndim
    shape[axis] = n
    return np.fft.ifft(np.fft.fft(samples, axis=axis) * phase.reshape(shape), axis=axis).real
