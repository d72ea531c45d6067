"""Möbius-group utilities for the constant-curvature backend.

Deck transformations are stored as real unit-determinant 2x2 matrices
acting on the upper half-plane ``Im z > 0``. They act on the Poincaré disk
through the Cayley map ``zeta = (z - i) / (z + i)``.

Default generators
------------------
The default deck group is the side-pairing group of the regular hyperbolic
octagon with interior angles pi/4 (genus two). In the disk each generator is
a translation along a diameter, conjugated by a rotation::

    g_k = R(k*pi/4) T R(-k*pi/4),   k = 0, 1, 2, 3
    T   = [[cosh(l/2), sinh(l/2)], [sinh(l/2), cosh(l/2)]],
    cosh(l/2) = 1 + sqrt(2),   l = 2*arccosh(1 + sqrt(2)) ~ 3.0571

with ``R(phi) = diag(exp(i phi/2), exp(-i phi/2))``. Their upper-half-plane
real forms are returned by :func:`octagon_generators` (letters ``a, b, c,
d``; upper-case letters denote inverses in words).
"""

from __future__ import annotations

import numpy as np

CAYLEY = np.array([[1.0, -1.0j], [1.0, 1.0j]])
CAYLEY_INV = np.array([[1.0j, 1.0j], [-1.0, 1.0]])  # i(1+zeta)/(1-zeta), up to scale


def _normalize(m):
    m = np.asarray(m, dtype=complex)
    return m / np.sqrt(np.linalg.det(m))


def mobius(m, z):
    m = np.asarray(m)
    return (m[0, 0] * z + m[0, 1]) / (m[1, 0] * z + m[1, 1])


def mobius_derivative(m, z):
    m = np.asarray(m)
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    return det / (m[1, 0] * z + m[1, 1]) ** 2


def sl2_to_disk(a):
    """Disk form ``C A C^{-1}`` of a real SL(2) matrix, determinant one."""
    return _normalize(CAYLEY @ np.asarray(a, dtype=complex) @ np.linalg.inv(CAYLEY))


def disk_to_sl2(m):
    a = np.linalg.inv(CAYLEY) @ np.asarray(m, dtype=complex) @ CAYLEY
    a = _normalize(a)
    if np.max(np.abs(a.imag)) > 1e-9 * max(1.0, np.max(np.abs(a))):
        # a global factor of i is allowed in PSL(2)
        a = a * 1j
    if np.max(np.abs(a.imag)) > 1e-9 * max(1.0, np.max(np.abs(a))):
        raise ValueError("matrix does not preserve the disk")
    return a.real


def translation_length(a):
    """Translation length ``2*arccosh(|tr|/2)`` of a hyperbolic element."""
    tr = abs(float(np.trace(np.asarray(a, dtype=float))))
    if tr <= 2.0:
        raise ValueError(f"element is not hyperbolic (|trace| = {tr})")
    return 2.0 * np.arccosh(tr / 2.0)


def octagon_generators():
    """Real SL(2) side-pairings of the regular genus-two octagon."""
    ch = 1.0 + np.sqrt(2.0)
    sh = np.sqrt(ch ** 2 - 1.0)
    t = np.array([[ch, sh], [sh, ch]], dtype=complex)
    gens = {}
    for k, name in enumerate("abcd"):
        phi = k * np.pi / 4.0
        r = np.diag([np.exp(0.5j * phi), np.exp(-0.5j * phi)])
        gens[name] = disk_to_sl2(r @ t @ np.linalg.inv(r))
    return gens


def word_matrix(word, generators):
    """Product of generators along ``word``; upper case means inverse."""
    if not word:
        raise ValueError("empty word")
    out = np.eye(2)
    for letter in word:
        g = generators.get(letter.lower())
        if g is None:
            raise ValueError(f"unknown generator {letter!r}")
        g = np.asarray(g, dtype=float)
        if letter.isupper():
            g = np.array([[g[1, 1], -g[0, 1]], [-g[1, 0], g[0, 0]]])
        out = out @ g
    return out


def reduce_word(word):
    """Free and cyclic reduction of a word (``aA`` cancels)."""
    stack = []
    for letter in word:
        if stack and stack[-1] != letter and stack[-1].lower() == letter.lower():
            stack.pop()
        else:
            stack.append(letter)
    while len(stack) > 1 and stack[0] != stack[-1] and stack[0].lower() == stack[-1].lower():
        stack = stack[1:-1]
    return "".join(stack)


class DiskIsometry:
    """Orientation-preserving isometry of the disk acting on unit tangents.

    A state ``(x1, x2, theta)`` maps to ``(m(zeta), theta + arg m'(zeta))``.
    """

    def __init__(self, disk_matrix):
        self.m = _normalize(disk_matrix)

    @classmethod
    def from_sl2(cls, a):
        return cls(sl2_to_disk(a))

    @classmethod
    def moving_to_origin(cls, zeta0):
        return cls(np.array([[1.0, -zeta0], [-np.conj(zeta0), 1.0]]))

    def apply(self, state):
        state = np.asarray(state, dtype=float)
        zeta = state[..., 0] + 1j * state[..., 1]
        w = mobius(self.m, zeta)
        theta = state[..., 2] + np.angle(mobius_derivative(self.m, zeta))
        return np.stack([w.real, w.imag, theta], axis=-1)

    def jacobian(self, state):
        """3x3 chart Jacobian of :meth:`apply` at a single state."""
        zeta = state[0] + 1j * state[1]
        d1 = mobius_derivative(self.m, zeta)
        c, d = self.m[1, 0], self.m[1, 1]
        ratio = -2.0 * c / (c * zeta + d)  # m''/m'
        return np.array([
            [d1.real, -d1.imag, 0.0],
            [d1.imag, d1.real, 0.0],
            [ratio.imag, ratio.real, 1.0],
        ])


class AxisChart:
    """Holomorphic chart in which a hyperbolic element acts by translation.

    For a hyperbolic ``g`` in SL(2, R) choose ``A`` with ``A g A^{-1}`` equal
    to ``z -> exp(l) z``. The band coordinates ``w = log(A z) = x1 + i x2``,
    ``0 < x2 < pi``, carry the metric ``(dx1^2 + dx2^2) / sin(x2)^2`` and
    ``g`` becomes ``x1 -> x1 + l``. The axis of ``g`` is ``x2 = pi/2``.
    """

    def __init__(self, g):
        g = np.asarray(g, dtype=float)
        if np.trace(g) < 0:
            g = -g
        self.g = g
        self.length = translation_length(g)
        vals, vecs = np.linalg.eig(g)
        order = np.argsort(-np.abs(vals))
        vecs = np.real_if_close(vecs[:, order]).real
        if np.linalg.det(vecs) < 0:
            vecs[:, 1] = -vecs[:, 1]
        p = vecs / np.sqrt(np.linalg.det(vecs))
        self.a = np.linalg.inv(p)

    def disk_to_band(self, state):
        state = np.asarray(state, dtype=float)
        zeta = state[..., 0] + 1j * state[..., 1]
        z = 1j * (1.0 + zeta) / (1.0 - zeta)
        az = mobius(self.a, z)
        w = np.log(az)
        dphi = (1.0 / az) * mobius_derivative(self.a, z) * 2j / (1.0 - zeta) ** 2
        theta = state[..., 2] + np.angle(dphi)
        return np.stack([w.real, w.imag, theta], axis=-1)

    def band_to_disk(self, state):
        state = np.asarray(state, dtype=float)
        w = state[..., 0] + 1j * state[..., 1]
        z = mobius(np.linalg.inv(self.a), np.exp(w))
        zeta = (z - 1j) / (z + 1j)
        az = np.exp(w)
        dphi = (1.0 / az) * mobius_derivative(self.a, z) * 2j / (1.0 - zeta) ** 2
        theta = state[..., 2] - np.angle(dphi)
        return np.stack([zeta.real, zeta.imag, theta], axis=-1)

    def origin_x1(self):
        """Band abscissa of the axis point closest to the disk origin."""
        return float(np.log(mobius(self.a, 1j)).real)
