"""Real trigonometric polynomials on the 2*pi-periodic torus.

Fields are stored as sparse complex Fourier sums f = sum_k c_k e^{i k.x}
over integer wavevectors k, with c_{-k} = conj(c_k) so values are real.
Differentiation, products and means are exact in this representation,
which is what makes the analytic oracles in the test-suite possible:
smooth data and test functions are evaluated pointwise at quadrature
nodes while their derivatives and L2 norms come from the coefficients.
"""

from __future__ import annotations

import numpy as np

TWO_PI = 2.0 * np.pi
#: Volume of the periodic box (2*pi)^3.
BOX_VOLUME = TWO_PI ** 3

_ZERO3 = (0, 0, 0)


class TrigPoly:
    """Scalar trigonometric polynomial with integer wavevectors."""

    __slots__ = ("modes",)

    def __init__(self, modes=None):
        self.modes = {}
        if modes:
            for k, c in modes.items():
                self._add_mode(k, c)

    def _add_mode(self, k, c):
        k = tuple(int(v) for v in k)
        c = complex(c)
        cur = self.modes.get(k, 0j) + c
        if cur == 0:
            self.modes.pop(k, None)
        else:
            self.modes[k] = cur

    # -- constructors -------------------------------------------------
    @classmethod
    def constant(cls, a):
        return cls({_ZERO3: complex(a)})

    @classmethod
    def cosine(cls, k, amp=1.0):
        """amp * cos(k . x)"""
        k = tuple(int(v) for v in k)
        mk = tuple(-v for v in k)
        return cls({k: 0.5 * amp, mk: 0.5 * amp})

    @classmethod
    def sine(cls, k, amp=1.0):
        """amp * sin(k . x)"""
        k = tuple(int(v) for v in k)
        mk = tuple(-v for v in k)
        return cls({k: -0.5j * amp, mk: 0.5j * amp})

    # -- algebra ------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = TrigPoly.constant(other)
        out = TrigPoly(self.modes)
        for k, c in other.modes.items():
            out._add_mode(k, c)
        return out

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            other = TrigPoly.constant(other)
        return self + (other * -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return TrigPoly({k: c * other for k, c in self.modes.items()})
        out = TrigPoly()
        for k1, c1 in self.modes.items():
            for k2, c2 in other.modes.items():
                out._add_mode((k1[0] + k2[0], k1[1] + k2[1], k1[2] + k2[2]),
                              c1 * c2)
        return out

    __rmul__ = __mul__

    # -- calculus -----------------------------------------------------
    def diff(self, axis) -> "TrigPoly":
        return TrigPoly({k: 1j * k[axis] * c for k, c in self.modes.items()
                         if k[axis] != 0})

    def laplacian(self) -> "TrigPoly":
        return TrigPoly({k: -(k[0] ** 2 + k[1] ** 2 + k[2] ** 2) * c
                         for k, c in self.modes.items()})

    def mean(self) -> float:
        return float(self.modes.get(_ZERO3, 0j).real)

    def l2_norm_sq(self) -> float:
        """Exact integral of f^2 over the box (Parseval)."""
        return BOX_VOLUME * sum(abs(c) ** 2 for c in self.modes.values())

    # -- evaluation ---------------------------------------------------
    def value(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        flat = points.reshape(-1, 3)
        out = np.zeros(flat.shape[0])
        for k, c in self.modes.items():
            phase = flat @ np.asarray(k, dtype=float)
            out += c.real * np.cos(phase) - c.imag * np.sin(phase)
        return out.reshape(points.shape[:-1])

    def grad(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        vals = [self.diff(a).value(points) for a in range(3)]
        return np.stack(vals, axis=-1)

    def sup_norm(self, samples: int = 48) -> float:
        g = np.linspace(0.0, TWO_PI, samples, endpoint=False)
        X = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1)
        return float(np.max(np.abs(self.value(X))))

    def wkinf_norm(self, order: int, samples: int = 48) -> float:
        """max over all partial derivatives up to `order` of their sup norm."""
        best = 0.0
        todo = [((), self)]
        for _ in range(order + 1):
            nxt = []
            for tag, f in todo:
                best = max(best, f.sup_norm(samples))
                for a in range(3):
                    nxt.append((tag + (a,), f.diff(a)))
            todo = nxt
        return best


class TrigVector:
    """Vector field with TrigPoly components."""

    __slots__ = ("components",)

    def __init__(self, components):
        self.components = tuple(components)
        if len(self.components) != 3:
            raise ValueError("need exactly 3 components")

    def value(self, points) -> np.ndarray:
        return np.stack([c.value(points) for c in self.components], axis=-1)

    def jacobian(self, points) -> np.ndarray:
        """J[..., i, j] = d_j f_i"""
        rows = [c.grad(points) for c in self.components]
        return np.stack(rows, axis=-2)

    def divergence(self) -> TrigPoly:
        return (self.components[0].diff(0) + self.components[1].diff(1)
                + self.components[2].diff(2))

    def curl(self) -> "TrigVector":
        f = self.components
        return TrigVector((
            f[2].diff(1) - f[1].diff(2),
            f[0].diff(2) - f[2].diff(0),
            f[1].diff(0) - f[0].diff(1),
        ))

    def dot(self, other: "TrigVector") -> TrigPoly:
        out = TrigPoly()
        for a, b in zip(self.components, other.components):
            out = out + a * b
        return out

    def l2_norm_sq(self) -> float:
        return sum(c.l2_norm_sq() for c in self.components)

    def l2_norm(self) -> float:
        return float(np.sqrt(self.l2_norm_sq()))

    def mean(self):
        return np.array([c.mean() for c in self.components])

    def __mul__(self, scalar):
        return TrigVector([c * scalar for c in self.components])

    __rmul__ = __mul__


_ZERO_POLY = TrigPoly()


def zero_vector() -> TrigVector:
    return TrigVector((_ZERO_POLY, _ZERO_POLY, _ZERO_POLY))


def sine_shear() -> TrigVector:
    """(sin y, 0, 0): divergence-free unidirectional shear."""
    return TrigVector((TrigPoly.sine((0, 1, 0)), TrigPoly(), TrigPoly()))


def tg_like() -> TrigVector:
    """(sin x cos y, -cos x sin y, 0): planar vortex array."""
    return TrigVector((
        TrigPoly.sine((1, 0, 0)) * TrigPoly.cosine((0, 1, 0)),
        TrigPoly.cosine((1, 0, 0)) * TrigPoly.sine((0, 1, 0)) * -1.0,
        TrigPoly(),
    ))


def random_trig(seed: int, degree: int = 2, norm: float | None = None) -> TrigVector:
    """Seeded random divergence-free field, curl of a random potential.

    Modes of the potential run over 0 < |k|_inf <= degree with amplitudes
    damped by 1/(1+|k|^2).  The result has exactly zero divergence and
    zero mean; if `norm` is given the field is rescaled to that L2 norm.
    """
    rng = np.random.default_rng(seed)
    comps = []
    for _ in range(3):
        f = TrigPoly()
        for kx in range(-degree, degree + 1):
            for ky in range(-degree, degree + 1):
                for kz in range(-degree, degree + 1):
                    k = (kx, ky, kz)
                    if k == _ZERO3 or k < tuple(-v for v in k):
                        continue  # one representative per +-k pair
                    damp = 1.0 / (1.0 + kx * kx + ky * ky + kz * kz)
                    a, b = rng.standard_normal(2) * damp
                    f = f + TrigPoly.cosine(k, a) + TrigPoly.sine(k, b)
        comps.append(f)
    u = TrigVector(comps).curl()
    if norm is not None:
        cur = u.l2_norm()
        if cur > 0:
            u = u * (norm / cur)
    return u


_PRESETS = {
    "zero": lambda seed, degree: zero_vector(),
    "sine-shear": lambda seed, degree: sine_shear(),
    "tg-like": lambda seed, degree: tg_like(),
    "random-trig": lambda seed, degree: random_trig(seed, degree),
}


def preset_field(name: str, seed: int = 0, degree: int = 2) -> TrigVector:
    """Named initial-datum presets; all are mean-free and divergence-free."""
    try:
        factory = _PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; "
                         f"choose from {sorted(_PRESETS)}") from None
    return factory(seed, degree)
