"""Truncated real Fourier series on the n-torus.

The central data type is :class:`FourierMap`, a real-valued trigonometric
polynomial T^n -> R^(range_shape) stored as a dictionary of complex
amplitudes.  Only one wavevector of each conjugate pair is kept (the one
whose first nonzero component is positive); the conjugate mode is implied.
That convention halves memory and makes reality structural: a FourierMap
cannot represent a non-real map.

Torus embeddings K(theta) = W theta + P(theta), which wind around the
angle coordinates and therefore are not themselves periodic, are handled
by :class:`TorusEmbedding` (integer winding matrix W plus a periodic
FourierMap P).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np

__all__ = [
    "FourierMap",
    "StripNormEstimate",
    "TorusEmbedding",
    "analyze",
    "average",
    "directional_derivative",
    "strip_norm",
]


def _is_canonical(k: tuple[int, ...]) -> bool:
    for ki in k:
        if ki > 0:
            return True
        if ki < 0:
            return False
    return True  # k == 0


def _neg(k: tuple[int, ...]) -> tuple[int, ...]:
    return tuple(-ki for ki in k)


def _freeze(a: np.ndarray) -> np.ndarray:
    # np.ascontiguousarray would promote 0-d arrays to 1-d; keep the shape
    a = np.array(a, order="C")
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class StripNormEstimate:
    """Certified upper bound for the sup of a map over a complex strip.

    ``value`` is the coefficient bound sum_k |amp(k)| exp(2 pi |k|_1 rho),
    which dominates sup over the strip of half-width rho.  ``grid_max`` is
    the observed maximum on the real sampling grid (a lower bound for the
    true sup).  ``tail_flag`` trips when the last dyadic block of modes
    (|k|_inf > M/2) contributes more than 1e-10 of the total, signalling
    that the truncation order is suspect.
    """

    value: float
    rho: float
    tail_flag: bool
    grid_max: float


class FourierMap:
    """Real trigonometric polynomial on T^n with values in R^(range_shape)."""

    __slots__ = ("dim_domain", "range_shape", "trunc_order", "modes")

    def __init__(
        self,
        dim_domain: int,
        range_shape: tuple[int, ...],
        modes: Mapping[tuple[int, ...], np.ndarray],
        trunc_order: int | None = None,
    ):
        if dim_domain < 1:
            raise ValueError("dim_domain must be >= 1")
        range_shape = tuple(range_shape)
        folded: dict[tuple[int, ...], np.ndarray] = {}
        max_order = 0
        for k, amp in modes.items():
            k = tuple(int(ki) for ki in k)
            if len(k) != dim_domain:
                raise ValueError(f"wavevector {k} has wrong dimension")
            amp = np.asarray(amp, dtype=complex)
            if amp.shape != range_shape:
                raise ValueError(
                    f"amplitude for {k} has shape {amp.shape}, expected {range_shape}"
                )
            kc = k if _is_canonical(k) else _neg(k)
            contrib = amp if kc == k else np.conj(amp)
            if kc in folded:
                folded[kc] = folded[kc] + contrib
                # both k and -k supplied: reality symmetrization averages them
                folded[kc] = folded[kc] / 2.0 if kc != _neg(kc) else folded[kc]
            else:
                folded[kc] = contrib
            max_order = max(max_order, max((abs(ki) for ki in k), default=0))
        zero = (0,) * dim_domain
        if zero in folded:
            folded[zero] = folded[zero].real + 0j
        if trunc_order is None:
            trunc_order = max_order
        if trunc_order < max_order:
            raise ValueError("trunc_order smaller than largest stored mode")
        object.__setattr__(self, "dim_domain", dim_domain)
        object.__setattr__(self, "range_shape", range_shape)
        object.__setattr__(self, "trunc_order", int(trunc_order))
        object.__setattr__(
            self,
            "modes",
            MappingProxyType({k: _freeze(v) for k, v in folded.items()}),
        )

    def __setattr__(self, *a):  # immutable value type
        raise AttributeError("FourierMap is immutable")

    # -- basic queries -------------------------------------------------

    @property
    def dim_range(self) -> int:
        return int(np.prod(self.range_shape)) if self.range_shape else 1

    def amplitude(self, k: Iterable[int]) -> np.ndarray:
        """Complex amplitude of wavevector k (conjugate modes implied)."""
        k = tuple(int(ki) for ki in k)
        if _is_canonical(k):
            a = self.modes.get(k)
            return a.copy() if a is not None else np.zeros(self.range_shape, complex)
        a = self.modes.get(_neg(k))
        return np.conj(a) if a is not None else np.zeros(self.range_shape, complex)

    @property
    def grid_size(self) -> int:
        return 2 * self.trunc_order + 1

    # -- construction from grids ---------------------------------------

    @classmethod
    def from_samples(cls, samples: np.ndarray, dim_domain: int) -> "FourierMap":
        """Discrete Fourier analysis of samples on the uniform odd grid.

        ``samples`` has shape (N, ..., N, *range_shape) with N odd; grid
        point j corresponds to theta = j / N in [0, 1)^n.
        """
        samples = np.asarray(samples, dtype=float)
        if samples.ndim < dim_domain:
            raise ValueError("sample array has fewer axes than dim_domain")
        nshape = samples.shape[:dim_domain]
        if len(set(nshape)) > 1:
            raise ValueError("grid must have equal size per axis")
        size = nshape[0]
        if size % 2 == 0:
            raise ValueError("grid size must be odd")
        m = (size - 1) // 2
        range_shape = samples.shape[dim_domain:]
        axes = tuple(range(dim_domain))
        coeff = np.fft.fftn(samples, axes=axes) / size**dim_domain
        coeff = np.fft.fftshift(coeff, axes=axes)
        modes: dict[tuple[int, ...], np.ndarray] = {}
        for idx in np.ndindex(*nshape):
            k = tuple(i - m for i in idx)
            if not _is_canonical(k):
                continue
            ck = coeff[idx]
            if k == _neg(k):  # k = 0
                amp = ck
            else:
                cm = coeff[tuple(m - ki for ki in k)]
                amp = (ck + np.conj(cm)) / 2.0
            if np.any(amp):
                modes[k] = amp
        return cls(dim_domain, range_shape, modes, trunc_order=m)

    # -- evaluation -----------------------------------------------------

    def _mode_table(self) -> tuple[np.ndarray, np.ndarray]:
        ks = np.array(sorted(self.modes.keys()), dtype=float).reshape(
            len(self.modes), self.dim_domain
        )
        amps = np.stack([self.modes[tuple(int(v) for v in k)] for k in ks])
        return ks, amps

    def __call__(self, theta: np.ndarray) -> np.ndarray:
        """Evaluate at arbitrary points; theta has shape (..., n)."""
        theta = np.asarray(theta, dtype=float)
        scalar_input = theta.shape == (self.dim_domain,)
        pts = np.atleast_2d(theta.reshape(-1, self.dim_domain))
        if not self.modes:
            out = np.zeros((pts.shape[0],) + self.range_shape)
        else:
            ks, amps = self._mode_table()
            phase = np.exp(2j * np.pi * (pts @ ks.T))  # (npts, nmodes)
            weight = np.where(np.all(ks == 0, axis=1), 1.0, 2.0)
            flat = amps.reshape(len(ks), -1)
            # real part of sum_k w_k amp_k e^{2 pi i k.theta}
            out = np.real((phase * weight) @ flat).reshape(
                (pts.shape[0],) + self.range_shape
            )
        shape = theta.shape[:-1] + self.range_shape
        out = out.reshape(shape) if not scalar_input else out.reshape(self.range_shape)
        return out

    def synthesize(self, grid_size: int | None = None) -> np.ndarray:
        """Sample on the uniform grid; inverse of :meth:`from_samples`."""
        size = self.grid_size if grid_size is None else int(grid_size)
        if size % 2 == 0:
            raise ValueError("grid size must be odd")
        m = (size - 1) // 2
        if m < self.trunc_order:
            raise ValueError("grid too small for stored modes")
        n = self.dim_domain
        shape = (size,) * n + self.range_shape
        full = np.zeros(shape, dtype=complex)
        for k, amp in self.modes.items():
            idx = tuple(ki + m for ki in k)
            full[idx] += amp
            if k != _neg(k):
                full[tuple(m - ki for ki in k)] += np.conj(amp)
        axes = tuple(range(n))
        full = np.fft.ifftshift(full, axes=axes)
        vals = np.fft.ifftn(full, axes=axes) * size**n
        return np.real(vals)

    # -- calculus --------------------------------------------------------

    def partial(self, axis: int) -> "FourierMap":
        """Exact partial derivative with respect to theta_axis."""
        modes = {
            k: 2j * np.pi * k[axis] * amp
            for k, amp in self.modes.items()
            if k[axis] != 0
        }
        return FourierMap(self.dim_domain, self.range_shape, modes, self.trunc_order)

    def directional(self, omega: np.ndarray) -> "FourierMap":
        omega = np.asarray(omega, dtype=float)
        modes = {}
        for k, amp in self.modes.items():
            if any(k):
                modes[k] = 2j * np.pi * float(np.dot(k, omega)) * amp
        return FourierMap(self.dim_domain, self.range_shape, modes, self.trunc_order)

    def average(self) -> np.ndarray:
        """Zero mode; reality makes the imaginary part vanish exactly."""
        zero = (0,) * self.dim_domain
        amp = self.modes.get(zero)
        if amp is None:
            return np.zeros(self.range_shape)
        return amp.real.copy()

    # -- norms -----------------------------------------------------------

    def strip_norm(self, rho: float) -> StripNormEstimate:
        """Coefficient bound for the sup over the complex strip of width rho."""
        if rho < 0:
            raise ValueError("rho must be >= 0")
        total = 0.0
        tail = 0.0
        half = self.trunc_order / 2.0
        for k, amp in self.modes.items():
            k1 = sum(abs(ki) for ki in k)
            weight = 1.0 if k == _neg(k) else 2.0
            term = weight * float(np.max(np.abs(amp))) * np.exp(2 * np.pi * k1 * rho)
            total += term
            if max((abs(ki) for ki in k), default=0) > half:
                tail += term
        flag = total > 0 and tail > 1e-10 * total
        return StripNormEstimate(
            value=total, rho=rho, tail_flag=flag, grid_max=self.grid_sup()
        )

    def grid_sup(self) -> float:
        """Max-norm maximum over the native sampling grid."""
        vals = self.synthesize()
        return float(np.max(np.abs(vals))) if vals.size else 0.0

    def power(self) -> float:
        """Sum over all modes of |amp|^2 (Parseval partner of the grid mean)."""
        out = 0.0
        for k, amp in self.modes.items():
            weight = 1.0 if k == _neg(k) else 2.0
            out += weight * float(np.sum(np.abs(amp) ** 2))
        return out

    # -- algebra ----------------------------------------------------------

    def _binary(self, other: "FourierMap", sign: float) -> "FourierMap":
        if (
            other.dim_domain != self.dim_domain
            or other.range_shape != self.range_shape
        ):
            raise ValueError("incompatible FourierMaps")
        modes = dict(self.modes)
        for k, amp in other.modes.items():
            modes[k] = modes.get(k, 0) + sign * amp
        return FourierMap(
            self.dim_domain,
            self.range_shape,
            modes,
            max(self.trunc_order, other.trunc_order),
        )

    def __add__(self, other: "FourierMap") -> "FourierMap":
        return self._binary(other, 1.0)

    def __sub__(self, other: "FourierMap") -> "FourierMap":
        return self._binary(other, -1.0)

    def scaled(self, c: float) -> "FourierMap":
        return FourierMap(
            self.dim_domain,
            self.range_shape,
            {k: c * a for k, a in self.modes.items()},
            self.trunc_order,
        )

    def resized(self, trunc_order: int) -> "FourierMap":
        """Embed into (or truncate to) a different truncation order."""
        modes = {
            k: a
            for k, a in self.modes.items()
            if max((abs(ki) for ki in k), default=0) <= trunc_order
        }
        return FourierMap(self.dim_domain, self.range_shape, modes, trunc_order)

    def shifted(self, theta0: np.ndarray) -> "FourierMap":
        """Precompose with the rigid rotation theta -> theta + theta0."""
        theta0 = np.asarray(theta0, dtype=float)
        modes = {
            k: a * np.exp(2j * np.pi * float(np.dot(k, theta0)))
            for k, a in self.modes.items()
        }
        return FourierMap(self.dim_domain, self.range_shape, modes, self.trunc_order)

    def component(self, index) -> "FourierMap":
        """Extract a scalar component as a FourierMap with range shape ()."""
        modes = {k: np.asarray(a[index]) for k, a in self.modes.items()}
        return FourierMap(self.dim_domain, (), modes, self.trunc_order)

    @classmethod
    def zero(
        cls, dim_domain: int, range_shape: tuple[int, ...], trunc_order: int = 0
    ) -> "FourierMap":
        return cls(dim_domain, range_shape, {}, trunc_order)

    @classmethod
    def constant(cls, value: np.ndarray, dim_domain: int, trunc_order: int = 0):
        value = np.asarray(value, dtype=float)
        zero = (0,) * dim_domain
        return cls(dim_domain, value.shape, {zero: value.astype(complex)}, trunc_order)

    def allclose(self, other: "FourierMap", tol: float = 1e-12) -> bool:
        keys = set(self.modes) | set(other.modes)
        za = np.zeros(self.range_shape, complex)
        return all(
            np.allclose(
                self.modes.get(k, za), other.modes.get(k, za), rtol=0, atol=tol
            )
            for k in keys
        )

    # -- serialization ----------------------------------------------------

    def to_json(self) -> str:
        records = [
            {
                "k": list(k),
                "amp": [
                    [float(z.real), float(z.imag)] for z in np.ravel(self.modes[k])
                ],
            }
            for k in sorted(self.modes.keys())
        ]
        doc = {
            "n": self.dim_domain,
            "m": self.dim_range,
            "range_shape": list(self.range_shape),
            "trunc_order": self.trunc_order,
            "canonical": True,
            "modes": records,
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FourierMap":
        doc = json.loads(text)
        shape = tuple(doc["range_shape"])
        modes = {}
        for rec in doc["modes"]:
            amp = np.array([complex(re, im) for re, im in rec["amp"]]).reshape(shape)
            modes[tuple(rec["k"])] = amp
        return cls(doc["n"], shape, modes, doc["trunc_order"])

    def to_csv(self) -> str:
        """One record per stored mode: wavevector, then (re, im) pairs."""
        out = io.StringIO()
        out.write(
            f"# n={self.dim_domain} m={self.dim_range} "
            f"trunc_order={self.trunc_order} canonical=1\n"
        )
        writer = csv.writer(out)
        header = [f"k{j}" for j in range(self.dim_domain)]
        for j in range(self.dim_range):
            header += [f"re{j}", f"im{j}"]
        writer.writerow(header)
        for k in sorted(self.modes.keys()):
            row = list(k)
            for z in np.ravel(self.modes[k]):
                row += [repr(float(z.real)), repr(float(z.imag))]
            writer.writerow(row)
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str, range_shape: tuple[int, ...] | None = None):
        lines = text.splitlines()
        meta = {}
        for token in lines[0].lstrip("# ").split():
            key, _, val = token.partition("=")
            meta[key] = int(val)
        n, m = meta["n"], meta["m"]
        if range_shape is None:
            range_shape = (m,) if m > 1 else ()
        modes = {}
        for row in csv.reader(lines[2:]):
            if not row:
                continue
            k = tuple(int(v) for v in row[:n])
            vals = [float(v) for v in row[n:]]
            amp = np.array(
                [complex(vals[2 * j], vals[2 * j + 1]) for j in range(m)]
            ).reshape(range_shape)
            modes[k] = amp
        return cls(n, range_shape, modes, meta["trunc_order"])

    def __repr__(self) -> str:
        return (
            f"FourierMap(n={self.dim_domain}, range={self.range_shape}, "
            f"M={self.trunc_order}, {len(self.modes)} stored modes)"
        )


# -- module-level operation names used throughout the package -------------


def analyze(samples: np.ndarray, dim_domain: int) -> FourierMap:
    """Discrete Fourier analysis on the uniform odd grid over [0,1)^n."""
    return FourierMap.from_samples(samples, dim_domain)


def directional_derivative(f: FourierMap, omega) -> FourierMap:
    """Derivative along the constant vector field omega (mode-wise exact)."""
    om = np.asarray(getattr(omega, "omega", omega), dtype=float)
    return f.directional(om)


def average(f: FourierMap) -> np.ndarray:
    return f.average()


def strip_norm(f: FourierMap, rho: float) -> StripNormEstimate:
    return f.strip_norm(rho)


@dataclass(frozen=True)
class TorusEmbedding:
    """Embedding K(theta) = winding @ theta + periodic(theta).

    ``winding`` is the (m, n) integer matrix of degrees with which K wraps
    the angle coordinates; for the standard graph setup over T^n it is
    [I_n; 0].  All solver corrections act on the periodic part only.
    """

    winding: np.ndarray
    periodic: FourierMap

    def __post_init__(self):
        w = np.asarray(self.winding, dtype=float)
        if w.shape != (self.periodic.dim_range, self.periodic.dim_domain):
            raise ValueError("winding shape must be (dim_range, dim_domain)")
        object.__setattr__(self, "winding", _freeze(w))

    @property
    def dim_domain(self) -> int:
        return self.periodic.dim_domain

    @property
    def dim_range(self) -> int:
        return self.periodic.dim_range

    @property
    def trunc_order(self) -> int:
        return self.periodic.trunc_order

    def __call__(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return theta @ self.winding.T + self.periodic(theta)

    def grid(self, grid_size: int | None = None) -> np.ndarray:
        """Uniform grid of parameter points, shape (N,)*n + (n,)."""
        size = self.periodic.grid_size if grid_size is None else grid_size
        axes = [np.arange(size) / size for _ in range(self.dim_domain)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def grid_samples(self, grid_size: int | None = None) -> np.ndarray:
        theta = self.grid(grid_size)
        return theta @ self.winding.T + self.periodic.synthesize(
            grid_size or self.periodic.grid_size
        )

    def dk(self) -> FourierMap:
        """Jacobian DK as an (m, n) matrix-valued FourierMap (exact)."""
        n, m = self.dim_domain, self.dim_range
        parts = [self.periodic.partial(axis) for axis in range(n)]
        modes: dict[tuple[int, ...], np.ndarray] = {}
        keys = set().union(*(p.modes.keys() for p in parts)) if parts else set()
        for k in keys:
            amp = np.zeros((m, n), complex)
            for axis, p in enumerate(parts):
                a = p.modes.get(k)
                if a is not None:
                    amp[:, axis] = a
            modes[k] = amp
        zero = (0,) * n
        modes[zero] = modes.get(zero, np.zeros((m, n), complex)) + self.winding
        return FourierMap(n, (m, n), modes, self.periodic.trunc_order)

    def directional(self, omega) -> FourierMap:
        """d/dt K(theta + t omega): periodic (the winding shift is constant)."""
        om = np.asarray(getattr(omega, "omega", omega), dtype=float)
        const = FourierMap.constant(self.winding @ om, self.dim_domain)
        return self.periodic.directional(om) + const

    def difference(self, other: "TorusEmbedding") -> FourierMap:
        if not np.array_equal(self.winding, other.winding):
            raise ValueError("embeddings have different winding")
        return self.periodic - other.periodic

    def with_periodic(self, periodic: FourierMap) -> "TorusEmbedding":
        return TorusEmbedding(self.winding, periodic)

    def resized(self, trunc_order: int) -> "TorusEmbedding":
        return TorusEmbedding(self.winding, self.periodic.resized(trunc_order))

    def shifted(self, theta0) -> "TorusEmbedding":
        theta0 = np.asarray(theta0, dtype=float)
        shifted = self.periodic.shifted(theta0)
        const = FourierMap.constant(self.winding @ theta0, self.dim_domain)
        return TorusEmbedding(self.winding, shifted + const)

    @classmethod
    def circle(
        cls, y0, trunc_order: int = 16, dim_domain: int | None = None
    ) -> "TorusEmbedding":
        """Zero-section torus K(theta) = (theta, y0) over T^n."""
        y0 = np.atleast_1d(np.asarray(y0, dtype=float))
        n = dim_domain if dim_domain is not None else y0.size
        winding = np.vstack([np.eye(n), np.zeros((n, n))])
        zero = (0,) * n
        const = np.concatenate([np.zeros(n), y0]).astype(complex)
        per = FourierMap(n, (2 * n,), {zero: const}, trunc_order)
        return cls(winding, per)

    # -- serialization ----------------------------------------------------

    def to_csv(self) -> str:
        """Winding header line followed by the periodic part's mode table."""
        flat = " ".join(str(int(w)) for w in np.ravel(self.winding))
        return f"# winding={flat}\n" + self.periodic.to_csv()

    @classmethod
    def from_csv(cls, text: str) -> "TorusEmbedding":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("# winding="):
            raise ValueError("torus csv must start with a '# winding=' line")
        entries = [int(v) for v in lines[0].split("=", 1)[1].split()]
        per = FourierMap.from_csv("\n".join(lines[1:]))
        m, n = per.dim_range, per.dim_domain
        winding = np.array(entries, dtype=float).reshape(m, n)
        return cls(winding, per)

    def to_json(self) -> str:
        doc = {
            "winding": [[int(w) for w in row] for row in self.winding],
            "periodic": json.loads(self.periodic.to_json()),
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TorusEmbedding":
        doc = json.loads(text)
        per = FourierMap.from_json(json.dumps(doc["periodic"]))
        return cls(np.array(doc["winding"], dtype=float), per)
