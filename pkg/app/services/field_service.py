import logging
import math
from typing import Optional, Sequence

import numpy as np

from app.errors import InvalidArgumentError
from app.models.mesh import Mesh
from app.services.mesh_service import write_text_atomic

logger = logging.getLogger(__name__)


def _angles(mesh: Mesh) -> np.ndarray:
    """Per-vertex angle: arc-length angle on periodic 1-D meshes, polar angle in the plane."""
    if mesh.dimension == 1:
        period = mesh.periods[0] if mesh.periods else None
        if not period:
            raise InvalidArgumentError("winding fields need a periodic 1-D mesh or a planar 2-D mesh")
        return 2.0 * math.pi * mesh.vertices[:, 0] / period
    center = mesh.bounding_box().mean(axis=1)
    d = mesh.vertices - center
    return np.arctan2(d[:, 1], d[:, 0])


def _periodic_coordinates(mesh: Mesh) -> np.ndarray:
    """Coordinates mapped to angles along periodic axes, left as they are elsewhere."""
    coords = mesh.vertices.astype(float).copy()
    for axis, period in enumerate(mesh.periods):
        if period:
            coords[:, axis] = np.sin(2.0 * math.pi * coords[:, axis] / period)
    return coords


class FieldService:
    """Analytic and random test fields, potentials, and their text files."""

    def winding(self, mesh: Mesh, k: int = 1) -> np.ndarray:
        """exp(i k theta): winds k times around the circle or around the origin of a planar mesh."""
        return np.exp(1j * k * _angles(mesh))

    def smooth(self, mesh: Mesh) -> np.ndarray:
        """
        Smooth nowhere-vanishing field with non-trivial phase.

        Periodic axes enter through sin(2 pi x / period), so the field is
        smooth across seams. |f| lies in [1.5, 2.5].
        """
        c = _periodic_coordinates(mesh)
        x = c[:, 0]
        y = c[:, 1] if mesh.dimension == 2 else np.zeros_like(x)
        modulus = 2.0 + 0.5 * np.sin(1.3 * x + 0.4) * np.cos(0.9 * y)
        phase = 0.7 * np.sin(x) + 0.4 * np.cos(1.1 * y) + 0.3 * x * y
        return modulus * np.exp(1j * phase)

    def gaussian_chirp(
        self, mesh: Mesh, decay: float = 0.5, chirp: float = 0.5, center: Optional[Sequence[float]] = None
    ) -> np.ndarray:
        """exp(-a r^2 + i c r^2) around `center` (default: bounding-box center)."""
        x0 = mesh.bounding_box().mean(axis=1) if center is None else np.asarray(center, dtype=float)
        r2 = np.sum((mesh.vertices - x0) ** 2, axis=1)
        return np.exp(-decay * r2 + 1j * chirp * r2)

    def random_nonvanishing(self, mesh: Mesh, rng: np.random.Generator) -> np.ndarray:
        """(1.5 + u) exp(i theta) with u uniform in [-1, 1) and theta uniform in [0, 2 pi)."""
        n = mesh.n_vertices
        modulus = 1.5 + rng.uniform(-1.0, 1.0, n)
        return modulus * np.exp(1j * rng.uniform(0.0, 2.0 * math.pi, n))

    def random_complex(self, mesh: Mesh, rng: np.random.Generator) -> np.ndarray:
        """Standard complex Gaussian field; may come arbitrarily close to zero."""
        n = mesh.n_vertices
        return rng.standard_normal(n) + 1j * rng.standard_normal(n)

    def component_phase(self, mesh: Mesh, phases: Sequence[float]) -> np.ndarray:
        """
        Positive smooth modulus times one constant phase per connected component.

        Args:
            mesh: Mesh with at most len(phases) components
            phases: Phase of each component, in component-label order

        Returns:
            Nowhere-vanishing field whose phase is locally constant
        """
        if len(phases) < mesh.n_components:
            raise InvalidArgumentError(
                f"{mesh.n_components} components need as many phases, got {len(phases)}"
            )
        modulus = np.abs(self.smooth(mesh))
        return modulus * np.exp(1j * np.asarray(phases, dtype=float)[mesh.component_labels])

    def neumann_cosine(self, mesh: Mesh, k: int = 1) -> np.ndarray:
        """cos(k pi (x - x_min) / L) on an interval; the k-th Neumann mode."""
        box = mesh.bounding_box()
        length = box[0, 1] - box[0, 0]
        return np.cos(k * math.pi * (mesh.vertices[:, 0] - box[0, 0]) / length).astype(complex)

    # Potentials

    def constant_potential(self, mesh: Mesh, value: complex) -> np.ndarray:
        return np.full(mesh.n_vertices, complex(value))

    def bump_potential(
        self, mesh: Mesh, amplitude: complex, radius: float, center: Optional[Sequence[float]] = None
    ) -> np.ndarray:
        """
        amplitude * (1 - (r/radius)^2)^2 inside the ball of `radius`, zero outside.

        Args:
            mesh: Mesh
            amplitude: Complex amplitude; purely imaginary gives a signed Im V
            radius: Support radius
            center: Bump center (default: bounding-box center)

        Returns:
            Per-vertex potential
        """
        if radius <= 0:
            raise InvalidArgumentError(f"bump radius must be positive, got {radius}")
        x0 = mesh.bounding_box().mean(axis=1) if center is None else np.asarray(center, dtype=float)
        if x0.shape != (mesh.dimension,):
            raise InvalidArgumentError(f"bump center needs {mesh.dimension} coordinates, got {x0.tolist()}")
        r2 = np.sum((mesh.vertices - x0) ** 2, axis=1) / radius ** 2
        profile = np.clip(1.0 - r2, 0.0, None) ** 2
        return complex(amplitude) * profile

    # Text I/O

    def dumps(self, values: np.ndarray) -> str:
        """Plain-text columns `index re im`, one vertex per line."""
        values = np.asarray(values, dtype=complex)
        return "".join(f"{i} {float(z.real)!r} {float(z.imag)!r}\n" for i, z in enumerate(values))

    def loads(self, text: str, n_vertices: Optional[int] = None) -> np.ndarray:
        """Parse `index re im` lines; `#` lines are comments. Every index must appear exactly once."""
        entries = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            try:
                index, re_part, im_part = int(parts[0]), float(parts[1]), float(parts[2])
            except (ValueError, IndexError):
                raise InvalidArgumentError(f"malformed field line {lineno}: '{line}'")
            if index in entries:
                raise InvalidArgumentError(f"vertex {index} listed twice (line {lineno})")
            entries[index] = complex(re_part, im_part)
        n = len(entries) if n_vertices is None else n_vertices
        if sorted(entries) != list(range(n)):
            raise InvalidArgumentError(f"field file must list vertices 0..{n - 1} exactly once")
        return np.array([entries[i] for i in range(n)], dtype=complex)

    def save(self, values: np.ndarray, path: str) -> None:
        write_text_atomic(path, self.dumps(values))
        logger.info(f"Saved field with {len(values)} values to {path}")

    def load(self, path: str, n_vertices: Optional[int] = None) -> np.ndarray:
        with open(path, "r", encoding="utf-8") as fh:
            return self.loads(fh.read(), n_vertices)
