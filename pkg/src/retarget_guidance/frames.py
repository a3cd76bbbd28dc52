"""Guidance frame built from current and target position vectors."""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFrame
from .kernels import PARALLEL_TOL


@dataclass(frozen=True)
class GuidanceFrame:
    """Orthonormal basis (columns ex, ey, ez) and origin at the target."""

    basis: np.ndarray
    origin: np.ndarray

    @property
    def ex(self):
        return self.basis[:, 0]

    @property
    def ey(self):
        return self.basis[:, 1]

    @property
    def ez(self):
        return self.basis[:, 2]

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))


def build_guidance_frame(r0, rf):
    """Frame with ex along ``r0`` and ez normal to the plane of ``r0``, ``rf``.

    Raises:
        DegenerateFrame: if ``r0`` is zero or parallel to ``rf``.
    """
    r0 = np.asarray(r0, dtype=float)
    rf = np.asarray(rf, dtype=float)
    n0 = np.linalg.norm(r0)
    nf = np.linalg.norm(rf)
    if n0 == 0.0 or nf == 0.0:
        raise DegenerateFrame("zero position vector")
    cross = np.cross(r0, rf)
    if np.linalg.norm(cross) / (n0 * nf) <= PARALLEL_TOL:
        raise DegenerateFrame("r0 and rf are parallel")
    ex = r0 / n0
    ez = np.cross(ex, rf)
    ez /= np.linalg.norm(ez)
    ey = np.cross(ez, ex)
    return GuidanceFrame(np.column_stack([ex, ey, ez]), rf.copy())


def to_guidance(frame, v):
    """Components of a navigation-frame vector along the guidance basis."""
    return frame.basis.T @ np.asarray(v, dtype=float)


def to_navigation(frame, v):
    return frame.basis @ np.asarray(v, dtype=float)
