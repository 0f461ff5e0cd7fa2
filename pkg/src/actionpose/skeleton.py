"""Skeleton layout, pose sequence containers and the geometric transforms
shared by the rest of the package.

Axes convention for 3D data (millimetres): x is lateral, y is vertical (up)
and z is depth measured from the front camera.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Any

import numpy as np

PART_NAMES = ("head", "arms", "upper_body", "hips", "legs", "lower_body")
VIEWS = ("front", "side")
MARGIN = 1.1


@dataclass(frozen=True)
class SkeletonLayout:
    """Joint names, kinematic tree and the six-part body partition.

    Attributes:
        joint_names: ordered joint identifiers, root first
        parent_of: parent index per joint, -1 for the root
        parts: part name -> sorted tuple of joint indices
    """

    joint_names: tuple[str, ...]
    parent_of: tuple[int, ...]
    parts: dict[str, tuple[int, ...]]

    def __post_init__(self):
        n = len(self.joint_names)
        if n != 17:
            raise ValueError(f"expected 17 joints, got {n}")
        if len(self.parent_of) != n:
            raise ValueError("parent_of length does not match joint count")
        roots = [j for j, p in enumerate(self.parent_of) if p < 0]
        if roots != [0]:
            raise ValueError(f"tree must have a single root at index 0, roots={roots}")
        for j in range(1, n):
            seen = {j}
            p = self.parent_of[j]
            while p >= 0:
                if p in seen or p >= n:
                    raise ValueError(f"joint {j} is not connected to the root")
                seen.add(p)
                p = self.parent_of[p]
        if set(self.parts) != set(PART_NAMES):
            raise ValueError(f"parts must be exactly {PART_NAMES}, got {sorted(self.parts)}")
        covered = set()
        for name, idx in self.parts.items():
            if not idx:
                raise ValueError(f"part {name!r} is empty")
            covered.update(idx)
        if covered != set(range(n)):
            raise ValueError(f"joints not covered by any part: {sorted(set(range(n)) - covered)}")

    @property
    def num_joints(self) -> int:
        return len(self.joint_names)

    def index(self, name: str) -> int:
        return self.joint_names.index(name)

    def bones(self) -> list[tuple[int, int]]:
        """(parent, child) pairs."""
        return [(p, j) for j, p in enumerate(self.parent_of) if p >= 0]


def parse_layout(text: str) -> SkeletonLayout:
    names, parents = [], []
    parts: dict[str, list[int]] = {p: [] for p in PART_NAMES}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        cols = line.split()
        if len(cols) != 4:
            raise ValueError(f"line {lineno}: expected 4 columns, got {len(cols)}")
        idx, name, parent, memberships = int(cols[0]), cols[1], int(cols[2]), cols[3]
        if idx != len(names):
            raise ValueError(f"line {lineno}: joint indices must be consecutive from 0")
        names.append(name)
        parents.append(parent)
        if memberships != "-":
            for part in memberships.split(","):
                if part not in parts:
                    raise ValueError(f"line {lineno}: unknown part {part!r}")
                parts[part].append(idx)
    return SkeletonLayout(tuple(names), tuple(parents), {k: tuple(sorted(v)) for k, v in parts.items()})


@lru_cache(maxsize=None)
def h36m_layout() -> SkeletonLayout:
    """The packaged 17-joint layout (see ``data/h36m_skeleton.txt``)."""
    text = resources.files("actionpose").joinpath("data/h36m_skeleton.txt").read_text()
    return parse_layout(text)


@dataclass
class PoseSeq3D:
    data: np.ndarray  # (T, J, 3) millimetres
    layout: SkeletonLayout = field(default_factory=h36m_layout)
    fps: float = 30.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValueError(f"expected (T, J, 3) array, got shape {self.data.shape}")
        if self.data.shape[0] < 2:
            raise ValueError("a pose sequence needs at least 2 frames")
        if self.data.shape[1] != self.layout.num_joints:
            raise ValueError(f"joint count {self.data.shape[1]} != layout's {self.layout.num_joints}")
        _check_finite(self.data)

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]


@dataclass
class PoseSeq2D:
    """2D keypoints with a confidence channel, shape (T, J, 3).

    A masked entry is exactly (0, 0, 0). ``meta`` holds the inverse pixel
    normalisation once :func:`normalize_to_pixels` has been applied.
    """

    data: np.ndarray
    layout: SkeletonLayout = field(default_factory=h36m_layout)
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValueError(f"expected (T, J, 3) array, got shape {self.data.shape}")
        if self.data.shape[1] != self.layout.num_joints:
            raise ValueError(f"joint count {self.data.shape[1]} != layout's {self.layout.num_joints}")

    @property
    def confidence(self) -> np.ndarray:
        return self.data[..., 2]

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    def replace(self, data: np.ndarray) -> "PoseSeq2D":
        return PoseSeq2D(data, self.layout, dict(self.meta))


@dataclass(frozen=True)
class BBox:
    """Square box: centre (x, y) and half side length."""

    center: tuple[float, float]
    scale: float


def _check_finite(arr: np.ndarray) -> None:
    bad = np.argwhere(~np.isfinite(arr))
    if len(bad):
        raise ValueError(f"non-finite value at index {tuple(int(i) for i in bad[0])}")


def project_orthographic(seq: PoseSeq3D, view: str = "front") -> PoseSeq2D:
    """Orthographic projection; front keeps (x, y), side keeps (z, y).

    The output is in the input units (not yet normalised) with confidence 1.
    """
    _check_finite(seq.data)
    if view == "front":
        xy = seq.data[..., [0, 1]]
    elif view == "side":
        xy = seq.data[..., [2, 1]]
    else:
        raise ValueError(f"unknown view {view!r}, expected one of {VIEWS}")
    conf = np.ones(xy.shape[:-1] + (1,))
    return PoseSeq2D(np.concatenate([xy, conf], axis=-1), seq.layout, {"view": view})


def to_camera_frame(seq: PoseSeq3D, view: str = "front") -> PoseSeq3D:
    """Express a clip in the frame of the front or side camera.

    The side camera is the front one rotated 90 degrees about the vertical
    axis, (x, y, z) -> (z, y, -x), so its image plane is (z, y) as in
    :func:`project_orthographic`.
    """
    if view == "front":
        return PoseSeq3D(seq.data.copy(), seq.layout, seq.fps)
    if view == "side":
        d = seq.data
        return PoseSeq3D(np.stack([d[..., 2], d[..., 1], -d[..., 0]], axis=-1), seq.layout, seq.fps)
    raise ValueError(f"unknown view {view!r}, expected one of {VIEWS}")


def tight_bbox(seq2d: PoseSeq2D) -> BBox:
    """Smallest square around all visible keypoints of the clip."""
    visible = seq2d.confidence > 0
    if not visible.any():
        raise ValueError("cannot fit a bounding box: no visible keypoints")
    xy = seq2d.data[..., :2][visible]
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    center = (lo + hi) / 2
    return BBox((float(center[0]), float(center[1])), float((hi - lo).max() / 2))


def normalize_to_pixels(seq2d: PoseSeq2D, bbox: BBox | None = None) -> PoseSeq2D:
    """Affinely map x, y into [-1, 1].

    The virtual image is the square ``bbox`` grown by a 10% margin, so a point
    on the box edge lands on +-1/1.1 and the image corner on +-1. When no box
    is given the clip's tight square box is used. Masked entries stay zero.
    """
    if bbox is None:
        bbox = tight_bbox(seq2d)
    if not bbox.scale > 0:
        raise ValueError(f"degenerate bounding box (scale={bbox.scale})")
    half = bbox.scale * MARGIN
    out = seq2d.data.copy()
    visible = out[..., 2] > 0
    out[..., 0] = np.where(visible, (out[..., 0] - bbox.center[0]) / half, 0.0)
    out[..., 1] = np.where(visible, (out[..., 1] - bbox.center[1]) / half, 0.0)
    meta = dict(seq2d.meta)
    meta["pixel_center"] = bbox.center
    meta["pixel_half_side"] = half
    return PoseSeq2D(out, seq2d.layout, meta)


def denormalize_pixels(seq2d: PoseSeq2D) -> PoseSeq2D:
    """Inverse of :func:`normalize_to_pixels` using the stored metadata."""
    try:
        cx, cy = seq2d.meta["pixel_center"]
        half = seq2d.meta["pixel_half_side"]
    except KeyError:
        raise ValueError("sequence carries no pixel normalisation metadata") from None
    out = seq2d.data.copy()
    visible = out[..., 2] > 0
    out[..., 0] = np.where(visible, out[..., 0] * half + cx, 0.0)
    out[..., 1] = np.where(visible, out[..., 1] * half + cy, 0.0)
    meta = {k: v for k, v in seq2d.meta.items() if not k.startswith("pixel_")}
    return PoseSeq2D(out, seq2d.layout, meta)


def root_center(seq: PoseSeq3D) -> PoseSeq3D:
    return PoseSeq3D(seq.data - seq.data[:, :1, :], seq.layout, seq.fps)


def part_joints(layout: SkeletonLayout, part_name: str) -> frozenset[int]:
    try:
        return frozenset(layout.parts[part_name])
    except KeyError:
        raise ValueError(f"unknown body part {part_name!r}, expected one of {PART_NAMES}") from None
