"""Procedural ground-truth depth video by ray casting simple moving primitives.

Depth is perpendicular (z) distance from the camera plane.  The camera is a
pinhole looking down +z with x to the right and y down; the field of view is
the horizontal one.  Rays that hit nothing, or hit beyond the background
distance, return the background plane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

BACKGROUND_REFLECTANCE = 0.3
KINDS = ("plane", "box", "sphere")


@dataclass
class Primitive:
    """A plane, axis-aligned box or sphere moving at constant velocity.

    ``size`` is the full (x, y, z) extent for boxes and the radius (first
    component) for spheres.  Planes ignore it and use ``normal`` instead.
    """
    kind: str
    size: tuple[float, float, float] = (1.0, 1.0, 1.0)
    reflectance: float = 0.5
    position: tuple[float, float, float] = (0.0, 0.0, 10.0)
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    normal: tuple[float, float, float] = (0.0, 0.0, -1.0)

    def at(self, t: float) -> np.ndarray:
        return np.asarray(self.position, float) + t * np.asarray(self.velocity, float)


@dataclass
class Camera:
    fov_deg: float = 30.0
    width: int = 256
    height: int = 128

    @property
    def focal_px(self) -> float:
        return (self.width / 2) / math.tan(math.radians(self.fov_deg) / 2)

    def ray_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-pixel ray slopes (x/z, y/z) at pixel centres."""
        f = self.focal_px
        u = (np.arange(self.width) + 0.5 - self.width / 2) / f
        v = (np.arange(self.height) + 0.5 - self.height / 2) / f
        return np.meshgrid(u, v)


@dataclass
class SceneSpec:
    objects: list[Primitive] = field(default_factory=list)
    background_depth: float = 35.0
    camera: Camera = field(default_factory=Camera)
    fps: float = 100.0
    n_frames: int = 1
    seed: int = 0

    def validate(self) -> None:
        cam = self.camera
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.n_frames < 1:
            raise ValueError("n_frames must be at least 1")
        if self.background_depth <= 0:
            raise ValueError("background_depth must be positive")
        if cam.width % 4 or cam.height % 4:
            raise ValueError("camera resolution must be a multiple of 4 in both axes")
        if not 0 < cam.fov_deg < 180:
            raise ValueError("fov_deg must be in (0, 180)")
        t_end = (self.n_frames - 1) / self.fps
        for i, obj in enumerate(self.objects):
            if obj.kind not in KINDS:
                raise ValueError(f"object {i}: unknown kind {obj.kind!r}")
            if not 0.05 <= obj.reflectance <= 1.0:
                raise ValueError(f"object {i}: reflectance must be in [0.05, 1]")
            if obj.kind == "plane":
                n = np.asarray(obj.normal, float)
                if not np.linalg.norm(n) > 0:
                    raise ValueError(f"object {i}: plane normal must be non-zero")
                for t in (0.0, t_end):
                    if abs(n @ obj.at(t)) < 1e-9:
                        raise ValueError(f"object {i}: plane passes through the camera")
                continue
            size = np.asarray(obj.size, float)
            if obj.kind == "box" and (size.shape != (3,) or not (size > 0).all()):
                raise ValueError(f"object {i}: box extents must all be positive")
            if obj.kind == "sphere" and not size.reshape(-1)[0] > 0:
                raise ValueError(f"object {i}: sphere radius must be positive")
            half_z = size[2] / 2 if obj.kind == "box" else size.reshape(-1)[0]
            # Linear motion: the extreme depths occur at the first or last frame.
            for t in (0.0, t_end):
                z = obj.at(t)[2]
                if z - half_z <= 0:
                    raise ValueError(f"object {i}: non-positive depth at t={t:.3f}s")
                if z - half_z > self.background_depth:
                    raise ValueError(f"object {i}: lies beyond the background at t={t:.3f}s")


@dataclass
class GroundTruthSequence:
    depth: np.ndarray          # (n_frames, H, W) metres
    intensity: np.ndarray      # (n_frames, H, W) reflectance in [0, 1]
    fps: float
    d_max: float = 35.0

    @property
    def n_frames(self) -> int:
        return self.depth.shape[0]

    def check(self) -> None:
        if self.depth.shape != self.intensity.shape or self.depth.ndim != 3:
            raise ValueError("depth and intensity must both be (frames, H, W)")
        if not (np.isfinite(self.depth).all() and np.isfinite(self.intensity).all()):
            raise ValueError("sequence contains non-finite values")
        if (self.depth <= 0).any() or (self.depth > self.d_max).any():
            raise ValueError("depth outside (0, d_max]")
        if (self.intensity < 0).any() or (self.intensity > 1).any():
            raise ValueError("intensity outside [0, 1]")


# ------------------------------------------------------------------ ray casts

def _hit_plane(px, py, point, normal):
    n = np.asarray(normal, float)
    denom = n[0] * px + n[1] * py + n[2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.dot(n, point) / denom
    return np.where(np.abs(denom) > 1e-12, t, np.inf)


def _hit_box(px, py, centre, size):
    lo = centre - np.asarray(size, float) / 2
    hi = centre + np.asarray(size, float) / 2
    t_near = np.full(px.shape, -np.inf)
    t_far = np.full(px.shape, np.inf)
    for d, a, b in ((px, lo[0], hi[0]), (py, lo[1], hi[1]), (np.ones_like(px), lo[2], hi[2])):
        with np.errstate(divide="ignore", invalid="ignore"):
            t1, t2 = a / d, b / d
        parallel = d == 0
        inside = (a <= 0) & (0 <= b)
        t1 = np.where(parallel, np.where(inside, -np.inf, np.inf), t1)
        t2 = np.where(parallel, np.where(inside, np.inf, -np.inf), t2)
        t_near = np.maximum(t_near, np.minimum(t1, t2))
        t_far = np.minimum(t_far, np.maximum(t1, t2))
    hit = (t_near <= t_far) & (t_near > 0)
    return np.where(hit, t_near, np.inf)


def _hit_sphere(px, py, centre, radius):
    dd = px * px + py * py + 1.0
    dc = px * centre[0] + py * centre[1] + centre[2]
    disc = dc * dc - dd * (centre @ centre - radius * radius)
    with np.errstate(invalid="ignore"):
        t = (dc - np.sqrt(disc)) / dd
    return np.where((disc >= 0) & (t > 0), t, np.inf)


def render_frame(spec: SceneSpec, t: int) -> tuple[np.ndarray, np.ndarray]:
    """Depth (metres) and intensity for frame ``t``."""
    if not 0 <= t < spec.n_frames:
        raise IndexError(f"frame {t} outside 0..{spec.n_frames - 1}")
    return _render_at(spec, t / spec.fps)


def _render_at(spec: SceneSpec, time_s: float) -> tuple[np.ndarray, np.ndarray]:
    px, py = spec.camera.ray_grid()
    depth = np.full(px.shape, np.inf)
    refl = np.full(px.shape, BACKGROUND_REFLECTANCE)
    for obj in spec.objects:
        pos = obj.at(time_s)
        if obj.kind == "plane":
            hit = _hit_plane(px, py, pos, obj.normal)
        elif obj.kind == "box":
            hit = _hit_box(px, py, pos, obj.size)
        else:
            hit = _hit_sphere(px, py, pos, float(np.asarray(obj.size, float).reshape(-1)[0]))
        hit = np.where(hit > 0, hit, np.inf)
        closer = hit < depth
        depth = np.where(closer, hit, depth)
        refl = np.where(closer, obj.reflectance, refl)
    beyond = depth > spec.background_depth
    depth[beyond] = spec.background_depth
    refl[beyond] = BACKGROUND_REFLECTANCE
    return depth, refl


def render_sequence(spec: SceneSpec, stride: int = 1) -> GroundTruthSequence:
    """Render frames ``0, stride, 2*stride, ...`` of the scene.

    ``stride > 1`` gives the same frames as rendering everything and then
    dropping frames, without paying for the skipped ones.
    """
    spec.validate()
    if stride < 1:
        raise ValueError("stride must be >= 1")
    frames = range(0, spec.n_frames, stride)
    depth = np.empty((len(frames), spec.camera.height, spec.camera.width))
    inten = np.empty_like(depth)
    for j, t in enumerate(frames):
        depth[j], inten[j] = render_frame(spec, t)
    return GroundTruthSequence(depth, inten, spec.fps / stride, spec.background_depth)


def pixels_per_metre(spec: SceneSpec, depth: float, lr_width: int | None = None) -> float:
    """Lateral image-plane scale at ``depth``, in HR pixels (or LR pixels)."""
    f = spec.camera.focal_px
    if lr_width is not None:
        f *= lr_width / spec.camera.width
    return f / depth


# ------------------------------------------------------------ random scenes

def random_scene(seed: int, n_frames: int = 60, fps: float = 100.0,
                 shift_range: tuple[float, float] = (0.1, 1.0),
                 n_objects: tuple[int, int] = (3, 8),
                 background_depth: float = 35.0,
                 floor_probability: float = 0.5) -> SceneSpec:
    """A random clutter of boxes and spheres drifting across the view.

    Each object's lateral speed is drawn so that its image moves between
    ``shift_range`` low-resolution (64 px wide) pixels per frame.
    """
    rng = np.random.default_rng(seed)
    cam = Camera()
    lr_f = cam.focal_px / 4
    objects = []
    if rng.random() < floor_probability:
        height = rng.uniform(1.2, 2.5)
        objects.append(Primitive("plane", reflectance=float(rng.uniform(0.1, 0.6)),
                                 position=(0.0, height, 0.0), normal=(0.0, -1.0, 0.0)))
    if rng.random() < 0.4:
        wall = rng.uniform(18.0, background_depth - 1.0)
        objects.append(Primitive("plane", reflectance=float(rng.uniform(0.1, 0.9)),
                                 position=(0.0, 0.0, wall), normal=(0.0, 0.0, -1.0)))
    duration = (n_frames - 1) / fps
    for _ in range(int(rng.integers(n_objects[0], n_objects[1] + 1))):
        kind = "box" if rng.random() < 0.7 else "sphere"
        z = float(rng.uniform(4.0, 30.0))
        half_w = z * math.tan(math.radians(cam.fov_deg) / 2)
        if kind == "box":
            size = (float(rng.uniform(0.3, 0.25 * z)), float(rng.uniform(0.3, 0.2 * z)),
                    float(rng.uniform(0.2, 3.0)))
            half_z = size[2] / 2
        else:
            radius = float(rng.uniform(0.2, 0.08 * z))
            size = (radius, radius, radius)
            half_z = radius
        z = max(z, half_z + 0.5)
        shift = rng.uniform(*shift_range) * rng.choice([-1.0, 1.0])
        vx = shift / lr_f * z * fps
        vy = rng.normal(0.0, 0.15) * abs(vx)
        vz = rng.normal(0.0, 0.5)
        if z + vz * duration - half_z < 1.0 or z + vz * duration - half_z > background_depth:
            vz = 0.0
        # Start so the object is near the centre of the view mid-sequence.
        x0 = rng.uniform(-half_w, half_w) - vx * duration / 2
        y0 = rng.uniform(-0.3 * half_w, 0.3 * half_w)
        objects.append(Primitive(kind, size, float(rng.uniform(0.05, 1.0)),
                                 (float(x0), float(y0), z), (float(vx), float(vy), float(vz))))
    spec = SceneSpec(objects, background_depth, cam, fps, n_frames, seed)
    spec.validate()
    return spec


def walking_scene(n_frames: int, fps: float = 100.0, speed_kmh: float = 4.3,
                  seed: int = 0, spacing: float = 1.6) -> SceneSpec:
    """Pedestrian-like boxes walking in two lanes around 9 m.

    People are laid out densely along each lane so that someone is in view
    for the whole sequence, whatever the frame rate.
    """
    rng = np.random.default_rng(seed)
    v = speed_kmh / 3.6
    duration = (n_frames - 1) / fps
    span = v * duration + 12.0
    objects = [Primitive("plane", reflectance=0.25, position=(0.0, 1.5, 0.0),
                         normal=(0.0, -1.0, 0.0)),
               Primitive("plane", reflectance=0.6, position=(0.0, 0.0, 22.0),
                         normal=(0.0, 0.0, -1.0))]
    for lane_z, direction in ((9.0, 1.0), (11.5, -1.0)):
        x = -span
        while x < span:
            width = rng.uniform(0.4, 0.6)
            height = rng.uniform(1.6, 1.9)
            start = x if direction > 0 else -x
            objects.append(Primitive(
                "box", (width, height, 0.3), float(rng.uniform(0.2, 0.9)),
                (float(start - direction * v * duration / 2), 1.5 - height / 2,
                 lane_z + float(rng.uniform(-0.4, 0.4))),
                (direction * v, 0.0, 0.0)))
            x += spacing * rng.uniform(0.7, 1.3)
    spec = SceneSpec(objects, 35.0, Camera(), fps, n_frames, seed)
    spec.validate()
    return spec


# ------------------------------------------------------------- text format

_SCALARS = {"background_depth": float, "fps": float, "n_frames": int, "seed": int,
            "fov_deg": float, "width": int, "height": int}


def _vec(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def parse_scene(text: str) -> SceneSpec:
    """Parse the ``key = value`` scene format with one ``[object]`` block per primitive."""
    top: dict[str, str] = {}
    blocks: list[dict[str, str]] = []
    current = top
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line == "[object]":
            current = {}
            blocks.append(current)
            continue
        if line.startswith("["):
            raise ValueError(f"line {lineno}: unknown section {line}")
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        current[key] = value

    unknown = set(top) - set(_SCALARS)
    if unknown:
        raise ValueError(f"unknown scene keys: {sorted(unknown)}")
    vals = {k: _SCALARS[k](v) for k, v in top.items()}
    cam = Camera(vals.pop("fov_deg", 30.0), vals.pop("width", 256), vals.pop("height", 128))
    objects = []
    for b in blocks:
        kind = b.pop("kind", None)
        if kind is None:
            raise ValueError("[object] block without kind")
        obj = Primitive(kind)
        for key, value in b.items():
            if key == "reflectance":
                obj.reflectance = float(value)
            elif key in ("size", "position", "velocity", "normal"):
                v = _vec(value)
                if key == "size" and len(v) == 1:
                    v = v * 3
                if len(v) != 3:
                    raise ValueError(f"{key} needs three components")
                setattr(obj, key, v)
            else:
                raise ValueError(f"unknown object key {key!r}")
        objects.append(obj)
    spec = SceneSpec(objects, camera=cam, **vals)
    spec.validate()
    return spec


def format_scene(spec: SceneSpec) -> str:
    lines = [f"background_depth = {spec.background_depth!r}", f"fps = {spec.fps!r}",
             f"n_frames = {spec.n_frames}", f"seed = {spec.seed}",
             f"fov_deg = {spec.camera.fov_deg!r}", f"width = {spec.camera.width}",
             f"height = {spec.camera.height}"]
    for obj in spec.objects:
        lines += ["", "[object]", f"kind = {obj.kind}", f"reflectance = {obj.reflectance!r}"]
        for key in ("size", "position", "velocity", "normal"):
            lines.append(f"{key} = " + ", ".join(repr(float(c)) for c in getattr(obj, key)))
    return "\n".join(lines) + "\n"


def load_scene(path) -> SceneSpec:
    return parse_scene(Path(path).read_text())


def save_scene(spec: SceneSpec, path) -> None:
    Path(path).write_text(format_scene(spec))


def with_frames(spec: SceneSpec, n_frames: int) -> SceneSpec:
    return replace(spec, n_frames=n_frames)
