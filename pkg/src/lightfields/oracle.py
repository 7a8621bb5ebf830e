"""Analytic ground-truth renderer: procedural scenes, hemisphere sampling,
Blinn-Phong shading with shadow rays, depth maps, and surface sampling.

Scenes are compositions of spheres, axis-aligned boxes, z-aligned cylinders
and an optional ground plane, each with a constant material. Everything is
deterministic given its seed, fits the object into the unit cube centered at
the origin, and is vectorized over rays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .colorspace import linear_to_srgb
from .nets import LightConfig

CAMERA_RADIUS = 1.5
LIGHT_RADIUS = 10.0
BACKGROUND_AMBIENT = 0.2

_EPS = 1e-9
_SHADOW_OFFSET = 1e-6


@dataclass
class Material:
    albedo: np.ndarray
    k_s: float = 0.0
    shininess: float = 16.0

    def __post_init__(self):
        self.albedo = np.asarray(self.albedo, dtype=np.float64)
        if self.albedo.shape != (3,) or np.any(self.albedo < 0) or np.any(self.albedo > 1):
            raise ValueError("albedo must be an RGB triple in [0, 1]")
        if not (0.0 <= self.k_s <= 1.0):
            raise ValueError("k_s must lie in [0, 1]")
        if self.shininess < 1.0:
            raise ValueError("shininess must be >= 1")


@dataclass
class SurfaceHit:
    point: np.ndarray
    normal: np.ndarray
    material: Material
    t: float


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


class Sphere:
    def __init__(self, center, radius, material: Material):
        self.center = np.asarray(center, dtype=np.float64)
        self.radius = float(radius)
        self.material = material
        self.is_ground = False

    def intersect(self, o, d):
        oc = o - self.center
        b = 2.0 * np.sum(d * oc, axis=1)
        c = np.sum(oc * oc, axis=1) - self.radius ** 2
        disc = b * b - 4.0 * c
        t = np.full(len(o), np.inf)
        ok = disc >= 0.0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t0 = (-b - sq) / 2.0
        t1 = (-b + sq) / 2.0
        near = np.where(t0 > _EPS, t0, t1)
        t = np.where(ok & (near > _EPS), near, np.inf)
        return t

    def normals(self, p):
        return (p - self.center) / self.radius

    def area(self):
        return 4.0 * np.pi * self.radius ** 2

    def sample_surface(self, rng, n):
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return self.center + self.radius * v


class Box:
    def __init__(self, lo, hi, material: Material):
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        if np.any(self.hi <= self.lo):
            raise ValueError("box needs hi > lo on all axes")
        self.material = material
        self.is_ground = False

    def intersect(self, o, d):
        d_safe = np.where(np.abs(d) < 1e-300, 1e-300, d)
        t1 = (self.lo[None, :] - o) / d_safe
        t2 = (self.hi[None, :] - o) / d_safe
        tmin = np.minimum(t1, t2).max(axis=1)
        tmax = np.maximum(t1, t2).min(axis=1)
        hit = (tmax >= np.maximum(tmin, _EPS))
        t = np.where(tmin > _EPS, tmin, tmax)
        return np.where(hit & (t > _EPS), t, np.inf)

    def normals(self, p):
        center = (self.lo + self.hi) / 2.0
        half = (self.hi - self.lo) / 2.0
        rel = (p - center) / half
        axis = np.argmax(np.abs(rel), axis=1)
        n = np.zeros_like(p)
        n[np.arange(len(p)), axis] = np.sign(rel[np.arange(len(p)), axis])
        return n

    def area(self):
        e = self.hi - self.lo
        return 2.0 * (e[0] * e[1] + e[1] * e[2] + e[0] * e[2])

    def sample_surface(self, rng, n):
        e = self.hi - self.lo
        face_areas = np.array([e[1] * e[2], e[1] * e[2], e[0] * e[2],
                               e[0] * e[2], e[0] * e[1], e[0] * e[1]])
        faces = rng.choice(6, size=n, p=face_areas / face_areas.sum())
        u = rng.uniform(size=(n, 2))
        pts = np.empty((n, 3))
        for f in range(6):
            m = faces == f
            axis, side = divmod(f, 2)
            others = [a for a in range(3) if a != axis]
            pts[m, axis] = self.hi[axis] if side == 0 else self.lo[axis]
            pts[m, others[0]] = self.lo[others[0]] + u[m, 0] * e[others[0]]
            pts[m, others[1]] = self.lo[others[1]] + u[m, 1] * e[others[1]]
        return pts


class Cylinder:
    """Finite capped cylinder along z."""

    def __init__(self, center_xy, radius, z0, z1, material: Material):
        self.cx, self.cy = float(center_xy[0]), float(center_xy[1])
        self.radius = float(radius)
        self.z0, self.z1 = float(z0), float(z1)
        if self.z1 <= self.z0:
            raise ValueError("cylinder needs z1 > z0")
        self.material = material
        self.is_ground = False

    def intersect(self, o, d):
        ox = o[:, 0] - self.cx
        oy = o[:, 1] - self.cy
        dx, dy, dz = d[:, 0], d[:, 1], d[:, 2]
        a = dx * dx + dy * dy
        b = 2.0 * (ox * dx + oy * dy)
        c = ox * ox + oy * oy - self.radius ** 2
        disc = b * b - 4.0 * a * c
        ok = (disc >= 0.0) & (a > 1e-300)
        sq = np.sqrt(np.where(ok, disc, 0.0))
        best = np.full(len(o), np.inf)
        for sign in (-1.0, 1.0):
            t = np.where(ok, (-b + sign * sq) / (2.0 * np.where(a > 1e-300, a, 1.0)), np.inf)
            z = o[:, 2] + t * dz
            valid = ok & (t > _EPS) & (z >= self.z0) & (z <= self.z1)
            best = np.where(valid & (t < best), t, best)
        # Caps
        dz_safe = np.where(np.abs(dz) < 1e-300, 1e-300, dz)
        for zc in (self.z0, self.z1):
            t = (zc - o[:, 2]) / dz_safe
            px = o[:, 0] + t * d[:, 0] - self.cx
            py = o[:, 1] + t * d[:, 1] - self.cy
            valid = (t > _EPS) & (px * px + py * py <= self.radius ** 2)
            best = np.where(valid & (t < best), t, best)
        return best

    def normals(self, p):
        n = np.zeros_like(p)
        on_top = np.abs(p[:, 2] - self.z1) < 1e-7
        on_bot = np.abs(p[:, 2] - self.z0) < 1e-7
        side = ~(on_top | on_bot)
        n[on_top, 2] = 1.0
        n[on_bot, 2] = -1.0
        nx = (p[:, 0] - self.cx) / self.radius
        ny = (p[:, 1] - self.cy) / self.radius
        n[side, 0] = nx[side]
        n[side, 1] = ny[side]
        return n

    def area(self):
        h = self.z1 - self.z0
        return 2.0 * np.pi * self.radius * h + 2.0 * np.pi * self.radius ** 2

    def sample_surface(self, rng, n):
        h = self.z1 - self.z0
        side_area = 2.0 * np.pi * self.radius * h
        cap_area = np.pi * self.radius ** 2
        total = side_area + 2.0 * cap_area
        which = rng.choice(3, size=n, p=[side_area / total, cap_area / total, cap_area / total])
        phi = rng.uniform(0.0, 2.0 * np.pi, size=n)
        pts = np.empty((n, 3))
        r_cap = self.radius * np.sqrt(rng.uniform(size=n))
        z_side = rng.uniform(self.z0, self.z1, size=n)
        side = which == 0
        pts[side, 0] = self.cx + self.radius * np.cos(phi[side])
        pts[side, 1] = self.cy + self.radius * np.sin(phi[side])
        pts[side, 2] = z_side[side]
        for w, zc in ((1, self.z1), (2, self.z0)):
            m = which == w
            pts[m, 0] = self.cx + r_cap[m] * np.cos(phi[m])
            pts[m, 1] = self.cy + r_cap[m] * np.sin(phi[m])
            pts[m, 2] = zc
        return pts


class GroundPlane:
    """Infinite plane z = height, excluded from object masks and sampling."""

    def __init__(self, height, material: Material):
        self.height = float(height)
        self.material = material
        self.is_ground = True

    def intersect(self, o, d):
        dz = np.where(np.abs(d[:, 2]) < 1e-300, 1e-300, d[:, 2])
        t = (self.height - o[:, 2]) / dz
        return np.where(t > _EPS, t, np.inf)

    def normals(self, p):
        n = np.zeros_like(p)
        n[:, 2] = 1.0
        return n

    def area(self):
        return 0.0  # never sampled

    def sample_surface(self, rng, n):
        raise ValueError("ground plane has no sampleable area")


# ---------------------------------------------------------------------------
# Scene
# ---------------------------------------------------------------------------


@dataclass
class Scene:
    primitives: list
    spec: dict = field(default_factory=dict)

    def intersect(self, origins, dirs):
        """Nearest hit over all primitives: (t, primitive index); misses are
        (inf, -1)."""
        t_best = np.full(len(origins), np.inf)
        idx = np.full(len(origins), -1, dtype=int)
        for i, prim in enumerate(self.primitives):
            t = prim.intersect(origins, dirs)
            closer = t < t_best
            t_best = np.where(closer, t, t_best)
            idx = np.where(closer, i, idx)
        return t_best, idx

    def occluded(self, origins, dirs, max_t):
        t, _ = self.intersect(origins, dirs)
        return t < max_t

    def object_primitives(self):
        return [p for p in self.primitives if not p.is_ground]

    def surface_hit(self, origin, direction) -> SurfaceHit | None:
        o = np.asarray(origin, dtype=np.float64)[None, :]
        d = np.asarray(direction, dtype=np.float64)
        d = (d / np.linalg.norm(d))[None, :]
        t, idx = self.intersect(o, d)
        if idx[0] < 0:
            return None
        prim = self.primitives[idx[0]]
        p = (o + t[:, None] * d)[0]
        n = prim.normals(p[None, :])[0]
        return SurfaceHit(point=p, normal=n, material=prim.material, t=float(t[0]))


def chair_scene(seed: int = 0, with_armrests: bool = True, with_ground: bool = False) -> Scene:
    """Chair-like composite: box seat, box back, four cylinder legs and
    optional thin armrests, randomized within the unit cube."""
    rng = np.random.default_rng(seed)

    def color():
        return rng.uniform(0.15, 0.95, size=3)

    seat_mat = Material(albedo=color(), k_s=rng.uniform(0.05, 0.3), shininess=rng.uniform(16, 64))
    back_mat = Material(albedo=color(), k_s=rng.uniform(0.05, 0.3), shininess=rng.uniform(16, 64))
    leg_mat = Material(albedo=color(), k_s=rng.uniform(0.1, 0.4), shininess=rng.uniform(24, 96))
    arm_mat = Material(albedo=color(), k_s=rng.uniform(0.05, 0.3), shininess=rng.uniform(16, 64))

    half = rng.uniform(0.28, 0.38)          # seat half-extent
    seat_z = rng.uniform(-0.18, -0.05)      # seat top height
    seat_th = rng.uniform(0.03, 0.06)
    back_top = rng.uniform(0.3, 0.5)
    back_th = rng.uniform(0.04, 0.07)
    leg_r = rng.uniform(0.02, 0.04)

    prims = [
        Box([-half, -half, seat_z - seat_th], [half, half, seat_z], seat_mat),
        Box([-half, half - back_th, seat_z], [half, half, back_top], back_mat),
    ]
    inset = leg_r * 1.5
    for sx in (-1, 1):
        for sy in (-1, 1):
            prims.append(Cylinder(
                (sx * (half - inset), sy * (half - inset)), leg_r, -0.5, seat_z - seat_th, leg_mat))
    if with_armrests:
        arm_z = seat_z + rng.uniform(0.16, 0.24)
        arm_th = rng.uniform(0.015, 0.03)
        arm_w = rng.uniform(0.03, 0.05)
        for sx in (-1, 1):
            x0 = sx * half - (arm_w if sx > 0 else 0.0)
            prims.append(Box([x0, -half * 0.8, arm_z], [x0 + arm_w, half, arm_z + arm_th], arm_mat))
            # support post front
            prims.append(Cylinder((sx * (half - arm_w / 2), -half * 0.7),
                                  arm_th / 2 + 0.005, seat_z, arm_z, arm_mat))
    if with_ground:
        prims.append(GroundPlane(-0.501, Material(albedo=[0.5, 0.5, 0.5])))
    return Scene(prims, spec={"kind": "chair", "seed": int(seed),
                              "with_armrests": bool(with_armrests),
                              "with_ground": bool(with_ground)})


def sphere_scene(seed: int = 0, specular: bool = True, with_ground: bool = False) -> Scene:
    """Single sphere; the specular variant has a strong tight highlight."""
    rng = np.random.default_rng(seed)
    albedo = rng.uniform(0.2, 0.7, size=3)
    k_s = rng.uniform(0.7, 0.9) if specular else rng.uniform(0.0, 0.1)
    shininess = rng.uniform(80, 160) if specular else rng.uniform(8, 24)
    prims = [Sphere([0.0, 0.0, 0.0], 0.45, Material(albedo=albedo, k_s=k_s, shininess=shininess))]
    if with_ground:
        prims.append(GroundPlane(-0.501, Material(albedo=[0.5, 0.5, 0.5])))
    return Scene(prims, spec={"kind": "sphere", "seed": int(seed),
                              "specular": bool(specular), "with_ground": bool(with_ground)})


def procedural_scene(seed: int = 0, with_ground: bool = False) -> Scene:
    """Randomized chair-like object for multi-object datasets."""
    rng = np.random.default_rng(seed)
    scene = chair_scene(seed=int(rng.integers(1 << 31)),
                        with_armrests=bool(rng.uniform() < 0.5),
                        with_ground=with_ground)
    scene.spec = {"kind": "procedural", "seed": int(seed), "with_ground": bool(with_ground)}
    return scene


_SCENE_FACTORIES = {
    "chair": lambda s: chair_scene(s["seed"], s.get("with_armrests", True), s.get("with_ground", False)),
    "sphere": lambda s: sphere_scene(s["seed"], s.get("specular", True), s.get("with_ground", False)),
    "procedural": lambda s: procedural_scene(s["seed"], s.get("with_ground", False)),
}


def scene_from_spec(spec: dict) -> Scene:
    kind = spec.get("kind")
    if kind not in _SCENE_FACTORIES:
        raise ValueError(f"unknown scene kind {kind!r}")
    return _SCENE_FACTORIES[kind](spec)


# ---------------------------------------------------------------------------
# Cameras
# ---------------------------------------------------------------------------


class CameraModel:
    """Pinhole camera: x right, y up, looking along -z in camera space.
    Depth is Euclidean distance along the (unit) pixel ray."""

    def __init__(self, fx, fy, cx, cy, width, height, rotation, center):
        self.fx, self.fy = float(fx), float(fy)
        self.cx, self.cy = float(cx), float(cy)
        self.width, self.height = int(width), int(height)
        self.rotation = np.asarray(rotation, dtype=np.float64)
        self.center = np.asarray(center, dtype=np.float64)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if np.max(np.abs(self.rotation @ self.rotation.T - np.eye(3))) > 1e-9:
            raise ValueError("rotation must be orthonormal")

    @classmethod
    def look_at(cls, center, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0),
                fov_deg=50.0, width=128, height=128):
        center = np.asarray(center, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        up = np.asarray(up, dtype=np.float64)
        forward = target - center
        fn = np.linalg.norm(forward)
        if fn < 1e-12:
            raise ValueError("camera center and target coincide")
        forward /= fn
        if abs(forward @ up) > 0.999:
            up = np.array([1.0, 0.0, 0.0])
        z_cam = -forward
        x_cam = np.cross(up, z_cam)
        x_cam /= np.linalg.norm(x_cam)
        y_cam = np.cross(z_cam, x_cam)
        rotation = np.stack([x_cam, y_cam, z_cam], axis=1)
        f = (width / 2.0) / np.tan(np.deg2rad(fov_deg) / 2.0)
        return cls(f, f, width / 2.0, height / 2.0, width, height, rotation, center)

    def pixel_rays(self, us, vs):
        """Unit world-space directions through pixel centers (u+.5, v+.5)."""
        x = (np.asarray(us, dtype=np.float64) + 0.5 - self.cx) / self.fx
        y = -(np.asarray(vs, dtype=np.float64) + 0.5 - self.cy) / self.fy
        d = np.stack([x, y, -np.ones_like(x)], axis=-1)
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        return d @ self.rotation.T

    def all_rays(self):
        vs, us = np.meshgrid(np.arange(self.height), np.arange(self.width), indexing="ij")
        return self.pixel_rays(us.reshape(-1), vs.reshape(-1))

    def unproject(self, us, vs, depth):
        """Pixel (indices or fractional) + ray depth -> world point."""
        d = self.pixel_rays(us, vs)
        depth = np.asarray(depth, dtype=np.float64)
        return self.center + d * depth[..., None]

    def project(self, points):
        """World points -> pixel coordinates in unproject's convention."""
        rel = (np.atleast_2d(points) - self.center) @ self.rotation
        z = -rel[:, 2]
        if np.any(z <= 0):
            raise ValueError("point behind camera")
        u = self.fx * rel[:, 0] / z + self.cx - 0.5
        v = self.cy - self.fy * rel[:, 1] / z - 0.5
        return np.stack([u, v], axis=-1)

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height,
                "rotation": self.rotation.reshape(-1).tolist(),
                "center": self.center.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], d["width"], d["height"],
                   np.asarray(d["rotation"]).reshape(3, 3), np.asarray(d["center"]))


def hemisphere_point(rng, radius):
    z = rng.uniform(0.0, 1.0)
    phi = rng.uniform(0.0, 2.0 * np.pi)
    r_xy = np.sqrt(max(1.0 - z * z, 0.0))
    return radius * np.array([r_xy * np.cos(phi), r_xy * np.sin(phi), z])


def sample_view_and_lights(seed, n_lights, colored_lights=False, width=128, height=128,
                           fov_deg=50.0, camera_radius=CAMERA_RADIUS,
                           light_radius=LIGHT_RADIUS):
    """Camera uniform on the radius-1.5 northern hemisphere looking at the
    origin; lights uniform on the radius-10 northern hemisphere, white by
    default or uniform in RGB for reflection runs."""
    if n_lights < 1:
        raise ValueError("n_lights must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    camera = CameraModel.look_at(hemisphere_point(rng, camera_radius),
                                 width=width, height=height, fov_deg=fov_deg)
    lights = []
    for _ in range(n_lights):
        pos = hemisphere_point(rng, light_radius)
        color = rng.uniform(0.0, 1.0, size=3) if colored_lights else np.ones(3)
        lights.append(LightConfig(position=pos, color=color))
    return camera, lights


# ---------------------------------------------------------------------------
# Shading and rendering
# ---------------------------------------------------------------------------


@dataclass
class SoftShadowConfig:
    radius: float = 0.3
    n_samples: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.radius < 0:
            raise ValueError("radius must be non-negative")


HARD_SHADOWS = SoftShadowConfig(radius=0.0, n_samples=1)


def _disk_basis(axes):
    """Orthonormal (e1, e2) spanning the plane orthogonal to each axis row."""
    a = np.where(np.abs(axes[:, 2:3]) < 0.9,
                 np.tile([0.0, 0.0, 1.0], (len(axes), 1)),
                 np.tile([1.0, 0.0, 0.0], (len(axes), 1)))
    e1 = np.cross(axes, a)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(axes, e1)
    return e1, e2


def _visibility(scene, points, offsets_origin, light: LightConfig,
                shadow: SoftShadowConfig, rng) -> np.ndarray:
    """Fraction of unoccluded shadow rays toward jittered points on a disk of
    the configured radius centered on the light and facing each point."""
    n = len(points)
    to_light = light.position[None, :] - points
    if shadow.radius <= 0.0 or shadow.n_samples == 1 and shadow.radius == 0.0:
        dist = np.linalg.norm(to_light, axis=1)
        dirs = to_light / dist[:, None]
        occ = scene.occluded(points + offsets_origin, dirs, dist - _SHADOW_OFFSET)
        return (~occ).astype(np.float64)

    axes = -to_light / np.linalg.norm(to_light, axis=1, keepdims=True)  # light -> point
    e1, e2 = _disk_basis(axes)
    hits = np.zeros(n)
    for _ in range(shadow.n_samples):
        r = shadow.radius * np.sqrt(rng.uniform(size=(n, 1)))
        ang = rng.uniform(0.0, 2.0 * np.pi, size=(n, 1))
        target = (light.position[None, :]
                  + e1 * (r * np.cos(ang)) + e2 * (r * np.sin(ang)))
        seg = target - points
        dist = np.linalg.norm(seg, axis=1)
        dirs = seg / dist[:, None]
        occ = scene.occluded(points + offsets_origin, dirs, dist - _SHADOW_OFFSET)
        hits += ~occ
    return hits / shadow.n_samples


def soft_shadow_visibility(scene: Scene, p, light: LightConfig, light_radius: float,
                           n_samples: int, seed: int = 0) -> float:
    """Unoccluded fraction of an area light of the given radius seen from p.
    n_samples=1 with radius 0 is the hard shadow test."""
    shadow = SoftShadowConfig(radius=light_radius, n_samples=n_samples, seed=seed)
    rng = np.random.default_rng(seed)
    p = np.asarray(p, dtype=np.float64)[None, :]
    to_light = light.position[None, :] - p
    dirs = to_light / np.linalg.norm(to_light, axis=1, keepdims=True)
    frac = _visibility(scene, p, dirs * _SHADOW_OFFSET, light, shadow, rng)
    return float(frac[0])


def shade_batch(scene: Scene, points, normals, albedo, k_s, shininess, view_dirs,
                lights, ambient=BACKGROUND_AMBIENT, shadow: SoftShadowConfig = HARD_SHADOWS,
                rng=None) -> np.ndarray:
    """Blinn-Phong with shadow visibility, linear RGB out (unclamped).

    Per light: r toward the light, visibility in [0,1]; diffuse albedo*(n.r)+,
    specular k_s*(n.h)^shininess with h = normalize(r+v); both zero when the
    light is behind the surface; contribution scaled by the light color.
    """
    rng = rng or np.random.default_rng(shadow.seed)
    total = ambient * albedo
    origin_off = normals * _SHADOW_OFFSET
    for light in lights:
        to_light = light.position[None, :] - points
        dist = np.linalg.norm(to_light, axis=1, keepdims=True)
        r = to_light / dist
        ndotr = np.sum(normals * r, axis=1)
        front = ndotr > 0.0
        vis = np.zeros(len(points))
        if np.any(front):
            vis[front] = _visibility(scene, points[front], origin_off[front],
                                     light, shadow, rng)
        h = r + view_dirs
        hn = np.linalg.norm(h, axis=1, keepdims=True)
        h = h / np.where(hn < 1e-12, 1.0, hn)
        ndoth = np.clip(np.sum(normals * h, axis=1), 0.0, None)
        diffuse = albedo * np.clip(ndotr, 0.0, None)[:, None]
        spec = (k_s * ndoth ** shininess)[:, None]
        contrib = (diffuse + spec) * light.color[None, :]
        total = total + contrib * (vis * front)[:, None]
    return total


def shade(scene: Scene, hit: SurfaceHit, v, lights, ambient=BACKGROUND_AMBIENT) -> np.ndarray:
    """Single-point shading with hard shadow rays; v points toward the camera."""
    v = np.asarray(v, dtype=np.float64)
    return shade_batch(scene, hit.point[None, :], hit.normal[None, :],
                       hit.material.albedo[None, :],
                       np.array([hit.material.k_s]),
                       np.array([hit.material.shininess]),
                       v[None, :], lights, ambient)[0]


@dataclass
class RenderResult:
    rgb: np.ndarray     # (H, W, 3) float sRGB in [0, 1]
    depth: np.ndarray   # (H, W) float32 ray depth, +inf where no hit
    mask: np.ndarray    # (H, W) bool, object pixels only (ground excluded)


class _ViewHits:
    """Primary-ray intersections of one camera view, shared across lights."""

    def __init__(self, scene: Scene, camera: CameraModel):
        self.scene = scene
        self.camera = camera
        dirs = camera.all_rays()
        origins = np.broadcast_to(camera.center, dirs.shape)
        t, idx = scene.intersect(origins, dirs)
        self.hit = idx >= 0
        self.t = t
        h, w = camera.height, camera.width
        if scene.primitives:
            ground = np.array([prim.is_ground for prim in scene.primitives])
            obj = self.hit & ~ground[np.clip(idx, 0, None)]
        else:
            obj = self.hit
        self.mask = obj.reshape(h, w)
        self.depth = np.where(self.hit, t, np.inf).astype(np.float32).reshape(h, w)

        self.points = camera.center[None, :] + dirs[self.hit] * t[self.hit][:, None]
        self.view_dirs = -dirs[self.hit]
        self.prim_ids = idx[self.hit]
        prim_ids = self.prim_ids
        n = len(self.points)
        self.normals = np.empty((n, 3))
        self.albedo = np.empty((n, 3))
        self.k_s = np.empty(n)
        self.shininess = np.empty(n)
        for i, prim in enumerate(scene.primitives):
            m = prim_ids == i
            if np.any(m):
                self.normals[m] = prim.normals(self.points[m])
                self.albedo[m] = prim.material.albedo
                self.k_s[m] = prim.material.k_s
                self.shininess[m] = prim.material.shininess

    def shade(self, lights, ambient, shadow, rng) -> np.ndarray:
        h, w = self.camera.height, self.camera.width
        rgb = np.zeros((h * w, 3))
        if len(self.points):
            linear = shade_batch(self.scene, self.points, self.normals, self.albedo,
                                 self.k_s, self.shininess, self.view_dirs,
                                 lights, ambient, shadow, rng)
            rgb[self.hit] = linear_to_srgb(np.clip(linear, 0.0, 1.0))
        return rgb.reshape(h, w, 3)


def render(scene: Scene, camera: CameraModel, lights, ambient=BACKGROUND_AMBIENT,
           shadow: SoftShadowConfig = HARD_SHADOWS, shadow_seed=None) -> RenderResult:
    hits = _ViewHits(scene, camera)
    rng = np.random.default_rng(shadow.seed if shadow_seed is None else shadow_seed)
    rgb = hits.shade(lights, ambient, shadow, rng)
    return RenderResult(rgb=rgb, depth=hits.depth, mask=hits.mask)


def render_per_light(scene: Scene, camera: CameraModel, lights,
                     ambient=BACKGROUND_AMBIENT, shadow: SoftShadowConfig = HARD_SHADOWS,
                     shadow_seed=None):
    """One image per light over shared primary hits: (images, depth, mask)."""
    hits = _ViewHits(scene, camera)
    rng = np.random.default_rng(shadow.seed if shadow_seed is None else shadow_seed)
    images = [hits.shade([light], ambient, shadow, rng) for light in lights]
    return images, hits.depth, hits.mask


def view_geometry(scene: Scene, camera: CameraModel):
    """Ray-cast only: (depth, mask) of a view, no shading."""
    hits = _ViewHits(scene, camera)
    return hits.depth, hits.mask


def view_light_analysis(scene: Scene, camera: CameraModel, light: LightConfig,
                        shadow: SoftShadowConfig = HARD_SHADOWS, seed: int = 0):
    """Per-pixel light bookkeeping for one view: visibility fraction of the
    light, n.r (cosine toward the light), and primitive id; -1 / NaN where
    nothing is hit. Used to classify pixels as fully shadowed or fully lit."""
    hits = _ViewHits(scene, camera)
    h, w = camera.height, camera.width
    vis_img = np.full(h * w, np.nan)
    ndotr_img = np.full(h * w, np.nan)
    prim_img = np.full(h * w, -1, dtype=int)

    if len(hits.points):
        rng = np.random.default_rng(seed)
        to_light = light.position[None, :] - hits.points
        r = to_light / np.linalg.norm(to_light, axis=1, keepdims=True)
        ndotr = np.sum(hits.normals * r, axis=1)
        vis = _visibility(scene, hits.points, hits.normals * _SHADOW_OFFSET,
                          light, shadow, rng)
        vis_img[hits.hit] = vis
        ndotr_img[hits.hit] = ndotr
        prim_img[hits.hit] = hits.prim_ids
    return (vis_img.reshape(h, w), ndotr_img.reshape(h, w),
            prim_img.reshape(h, w), hits.mask)


def sample_surface_points(scene: Scene, n: int = 2048, seed: int = 0) -> np.ndarray:
    """Area-weighted uniform samples over the object surface (ground excluded)."""
    prims = scene.object_primitives()
    areas = np.array([p.area() for p in prims])
    if len(prims) == 0 or areas.sum() <= 0:
        raise ValueError("scene has no sampleable object surface")
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(n, areas / areas.sum())
    parts = [p.sample_surface(rng, c) for p, c in zip(prims, counts) if c > 0]
    pts = np.concatenate(parts, axis=0)
    return pts[rng.permutation(n)]
