import numpy as np
import pytest

from lightfields.nets import LightConfig
from lightfields import oracle
from lightfields.oracle import (
    Box,
    CameraModel,
    Cylinder,
    GroundPlane,
    HARD_SHADOWS,
    Material,
    Scene,
    SoftShadowConfig,
    Sphere,
    chair_scene,
    render,
    sample_surface_points,
    sample_view_and_lights,
    scene_from_spec,
    shade,
    soft_shadow_visibility,
    sphere_scene,
)


# --- Independent distance oracles (never the renderer's own intersectors) ---

def _dist_sphere(p, prim):
    return np.abs(np.linalg.norm(p - prim.center, axis=-1) - prim.radius)


def _dist_box(p, prim):
    c = (prim.lo + prim.hi) / 2.0
    half = (prim.hi - prim.lo) / 2.0
    q = np.abs(p - c) - half
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(np.max(q, axis=-1), 0.0)
    return np.abs(outside + inside)


def _dist_cylinder(p, prim):
    dr = np.hypot(p[..., 0] - prim.cx, p[..., 1] - prim.cy) - prim.radius
    mid = (prim.z0 + prim.z1) / 2.0
    dz = np.abs(p[..., 2] - mid) - (prim.z1 - prim.z0) / 2.0
    q = np.stack([dr, dz], axis=-1)
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(np.max(q, axis=-1), 0.0)
    return np.abs(outside + inside)


def _dist_plane(p, prim):
    return np.abs(p[..., 2] - prim.height)


def surface_distance(scene, points):
    dists = []
    for prim in scene.primitives:
        if isinstance(prim, Sphere):
            dists.append(_dist_sphere(points, prim))
        elif isinstance(prim, Box):
            dists.append(_dist_box(points, prim))
        elif isinstance(prim, Cylinder):
            dists.append(_dist_cylinder(points, prim))
        elif isinstance(prim, GroundPlane):
            dists.append(_dist_plane(points, prim))
    return np.min(dists, axis=0)


def gray(k_s=0.0, shininess=16.0):
    return Material(albedo=[0.5, 0.5, 0.5], k_s=k_s, shininess=shininess)


# ---------------------------------------------------------------------------
# View / light sampling
# ---------------------------------------------------------------------------


def test_sampled_cameras_and_lights_on_hemispheres():
    for seed in range(20):
        cam, lights = sample_view_and_lights(seed, n_lights=3)
        assert abs(np.linalg.norm(cam.center) - 1.5) < 1e-9
        assert cam.center[2] > 0
        for l in lights:
            assert abs(np.linalg.norm(l.position) - 10.0) < 1e-9
            assert l.position[2] > 0
            np.testing.assert_array_equal(l.color, np.ones(3))


def test_sampling_deterministic_and_colored():
    cam_a, la = sample_view_and_lights(5, 2, colored_lights=True)
    cam_b, lb = sample_view_and_lights(5, 2, colored_lights=True)
    np.testing.assert_array_equal(cam_a.center, cam_b.center)
    for x, y in zip(la, lb):
        np.testing.assert_array_equal(x.color, y.color)
        assert np.all(x.color <= 1.0) and np.all(x.color >= 0.0)
    with pytest.raises(ValueError):
        sample_view_and_lights(0, 0)


# ---------------------------------------------------------------------------
# Shading
# ---------------------------------------------------------------------------


def occluded_setup():
    # A big box between the shaded sphere point and the only light.
    sphere = Sphere([0, 0, 0], 0.4, gray())
    blocker = Box([-2, -2, 2], [2, 2, 3], gray())
    scene = Scene([sphere, blocker])
    hit = scene.surface_hit([0, 0, 1.5], [0, 0, -1])
    light = LightConfig(position=[0, 0, 10], color=[1, 1, 1])
    return scene, hit, light


def test_fully_occluded_point_gets_exactly_ambient():
    scene, hit, light = occluded_setup()
    out = shade(scene, hit, v=[0, 0, 1.0], lights=[light], ambient=0.2)
    np.testing.assert_array_equal(out, 0.2 * hit.material.albedo)


def test_light_and_view_along_normal_diffuse_only():
    scene = Scene([Sphere([0, 0, 0], 0.4, gray(k_s=0.0))])
    hit = scene.surface_hit([0, 0, 1.5], [0, 0, -1])
    light = LightConfig(position=[0, 0, 10], color=[1, 1, 1])
    out = shade(scene, hit, v=[0, 0, 1.0], lights=[light], ambient=0.2)
    np.testing.assert_allclose(out, hit.material.albedo * 1.0 + 0.2 * hit.material.albedo,
                               rtol=0, atol=1e-12)


def test_grazing_light_contributes_nothing():
    scene = Scene([Sphere([0, 0, 0], 0.4, gray(k_s=0.5))])
    hit = scene.surface_hit([0, 0, 1.5], [0, 0, -1])  # normal +z
    light = LightConfig(position=[10, 0, 0], color=[1, 1, 1])  # n.r = 0
    out = shade(scene, hit, v=[0, 0, 1.0], lights=[light], ambient=0.2)
    np.testing.assert_array_equal(out, 0.2 * hit.material.albedo)


def test_shading_linear_in_light_color():
    scene = chair_scene(3)
    hit = scene.surface_hit([0, -1.5, 0.3], [0, 1.0, -0.25])
    assert hit is not None
    base = LightConfig(position=[2, -3, 9], color=[1.0, 1.0, 1.0])
    lam = 0.37
    scaled = LightConfig(position=base.position, color=lam * base.color)
    ambient_term = 0.2 * hit.material.albedo
    a = shade(scene, hit, v=[0, -1.0, 0.25], lights=[base]) - ambient_term
    b = shade(scene, hit, v=[0, -1.0, 0.25], lights=[scaled]) - ambient_term
    np.testing.assert_allclose(b, lam * a, rtol=0, atol=1e-15)


def test_adding_occluder_never_brightens():
    sphere = Sphere([0, 0, 0], 0.4, gray(k_s=0.3))
    light = LightConfig(position=[3, 1, 9], color=[1, 1, 1])
    open_scene = Scene([sphere])
    hit = open_scene.surface_hit([0, 0, 1.5], [0.05, 0.02, -1.0])
    blocked = Scene([sphere, Box([-2, -2, 1.5], [2, 2, 1.7], gray())])
    bright = shade(open_scene, hit, v=[0, 0, 1.0], lights=[light])
    dark = shade(blocked, hit, v=[0, 0, 1.0], lights=[light])
    assert np.all(dark <= bright + 1e-15)


# ---------------------------------------------------------------------------
# Soft shadows
# ---------------------------------------------------------------------------


def test_soft_visibility_unoccluded_is_one():
    scene = Scene([Sphere([5, 5, 0], 0.1, gray())])
    light = LightConfig(position=[0, 0, 10], color=[1, 1, 1])
    assert soft_shadow_visibility(scene, [0, 0, 0], light, 0.3, 64, seed=1) == 1.0


def test_soft_visibility_fully_occluded_is_zero():
    scene = Scene([Box([-4, -4, 4], [4, 4, 5], gray())])
    light = LightConfig(position=[0, 0, 10], color=[1, 1, 1])
    assert soft_shadow_visibility(scene, [0, 0, 0], light, 0.3, 64, seed=1) == 0.0


def test_soft_visibility_half_blocked_near_half():
    # Box edge on the light axis: half the disk is shadowed.
    scene = Scene([Box([0, -5, 4], [5, 5, 6], gray())])
    light = LightConfig(position=[0, 0, 10], color=[1, 1, 1])
    frac = soft_shadow_visibility(scene, [0, 0, 0], light, 0.5, 256, seed=3)
    assert abs(frac - 0.5) < 0.1


def test_hard_shadow_degenerate_config():
    scene = Scene([Box([-4, -4, 4], [4, 4, 5], gray())])
    light = LightConfig(position=[0, 0, 10], color=[1, 1, 1])
    assert soft_shadow_visibility(scene, [0, 0, 0], light, 0.0, 1) == 0.0
    assert soft_shadow_visibility(scene, [20, 0, 0], light, 0.0, 1) == 1.0


# ---------------------------------------------------------------------------
# Camera and rendering
# ---------------------------------------------------------------------------


def test_unproject_axis_case():
    cam = CameraModel(fx=100, fy=100, cx=32, cy=32, width=64, height=64,
                      rotation=np.eye(3), center=np.zeros(3))
    p = cam.unproject(np.array([31.5]), np.array([31.5]), np.array([1.0]))[0]
    np.testing.assert_allclose(p, [0, 0, -1.0], atol=1e-12)


def test_project_unproject_round_trip():
    cam, _ = sample_view_and_lights(11, 1)
    rng = np.random.default_rng(0)
    us = rng.uniform(0, cam.width - 1, size=1000)
    vs = rng.uniform(0, cam.height - 1, size=1000)
    ts = rng.uniform(0.5, 3.0, size=1000)
    pts = cam.unproject(us, vs, ts)
    uv = cam.project(pts)
    np.testing.assert_allclose(uv[:, 0], us, atol=1e-9)
    np.testing.assert_allclose(uv[:, 1], vs, atol=1e-9)


def test_empty_scene_renders_background():
    cam = CameraModel.look_at([0, 0.01, 1.5], width=32, height=32)
    out = render(Scene([]), cam, [LightConfig(position=[0, 0, 10], color=[1, 1, 1])])
    assert not out.mask.any()
    np.testing.assert_array_equal(out.rgb, 0.0)
    assert np.all(np.isinf(out.depth))


def center_sphere_camera():
    # Odd resolution puts one pixel center exactly on the optical axis.
    return CameraModel.look_at([0, 1e-8, 1.5], width=129, height=129)


def test_unit_sphere_center_depth():
    scene = Scene([Sphere([0, 0, 0], 1.0, gray())])
    cam = center_sphere_camera()
    out = render(scene, cam, [LightConfig(position=[0, 0, 10], color=[1, 1, 1])])
    assert out.mask[64, 64]
    assert abs(out.depth[64, 64] - 0.5) < 1e-6


def test_unprojected_center_pixel_on_sphere():
    scene = Scene([Sphere([0, 0, 0], 1.0, gray())])
    cam = center_sphere_camera()
    out = render(scene, cam, [LightConfig(position=[0, 0, 10], color=[1, 1, 1])])
    p = cam.unproject(np.array([64.0]), np.array([64.0]), np.array([float(out.depth[64, 64])]))[0]
    assert abs(np.linalg.norm(p) - 1.0) < 1e-6


def test_depth_surface_consistency_chair():
    scene = chair_scene(7, with_ground=True)
    cam, lights = sample_view_and_lights(7, 1, width=64, height=64)
    out = render(scene, cam, lights)
    assert out.mask.sum() > 100
    vs, us = np.nonzero(out.mask)
    pts = cam.unproject(us.astype(float), vs.astype(float),
                        out.depth[vs, us].astype(np.float64))
    dist = surface_distance(scene, pts)
    assert dist.max() < 1e-5


def test_ground_excluded_from_mask_but_rendered():
    scene = chair_scene(2, with_ground=True)
    cam, lights = sample_view_and_lights(2, 1, width=64, height=64)
    out = render(scene, cam, lights)
    hit = np.isfinite(out.depth)
    assert hit.sum() > out.mask.sum()  # ground pixels hit but not masked
    ground_px = hit & ~out.mask
    assert out.rgb[ground_px].mean() > 0  # ground is shaded, not background


def test_render_deterministic_with_soft_shadows():
    scene = chair_scene(4, with_ground=True)
    cam, lights = sample_view_and_lights(4, 2, width=48, height=48)
    soft = SoftShadowConfig(radius=0.3, n_samples=8, seed=9)
    a = render(scene, cam, lights, shadow=soft)
    b = render(scene, cam, lights, shadow=soft)
    np.testing.assert_array_equal(a.rgb, b.rgb)
    np.testing.assert_array_equal(a.depth, b.depth)


def test_scene_from_spec_reconstructs():
    scene = chair_scene(12, with_armrests=True, with_ground=True)
    clone = scene_from_spec(scene.spec)
    cam, lights = sample_view_and_lights(1, 1, width=32, height=32)
    np.testing.assert_array_equal(render(scene, cam, lights).rgb,
                                  render(clone, cam, lights).rgb)
    with pytest.raises(ValueError, match="unknown scene kind"):
        scene_from_spec({"kind": "teapot"})


# ---------------------------------------------------------------------------
# Surface sampling
# ---------------------------------------------------------------------------


def test_surface_samples_lie_on_primitives():
    scene = chair_scene(9)
    pts = sample_surface_points(scene, n=2048, seed=1)
    assert pts.shape == (2048, 3)
    assert surface_distance(scene, pts).max() < 1e-9


def test_surface_samples_default_count_and_determinism():
    scene = sphere_scene(1)
    a = sample_surface_points(scene, seed=5)
    b = sample_surface_points(scene, seed=5)
    assert a.shape == (2048, 3)
    np.testing.assert_array_equal(a, b)


def test_sphere_sample_mean_within_monte_carlo_bound():
    scene = sphere_scene(1)
    pts = sample_surface_points(scene, n=2048, seed=3)
    r = scene.primitives[0].radius
    sigma_mean = r / np.sqrt(3.0 * len(pts))
    assert np.all(np.abs(pts.mean(axis=0)) < 3.0 * sigma_mean)


def test_zero_area_scene_rejected():
    scene = Scene([GroundPlane(-0.5, gray())])
    with pytest.raises(ValueError, match="no sampleable"):
        sample_surface_points(scene, seed=0)


def test_ground_never_sampled():
    scene = chair_scene(3, with_ground=True)
    pts = sample_surface_points(scene, n=512, seed=2)
    assert np.all(pts[:, 2] >= -0.5)  # legs end at -0.5; ground sits at -0.501
