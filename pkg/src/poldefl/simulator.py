"""Forward renderer: ground-truthed four-channel polarization stacks of
analytic specular surfaces reflecting display patterns.

Per camera pixel the tracer intersects the ray with the surface, reflects
it about the surface normal and intersects the reflected ray with the
display plane. The renderer then synthesizes the four polarizer channels
from the Fresnel reflectances:

    I(a) = (I_s + I_p)/2 + (I_s - I_p)/2 * cos(2*(a - aolp))

with the s axis perpendicular to the plane of incidence. An unpolarized
display is assumed, so the source splits evenly between s and p.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import RectBivariateSpline

from . import geometry as geo
from .codec import PatternFrame, PatternSpec, generate_patterns
from .geometry import DisplayPlane, PinholeCamera, WorkingDistanceInterval
from .polarization import MaterialOpticalProperties, dop_model, fresnel_reflectance


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")

    def intersect(self, origin, dirs):
        oc = origin - self.center
        b = geo.dot(dirs, oc)
        c = geo.dot(oc, oc) - self.radius**2
        disc = b * b - c
        with np.errstate(invalid="ignore"):
            sq = np.sqrt(disc)
        t = -b - sq  # near intersection; camera outside the sphere
        hit = (disc > 0) & (t > 1e-9)
        t = np.where(hit, t, np.nan)
        points = origin + t[..., None] * dirs
        normals = (points - self.center) / self.radius
        return t, points, normals


@dataclass(frozen=True)
class Plane:
    point: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "point", np.asarray(self.point, dtype=np.float64))
        object.__setattr__(self, "normal", geo.normalize(self.normal))

    def intersect(self, origin, dirs):
        denom = geo.dot(dirs, self.normal)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = geo.dot(self.point - origin, self.normal) / denom
        hit = (np.abs(denom) > 1e-12) & (t > 1e-9)
        t = np.where(hit, t, np.nan)
        points = origin + t[..., None] * dirs
        normals = np.broadcast_to(self.normal, points.shape).copy()
        return t, points, normals


@dataclass(frozen=True)
class HeightField:
    """z = f(x, y) over a rectangle, bicubic-interpolated from a grid.

    Intersection: coarse march at a quarter of the grid cell size, then
    bisection refinement of the first sign change of z_ray - f.
    """

    x0: float
    y0: float
    dx: float
    dy: float
    z_grid: np.ndarray  # (ny, nx)

    def __post_init__(self):
        z = np.asarray(self.z_grid, dtype=np.float64)
        object.__setattr__(self, "z_grid", z)
        if z.shape[0] < 4 or z.shape[1] < 4 or not np.all(np.isfinite(z)):
            raise ValueError("heightfield grid must be >= 4x4 and finite")

    def _spline(self) -> RectBivariateSpline:
        ny, nx = self.z_grid.shape
        xs = self.x0 + self.dx * np.arange(nx)
        ys = self.y0 + self.dy * np.arange(ny)
        return RectBivariateSpline(ys, xs, self.z_grid, kx=3, ky=3)

    def _height(self, spline, x, y):
        ny, nx = self.z_grid.shape
        inside = (
            (x >= self.x0)
            & (x <= self.x0 + self.dx * (nx - 1))
            & (y >= self.y0)
            & (y <= self.y0 + self.dy * (ny - 1))
        )
        z = spline(np.clip(y, self.y0, self.y0 + self.dy * (ny - 1)),
                   np.clip(x, self.x0, self.x0 + self.dx * (nx - 1)), grid=False)
        return z, inside

    def intersect(self, origin, dirs, t_max: float = 1e4, refine: int = 30):
        spline = self._spline()
        step = 0.25 * min(self.dx, self.dy)
        ny, nx = self.z_grid.shape
        lo = np.array([self.x0, self.y0, float(np.min(self.z_grid))])
        hi = np.array([self.x0 + self.dx * (nx - 1),
                       self.y0 + self.dy * (ny - 1),
                       float(np.max(self.z_grid))])

        def f(t):
            p = origin + t[..., None] * dirs
            z, inside = self._height(spline, p[..., 0], p[..., 1])
            return np.where(inside, p[..., 2] - z, np.nan)

        # Slab test against the grid's bounding box bounds the march.
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (lo - origin) / dirs
            tb = (hi - origin) / dirs
        t_near = np.max(np.minimum(ta, tb), axis=-1)
        t_far = np.min(np.maximum(ta, tb), axis=-1)
        t_near = np.clip(t_near, 1e-6, t_max)
        t_far = np.minimum(t_far, t_max)
        span = float(np.nanmax(np.where(t_far > t_near, t_far - t_near, 0.0)))
        steps = max(2, int(np.ceil(span / step)))

        shape = dirs.shape[:-1]
        t_lo = np.full(shape, np.nan)
        t_hi = np.full(shape, np.nan)
        f_lo = np.full(shape, np.nan)
        prev_t = np.full(shape, np.nan)
        prev_f = np.full(shape, np.nan)
        for k in range(steps + 1):
            tt = t_near + (t_far - t_near) * (k / steps)
            ft = f(tt)
            # first sign change in either direction brackets the hit
            bracket = np.isnan(t_lo) & (prev_f * ft <= 0) & np.isfinite(prev_f) & np.isfinite(ft)
            t_lo = np.where(bracket, prev_t, t_lo)
            t_hi = np.where(bracket, tt, t_hi)
            f_lo = np.where(bracket, prev_f, f_lo)
            prev_t, prev_f = tt, ft
        hit = np.isfinite(t_lo)
        for _ in range(refine):
            mid = 0.5 * (t_lo + t_hi)
            fm = f(mid)
            same = np.sign(fm) == np.sign(f_lo)
            t_lo = np.where(hit & same, mid, t_lo)
            f_lo = np.where(hit & same, fm, f_lo)
            t_hi = np.where(hit & ~same, mid, t_hi)
        t = np.where(hit, 0.5 * (t_lo + t_hi), np.nan)
        points = origin + t[..., None] * dirs
        x, y = points[..., 0], points[..., 1]
        gx = spline(y, x, dx=0, dy=1, grid=False)
        gy = spline(y, x, dx=1, dy=0, grid=False)
        normals = np.stack([-gx, -gy, np.ones_like(gx)], axis=-1)
        normals /= np.linalg.norm(normals, axis=-1, keepdims=True)
        # two-sided sheet: orient toward the viewer
        toward = geo.dot(normals, dirs) > 0
        normals = np.where(toward[..., None], -normals, normals)
        return t, points, normals


@dataclass(frozen=True)
class NoiseModel:
    """Sensor noise: additive Gaussian (fraction of full scale), optional
    photon noise, optional quantization. Deterministic via a counter-based
    (Philox) stream keyed on (seed, frame, channel)."""

    sigma: float = 0.0
    photon: bool = False
    photon_full_well: float = 10000.0
    bits: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.bits not in (0, 8, 10, 12, 16):
            raise ValueError("bits must be one of 0, 8, 10, 12, 16")

    def apply(self, image: np.ndarray, frame: int, channel: int) -> np.ndarray:
        out = np.asarray(image, dtype=np.float64)
        rng = np.random.Generator(
            np.random.Philox(key=[self.seed, (frame << 32) | channel])
        )
        if self.photon:
            n = self.photon_full_well
            out = rng.poisson(np.clip(out, 0.0, None) * n) / n
        if self.sigma > 0:
            out = out + rng.normal(0.0, self.sigma, size=out.shape)
        if self.bits:
            levels = 2**self.bits - 1
            out = np.round(np.clip(out, 0.0, 1.0) * levels) / levels
        return out


@dataclass(frozen=True)
class Scene:
    """Everything the simulator and reconstructor share."""

    camera: PinholeCamera
    display: DisplayPlane
    interval: WorkingDistanceInterval
    surface: object
    material: MaterialOpticalProperties
    pattern: PatternSpec = field(default_factory=PatternSpec)
    noise: NoiseModel = field(default_factory=NoiseModel)
    dop_model: str = "eq6"  # 'eq5' | 'eq6' | 'exact'
    auto_expose: bool = True
    exposure_headroom: float = 0.95


@dataclass
class GroundTruth:
    """Per-pixel ground truth of a traced scene (nan off the hit mask)."""

    depth: np.ndarray
    points: np.ndarray
    normals: np.ndarray
    theta: np.ndarray
    display_ij: np.ndarray
    display_points: np.ndarray
    mask: np.ndarray


def trace(scene: Scene) -> GroundTruth:
    """Intersect all camera rays with the surface, reflect, and intersect
    with the display. A pixel is a miss if the ray misses the surface, the
    depth falls outside the working interval, or the reflected ray misses
    the display extent."""
    cam = scene.camera
    rays = cam.ray_grid()
    origin = cam.center
    t, points, normals = scene.surface.intersect(origin, rays)
    mask = np.isfinite(t)
    mask &= scene.interval.contains(np.where(mask, t, 0.0)) & np.isfinite(t)
    # surface must face the camera
    facing = geo.dot(normals, -rays) > 1e-9
    mask &= facing

    refl = geo.reflect(rays, normals)
    t_d, plane_hit = scene.display.intersect_ray(points, refl)
    d_points = points + np.where(np.isfinite(t_d), t_d, 0.0)[..., None] * refl
    ij = scene.display.point_to_index(d_points)
    on_display = (
        plane_hit
        & (ij[..., 0] >= 0)
        & (ij[..., 0] <= scene.display.width)
        & (ij[..., 1] >= 0)
        & (ij[..., 1] <= scene.display.height)
    )
    mask &= on_display

    view = -rays
    cos_theta = np.clip(geo.dot(view, normals), -1.0, 1.0)
    theta = np.arccos(cos_theta)

    nanify = lambda a: np.where(mask[..., None] if a.ndim == 3 else mask, a, np.nan)
    return GroundTruth(
        depth=nanify(t),
        points=nanify(points),
        normals=nanify(normals),
        theta=nanify(theta),
        display_ij=nanify(ij),
        display_points=nanify(d_points),
        mask=mask,
    )


def aolp_of(scene: Scene, truth: GroundTruth) -> np.ndarray:
    """Sensor-plane orientation of the s-polarization axis, in [0, pi).

    The s axis is perpendicular to the plane of incidence; its camera-frame
    x-y components give the angle the polarizer analysis sees. Degenerate
    (theta = 0) pixels get 0.
    """
    cam = scene.camera
    rays = cam.ray_grid()
    s_axis = np.cross(rays, truth.normals)
    n = np.linalg.norm(s_axis, axis=-1)
    ok = n > 1e-12
    s_axis = np.where(ok[..., None], s_axis / np.where(ok, n, 1.0)[..., None], 0.0)
    s_cam = cam.world_to_camera(s_axis)
    phi = np.mod(np.arctan2(s_cam[..., 1], s_cam[..., 0]), np.pi)
    return np.where(ok, phi, 0.0)


def sample_bilinear(raster: np.ndarray, ij: np.ndarray) -> np.ndarray:
    """Bilinear sample of a display raster at real pixel indices (i, j);
    pixel centres sit at integer + 0.5."""
    h, w = raster.shape
    i = np.clip(np.asarray(ij[..., 0]) - 0.5, 0.0, w - 1.0)
    j = np.clip(np.asarray(ij[..., 1]) - 0.5, 0.0, h - 1.0)
    i0 = np.clip(np.floor(i).astype(int), 0, w - 2)
    j0 = np.clip(np.floor(j).astype(int), 0, h - 2)
    fi = i - i0
    fj = j - j0
    v00 = raster[j0, i0]
    v01 = raster[j0, i0 + 1]
    v10 = raster[j0 + 1, i0]
    v11 = raster[j0 + 1, i0 + 1]
    return (1 - fj) * ((1 - fi) * v00 + fi * v01) + fj * ((1 - fi) * v10 + fi * v11)


CHANNEL_ANGLES = np.deg2rad([0.0, 45.0, 90.0, 135.0])
CHANNEL_NAMES = ("I000", "I045", "I090", "I135")


def render_frame(scene: Scene, truth: GroundTruth, pattern: np.ndarray) -> list[np.ndarray]:
    """Noiseless four-channel stack for one display pattern.

    The total reflected power always follows the exact Fresnel
    reflectances; the synthesized DoP follows scene.dop_model so the
    model-matched modes isolate pipeline numerics from model error.
    """
    theta = np.where(truth.mask, truth.theta, 0.0)
    rs, rp = fresnel_reflectance(theta, scene.material.m, scene.material.kappa)
    total = sample_bilinear(pattern, np.where(np.isfinite(truth.display_ij), truth.display_ij, 0.0))
    total = np.where(truth.mask, total, 0.0) * 0.5 * (rs + rp)
    if scene.dop_model == "exact":
        rho = np.where(rs + rp > 0, (rs - rp) / np.where(rs + rp > 0, rs + rp, 1.0), 0.0)
    else:
        rho = dop_model(theta, scene.material, scene.dop_model)
    aolp = aolp_of(scene, truth)
    mean = total / 2.0
    amp = total * rho / 2.0
    return [
        np.where(truth.mask, mean + amp * np.cos(2.0 * (a - aolp)), 0.0)
        for a in CHANNEL_ANGLES
    ]


@dataclass
class RenderedFrame:
    pattern: PatternFrame
    channels: list[np.ndarray]  # I000, I045, I090, I135


def render_stack(scene: Scene, truth: GroundTruth | None = None):
    """Render all pattern frames of the scene.

    Returns (frames, report). With auto_expose the whole sequence is
    scaled by a single gain so the brightest noiseless sample sits at
    exposure_headroom of full scale; noise and quantization are applied
    after exposure, per (frame, channel) noise substream.
    """
    if truth is None:
        truth = trace(scene)
    patterns = generate_patterns(scene.pattern, scene.display)
    clean = [render_frame(scene, truth, p.raster) for p in patterns]
    peak = max((float(np.max(ch)) for frame in clean for ch in frame), default=0.0)
    gain = scene.exposure_headroom / peak if (scene.auto_expose and peak > 0) else 1.0
    frames = []
    for f_idx, (pat, chans) in enumerate(zip(patterns, clean)):
        noisy = [
            scene.noise.apply(gain * ch, f_idx, c_idx) for c_idx, ch in enumerate(chans)
        ]
        frames.append(RenderedFrame(pattern=pat, channels=noisy))
    report = {
        "frames": len(frames),
        "exposure_gain": gain,
        "peak_noiseless": peak,
        "dop_model": scene.dop_model,
        "hit_fraction": float(np.mean(truth.mask)),
    }
    return frames, report


def render_exact_vs_model(scene: Scene, truth: GroundTruth | None = None) -> np.ndarray:
    """Per-pixel |rho_exact - rho_eq6| over the hit mask (metals only)."""
    if scene.material.is_dielectric:
        raise ValueError("model-mismatch diagnostic is metal-only")
    if truth is None:
        truth = trace(scene)
    theta = np.where(truth.mask, truth.theta, 0.0)
    exact = dop_model(theta, scene.material, "exact")
    approx = dop_model(theta, scene.material, "eq6")
    return np.where(truth.mask, np.abs(exact - approx), np.nan)
