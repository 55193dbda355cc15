"""Ambiguity-free fusion of polarimetric incidence angles with the
deflectometric correspondence, plus the orthographic baseline.

Per pixel: the measured DoP gives two candidate incidence angles. For
each candidate the half-angle equation

    half_angle(O + s*d, O, D) = theta

is solved for the standoff s by bisection (the left side is strictly
decreasing in s). Candidates whose root falls outside the working
distance interval are discarded; the surviving root fixes the surface
point and, through the bisector construction, the normal.
"""

from __future__ import annotations

from enum import IntEnum
from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .codec import CorrespondenceMap
from .geometry import DisplayPlane, PinholeCamera, WorkingDistanceInterval, half_angle_along_ray
from .polarization import (
    IncidenceCandidates,
    MaterialOpticalProperties,
    StokesEstimate,
    invert_dop,
)

# Retro-reflection threshold: below this theta the half-angle equation is
# satisfied by every s, so depth is indeterminate.
THETA_ZERO_EPS = 1e-6


class Status(IntEnum):
    OK = 0
    NO_ROOT = 1
    BOTH_FEASIBLE = 2
    SATURATED_DOP = 3
    INVALID_DECODE = 4


@dataclass
class SurfaceSolution:
    """Per-pixel fused solution (nan where not solved)."""

    depth: np.ndarray  # standoff s along the ray, mm
    t: np.ndarray  # dimensionless depth s/|OC|, chip at the unit focal plane
    points: np.ndarray
    normals: np.ndarray
    theta: np.ndarray
    branch: np.ndarray  # 0 = low, 1 = high, -1 = n/a
    status: np.ndarray

    @property
    def ok(self) -> np.ndarray:
        return self.status == Status.OK

    def counts(self) -> dict[str, int]:
        return {s.name.lower(): int(np.sum(self.status == s)) for s in Status}


def solve_depth_for_theta(
    origin: np.ndarray,
    dirs: np.ndarray,
    D: np.ndarray,
    theta,
    interval: WorkingDistanceInterval,
    tol_s: float = 1e-3,
):
    """Bisection root of half_angle(O + s*d, O, D) = theta on the working
    interval. Vectorized; returns s with nan where no root exists (theta
    outside [g(s_max), g(s_min)]) or where theta is degenerate (~0).
    """
    theta = np.asarray(theta, dtype=np.float64)
    g = lambda s: half_angle_along_ray(origin, dirs, D, s)
    shape = np.broadcast_shapes(theta.shape, dirs.shape[:-1])
    lo = np.full(shape, float(interval.s_min))
    hi = np.full(shape, float(interval.s_max))
    g_lo = g(lo)
    g_hi = g(hi)
    # D on the ray line is the retro-reflective degeneracy: theta = 0 for
    # every s beyond D, so no root determines the depth.
    rel = np.asarray(D, dtype=np.float64) - origin
    along = geo.dot(rel, dirs)
    perp = np.linalg.norm(rel - along[..., None] * dirs, axis=-1)
    feasible = (
        (g_lo >= theta) & (g_hi <= theta) & (theta > THETA_ZERO_EPS) & (perp > 1e-6)
    )
    span = interval.s_max - interval.s_min
    iters = max(1, int(np.ceil(np.log2(span / tol_s))) + 1)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        g_mid = g(mid)
        go_right = g_mid > theta  # g decreasing: root is above mid
        lo = np.where(go_right, mid, lo)
        hi = np.where(go_right, hi, mid)
    s = 0.5 * (lo + hi)
    return np.where(feasible, s, np.nan)


def fuse_map(
    stokes: StokesEstimate,
    corr: CorrespondenceMap,
    cam: PinholeCamera,
    disp: DisplayPlane,
    interval: WorkingDistanceInterval,
    mat: MaterialOpticalProperties,
    dop_model: str = "eq6",
    tol_s: float = 1e-3,
    tol_theta: float = 1e-7,
    strict_dop: bool = False,
    prefer_branch: str = "low",
):
    """Fuse DoP and correspondence over the full raster.

    Returns (SurfaceSolution, stats). Feasibility filtering over the
    working interval realizes the geometric constraints; a pixel where
    both branches survive is resolved by prefer_branch and flagged
    BOTH_FEASIBLE.
    """
    if stokes.dop.shape != corr.i.shape:
        raise ValueError("stokes and correspondence rasters must be co-registered")
    shape = stokes.dop.shape
    rays = cam.ray_grid()
    if rays.shape[:-1] != shape:
        raise ValueError("raster dimensions do not match the camera model")
    origin = cam.center

    measurable = stokes.valid & corr.valid
    cand = invert_dop(
        stokes.dop, mat, tol=tol_theta, model=dop_model, clamp_saturated=not strict_dop
    )

    ij = np.stack([corr.i, corr.j], axis=-1)
    D = disp.index_to_point(np.where(measurable[..., None], ij, 0.0))

    theta_low = np.where(measurable, cand.theta_low, np.nan)
    theta_high = np.where(measurable, cand.theta_high, np.nan)
    with np.errstate(invalid="ignore"):
        s_low = solve_depth_for_theta(origin, rays, D, np.nan_to_num(theta_low), interval, tol_s)
        s_high = solve_depth_for_theta(origin, rays, D, np.nan_to_num(theta_high), interval, tol_s)
    s_low = np.where(np.isfinite(theta_low), s_low, np.nan)
    s_high = np.where(np.isfinite(theta_high), s_high, np.nan)

    low_ok = np.isfinite(s_low)
    high_ok = np.isfinite(s_high)
    both = low_ok & high_ok
    use_low = low_ok & (~high_ok | (prefer_branch == "low"))

    s = np.where(use_low, s_low, s_high)
    theta = np.where(use_low, theta_low, theta_high)
    branch = np.where(use_low, 0, np.where(high_ok, 1, -1))
    solved = low_ok | high_ok

    status = np.full(shape, int(Status.INVALID_DECODE), dtype=np.int16)
    status[measurable] = Status.NO_ROOT
    status[measurable & solved] = Status.OK
    status[measurable & solved & both] = Status.BOTH_FEASIBLE
    if strict_dop:
        status[measurable & cand.saturated] = Status.INVALID_DECODE
    else:
        status[measurable & solved & cand.saturated] = Status.SATURATED_DOP
    usable = np.isin(status, (Status.OK, Status.BOTH_FEASIBLE, Status.SATURATED_DOP))

    s = np.where(usable, s, np.nan)
    points = origin + s[..., None] * rays
    normals = np.full(points.shape, np.nan)
    if np.any(usable):
        normals[usable] = geo.bisector_normal(points[usable], origin, D[usable])
    theta = np.where(usable, theta, np.nan)
    branch = np.where(usable, branch, -1)

    # t of the classic parameterization OS = t*OC, with the chip point C
    # placed on the unit focal plane (|OC| per pixel in focal units).
    d_cam = cam.world_to_camera(rays)
    oc = 1.0 / d_cam[..., 2]
    t_dimless = s / oc

    sol = SurfaceSolution(
        depth=s,
        t=t_dimless,
        points=points,
        normals=normals,
        theta=theta,
        branch=branch,
        status=status,
    )
    counts = sol.counts()
    n_meas = int(np.sum(measurable))
    stats = {
        "pixels": int(np.prod(shape)),
        "measurable": n_meas,
        "counts": counts,
        "ok_fraction": counts["ok"] / n_meas if n_meas else 0.0,
        "theta_peak": cand.theta_peak,
        "rho_max": cand.rho_max,
    }
    return sol, stats


def fuse_pixel(
    rho: float,
    D: np.ndarray,
    ray: np.ndarray,
    origin: np.ndarray,
    interval: WorkingDistanceInterval,
    mat: MaterialOpticalProperties,
    **kwargs,
):
    """Single-pixel convenience wrapper around the vectorized fusion."""
    from .codec import CorrespondenceMap  # local: avoid cycles in doc tools

    cand = invert_dop(np.asarray([rho]), mat, model=kwargs.get("dop_model", "eq6"),
                      tol=kwargs.get("tol_theta", 1e-7),
                      clamp_saturated=not kwargs.get("strict_dop", False))
    dirs = np.asarray(ray, dtype=np.float64)[None, :]
    out = {}
    for name, th in (("low", cand.theta_low), ("high", cand.theta_high)):
        s = solve_depth_for_theta(origin, dirs, np.asarray(D)[None, :], np.nan_to_num(th),
                                  interval, kwargs.get("tol_s", 1e-3))
        out[name] = float(s[0]) if np.isfinite(th[0]) and np.isfinite(s[0]) else None
    feasible = [b for b in ("low", "high") if out[b] is not None]
    if bool(cand.saturated[0]) and kwargs.get("strict_dop", False):
        return {"status": Status.INVALID_DECODE, "branches": out}
    if not feasible:
        return {"status": Status.NO_ROOT, "branches": out}
    branch = "low" if "low" in feasible else "high"
    s = out[branch]
    S = np.asarray(origin) + s * dirs[0]
    n = geo.bisector_normal(S, np.asarray(origin), np.asarray(D, dtype=np.float64))
    if bool(cand.saturated[0]):
        status = Status.SATURATED_DOP
    elif len(feasible) == 2:
        status = Status.BOTH_FEASIBLE
    else:
        status = Status.OK
    theta = cand.theta_low[0] if branch == "low" else cand.theta_high[0]
    return {
        "status": status,
        "branch": branch,
        "depth": s,
        "point": S,
        "normal": n,
        "theta": float(theta),
        "branches": out,
    }


def export_geometry(solution: SurfaceSolution, out_dir):
    """Write solution artifacts: PLY point cloud (usable pixels, with
    normals), plus depth/normal/theta/status PFM rasters."""
    from pathlib import Path

    from .pfmio import write_pfm, write_ply, write_sidecar

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    usable = np.isfinite(solution.depth)
    write_ply(out / "points.ply", solution.points[usable], solution.normals[usable])
    write_pfm(out / "depth.pfm", np.where(usable, solution.depth, 0.0))
    write_sidecar(out / "depth.pfm", {"units": "mm", "kind": "standoff depth"})
    write_pfm(out / "normal.pfm", np.where(usable[..., None], solution.normals, 0.0))
    write_sidecar(out / "normal.pfm", {"units": "unit vector, world frame", "kind": "normal"})
    write_pfm(out / "theta.pfm", np.where(usable, solution.theta, 0.0))
    write_sidecar(out / "theta.pfm", {"units": "radians", "kind": "incidence angle"})
    write_pfm(out / "status.pfm", solution.status.astype(np.float32))
    write_sidecar(
        out / "status.pfm",
        {"kind": "status codes", "codes": {s.name.lower(): int(s) for s in Status}},
    )
    return out


@dataclass
class OrthographicNormals:
    """The four orthographic-assumption normal candidates per pixel, in
    world coordinates, plus an optional best-case selection."""

    candidates: np.ndarray  # (h, w, 4, 3)
    valid: np.ndarray
    best: np.ndarray | None = None  # closest candidate to ground truth


def orthographic_baseline(
    stokes: StokesEstimate,
    mat: MaterialOpticalProperties,
    cam: PinholeCamera,
    dop_model: str = "eq6",
    tol_theta: float = 1e-7,
    truth_normals: np.ndarray | None = None,
) -> OrthographicNormals:
    """Conventional SfP normals under the orthographic assumption.

    Zenith candidates {theta_low, theta_high} from the DoP, azimuth
    candidates alpha = aolp +/- pi/2; camera-frame normal
    (sin t cos a, sin t sin a, -cos t) (towards the camera), rotated to
    world. The best-case map (needs truth) upper-bounds what any
    disambiguation could achieve and isolates the orthographic error.
    """
    cand = invert_dop(stokes.dop, mat, tol=tol_theta, model=dop_model)
    shape = stokes.dop.shape
    cands = np.full(shape + (4, 3), np.nan)
    idx = 0
    for th in (cand.theta_low, cand.theta_high):
        for da in (np.pi / 2, -np.pi / 2):
            alpha = stokes.aolp + da
            n_cam = np.stack(
                [
                    np.sin(th) * np.cos(alpha),
                    np.sin(th) * np.sin(alpha),
                    -np.cos(th),
                ],
                axis=-1,
            )
            cands[..., idx, :] = cam.camera_to_world(n_cam)
            idx += 1
    valid = stokes.valid & np.all(np.isfinite(cands), axis=(-2, -1))
    best = None
    if truth_normals is not None:
        dots = np.clip(np.sum(cands * truth_normals[..., None, :], axis=-1), -1.0, 1.0)
        pick = np.argmax(np.where(np.isfinite(dots), dots, -np.inf), axis=-1)
        best = np.take_along_axis(cands, pick[..., None, None], axis=-2)[..., 0, :]
    return OrthographicNormals(candidates=cands, valid=valid, best=best)
