"""Scene manifests: the single JSON document describing a simulated
measurement (camera, display, working interval, surface, material,
pattern, noise, render options), schema-validated before any run.

The default bearing-ball scene is an invented desk-scale stand-in for the
physical rig: the display hangs above the camera facing down at the ball,
which keeps the incidence angles in the well-conditioned range of the
metal DoP curve while the ball still spans a >15 deg half field of view.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from .codec import PatternSpec
from .geometry import DisplayPlane, PinholeCamera, WorkingDistanceInterval
from .polarization import MATERIAL_PRESETS, MaterialOpticalProperties
from .simulator import HeightField, NoiseModel, Plane, Scene, Sphere


class ManifestError(ValueError):
    """Schema violation or inconsistent manifest content."""


_VEC3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}

SCENE_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["camera", "display", "working_distance", "surface", "material"],
    "additionalProperties": False,
    "properties": {
        "comment": {"type": "string"},
        "units": {"type": "string"},
        "camera": {
            "type": "object",
            "required": ["fx", "fy", "cx", "cy", "width", "height"],
            "additionalProperties": False,
            "properties": {
                "fx": {"type": "number", "exclusiveMinimum": 0},
                "fy": {"type": "number", "exclusiveMinimum": 0},
                "cx": {"type": "number"},
                "cy": {"type": "number"},
                "width": {"type": "integer", "minimum": 1},
                "height": {"type": "integer", "minimum": 1},
                "rotation": {"type": "array", "items": _VEC3, "minItems": 3, "maxItems": 3},
                "translation": _VEC3,
            },
        },
        "display": {
            "type": "object",
            "required": ["origin", "u", "v", "pitch", "width", "height"],
            "additionalProperties": False,
            "properties": {
                "origin": _VEC3,
                "u": _VEC3,
                "v": _VEC3,
                "pitch": {"type": "number", "exclusiveMinimum": 0},
                "width": {"type": "integer", "minimum": 1},
                "height": {"type": "integer", "minimum": 1},
            },
        },
        "working_distance": {
            "type": "object",
            "required": ["s_min", "s_max"],
            "additionalProperties": False,
            "properties": {
                "s_min": {"type": "number", "exclusiveMinimum": 0},
                "s_max": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "surface": {
            "type": "object",
            "required": ["kind"],
            "properties": {"kind": {"enum": ["sphere", "plane", "heightfield"]}},
        },
        "material": {
            "oneOf": [
                {"type": "string"},
                {
                    "type": "object",
                    "required": ["m"],
                    "additionalProperties": False,
                    "properties": {
                        "m": {"type": "number", "exclusiveMinimum": 1},
                        "kappa": {"type": "number", "minimum": 0},
                    },
                },
            ]
        },
        "pattern": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["phase-shift", "cross-sinusoid"]},
                "axes": {"type": "array", "items": {"enum": ["u", "v"]}},
                "steps": {"type": "integer", "minimum": 3},
                "freq": {"type": "number", "exclusiveMinimum": 0},
                "freq_low": {"type": "number", "exclusiveMinimum": 0},
                "f_u": {"type": "number", "exclusiveMinimum": 0},
                "f_v": {"type": "number", "exclusiveMinimum": 0},
                "mean": {"type": "number"},
                "depth": {"type": "number"},
            },
        },
        "noise": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sigma": {"type": "number", "minimum": 0},
                "photon": {"type": "boolean"},
                "bits": {"enum": [0, 8, 10, 12, 16]},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "render": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dop_model": {"enum": ["eq5", "eq6", "exact"]},
                "auto_expose": {"type": "boolean"},
                "exposure_headroom": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "output_dir": {"type": "string"},
    },
}

_validator = Draft202012Validator(SCENE_SCHEMA)


def validate_manifest(doc: dict):
    errors = sorted(_validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = [
            f"$.{'.'.join(str(p) for p in e.absolute_path)}: {e.message}" for e in errors
        ]
        raise ManifestError("; ".join(msgs))


def _surface_from(doc: dict):
    kind = doc["kind"]
    if kind == "sphere":
        return Sphere(center=np.asarray(doc["center"]), radius=float(doc["radius"]))
    if kind == "plane":
        return Plane(point=np.asarray(doc["point"]), normal=np.asarray(doc["normal"]))
    if kind == "heightfield":
        return HeightField(
            x0=float(doc["x0"]),
            y0=float(doc["y0"]),
            dx=float(doc["dx"]),
            dy=float(doc["dy"]),
            z_grid=np.asarray(doc["z_grid"], dtype=np.float64),
        )
    raise ManifestError(f"unknown surface kind {kind!r}")


def material_from(doc) -> MaterialOpticalProperties:
    if isinstance(doc, str):
        try:
            return MATERIAL_PRESETS[doc]
        except KeyError:
            raise ManifestError(
                f"unknown material preset {doc!r}; known: {sorted(MATERIAL_PRESETS)}"
            ) from None
    return MaterialOpticalProperties(m=doc["m"], kappa=doc.get("kappa", 0.0))


def scene_from_manifest(doc: dict) -> Scene:
    """Validate a manifest document and build the Scene it describes."""
    validate_manifest(doc)
    c = doc["camera"]
    camera = PinholeCamera(
        fx=c["fx"],
        fy=c["fy"],
        cx=c["cx"],
        cy=c["cy"],
        width=c["width"],
        height=c["height"],
        rotation=np.asarray(c.get("rotation", np.eye(3).tolist())),
        translation=np.asarray(c.get("translation", [0.0, 0.0, 0.0])),
    )
    d = doc["display"]
    display = DisplayPlane(
        origin=np.asarray(d["origin"]),
        u=np.asarray(d["u"]),
        v=np.asarray(d["v"]),
        pitch=d["pitch"],
        width=d["width"],
        height=d["height"],
    )
    wd = doc["working_distance"]
    interval = WorkingDistanceInterval(s_min=wd["s_min"], s_max=wd["s_max"])
    p = dict(doc.get("pattern", {}))
    if "axes" in p:
        p["axes"] = tuple(p["axes"])
    pattern = PatternSpec(**p)
    n = doc.get("noise", {})
    noise = NoiseModel(
        sigma=n.get("sigma", 0.0),
        photon=n.get("photon", False),
        bits=n.get("bits", 0),
        seed=n.get("seed", 0),
    )
    r = doc.get("render", {})
    return Scene(
        camera=camera,
        display=display,
        interval=interval,
        surface=_surface_from(doc["surface"]),
        material=material_from(doc["material"]),
        pattern=pattern,
        noise=noise,
        dop_model=r.get("dop_model", "eq6"),
        auto_expose=r.get("auto_expose", True),
        exposure_headroom=r.get("exposure_headroom", 0.95),
    )


def load_manifest(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ManifestError(f"{path}: {e}") from e
    validate_manifest(doc)
    return doc


# ---------------------------------------------------------------------------
# Built-in scenes


def bearing_ball_manifest(
    size: int = 512,
    sigma: float = 0.0,
    seed: int = 0,
    mode: str = "multi",
    dop_model: str = "eq6",
) -> dict:
    """Desk-scale bearing-ball scene: 25.4 mm ball, steel preset.

    Camera at the origin looking +z, ball centred 48 mm out (so its rim
    reaches ~15.3 deg field angle), display overhead facing down. The
    measurable patch is the upper-front crescent of the ball where the
    incidence angle stays in the sensitive range of the metal DoP curve.
    """
    pattern = (
        {"kind": "phase-shift", "axes": ["u", "v"], "steps": 8, "freq": 16.0}
        if mode == "multi"
        else {"kind": "cross-sinusoid", "axes": ["u", "v"], "steps": 4, "f_u": 32.0, "f_v": 32.0}
    )
    pattern.update({"mean": 0.7, "depth": 0.25})
    return {
        "comment": "invented desk-scale stand-in for the physical rig",
        "units": "mm",
        "camera": {
            "fx": 1.855 * size,
            "fy": 1.855 * size,
            "cx": size / 2 - 0.5,
            "cy": size / 2 - 0.5,
            "width": size,
            "height": size,
        },
        "display": {
            "origin": [-100.0, 60.0, -20.0],
            "u": [1.0, 0.0, 0.0],
            "v": [0.0, 0.0, 1.0],
            "pitch": 0.25,
            "width": 800,
            "height": 600,
        },
        "working_distance": {"s_min": 25.0, "s_max": 200.0},
        "surface": {"kind": "sphere", "center": [0.0, 0.0, 48.0], "radius": 12.7},
        "material": "bearing-ball-steel",
        "pattern": pattern,
        "noise": {"sigma": sigma, "seed": seed},
        "render": {"dop_model": dop_model, "auto_expose": True},
    }


def qualitative_heightfield_manifest(name: str = "horse", size: int = 256, seed: int = 0) -> dict:
    """Procedural bumpy heightfield stand-ins for free-form test objects
    (chrome coated). Labeled qualitative: no metric ground truth claim
    beyond the simulator itself."""
    key = int(hashlib.sha256(name.encode()).hexdigest()[:15], 16)
    rng = np.random.Generator(np.random.Philox(key=key))
    n = 48
    x = np.linspace(-1, 1, n)
    xx, yy = np.meshgrid(x, x)
    z = np.zeros_like(xx)
    for fx_, fy_, a in [(1, 1, 1.2), (2, 3, 0.5), (5, 4, 0.2), (8, 7, 0.08)]:
        z += a * np.sin(fx_ * np.pi * xx + rng.uniform(0, 2 * np.pi)) * np.sin(
            fy_ * np.pi * yy + rng.uniform(0, 2 * np.pi)
        )
    # Tilt the sheet ~45 deg about x so the mean normal bisects the camera
    # direction and the overhead display; bumps modulate around that.
    z = 46.0 + 14.0 * yy + 1.2 * z / np.max(np.abs(z))
    return {
        "comment": f"qualitative procedural stand-in object '{name}'",
        "units": "mm",
        "camera": {
            "fx": 1.855 * size,
            "fy": 1.855 * size,
            "cx": size / 2 - 0.5,
            "cy": size / 2 - 0.5,
            "width": size,
            "height": size,
        },
        "display": {
            "origin": [-100.0, 85.0, -20.0],
            "u": [1.0, 0.0, 0.0],
            "v": [0.0, 0.0, 1.0],
            "pitch": 0.25,
            "width": 800,
            "height": 600,
        },
        "working_distance": {"s_min": 25.0, "s_max": 200.0},
        "surface": {
            "kind": "heightfield",
            "x0": -14.0,
            "y0": -14.0,
            "dx": 28.0 / (n - 1),
            "dy": 28.0 / (n - 1),
            "z_grid": z.tolist(),
        },
        "material": "chrome",
        "pattern": {
            "kind": "phase-shift",
            "axes": ["u", "v"],
            "steps": 4,
            "freq": 16.0,
            "mean": 0.7,
            "depth": 0.25,
        },
        "noise": {"sigma": 0.0, "seed": seed},
        "render": {"dop_model": "eq6", "auto_expose": True},
    }


# ---------------------------------------------------------------------------
# Run records


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunRecord:
    """Provenance of one command run: manifest hash, toolkit version,
    stage timings, and a digest inventory of every output file."""

    command: str
    manifest_sha256: str
    version: str
    timings: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    _t0: float = field(default_factory=time.perf_counter, repr=False)

    def stage(self, name: str):
        now = time.perf_counter()
        self.timings[name] = round(now - self._t0, 6)
        self._t0 = now

    def inventory(self, out_dir, exclude=("run_record",)):
        out_dir = Path(out_dir)
        for p in sorted(out_dir.rglob("*")):
            if p.is_file() and not any(x in p.name for x in exclude):
                self.outputs[str(p.relative_to(out_dir))] = sha256_file(p)

    def write(self, path):
        doc = {
            "command": self.command,
            "manifest_sha256": self.manifest_sha256,
            "version": self.version,
            "timings_s": self.timings,
            "outputs": self.outputs,
        }
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))


def manifest_hash(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()
