"""Display pattern generation and decoding.

Two correspondence routes:

* multi-shot: K-step phase-shifted sinusoids per axis at a unit frequency
  and a high frequency, unwrapped against each other;
* single-shot: one cross-sinusoid frame demodulated in the Fourier domain
  (carrier lobes isolated with a raised-cosine bandpass), unwrapped
  against a stored low-frequency prior.

Display phase convention: a pattern of frequency f on axis u encodes
phi = 2*pi*f*i/w_d at display pixel column i, so the decoded absolute
phase maps back to display coordinates via i = phi*w_d/(2*pi*f).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import DisplayPlane


class CodecError(ValueError):
    """Invalid pattern spec or decode configuration."""


@dataclass(frozen=True)
class PatternSpec:
    """Display pattern parameters.

    kind 'phase-shift': K-step sinusoids on the listed axes, one set at
    freq_low (absolute reference) and one at freq cycles across the
    display extent. kind 'cross-sinusoid': a single frame summing a
    horizontal and a vertical carrier at (f_u, f_v) cycles.
    """

    kind: str = "phase-shift"
    axes: tuple[str, ...] = ("u", "v")
    steps: int = 4
    freq: float = 16.0
    freq_low: float = 1.0
    f_u: float = 32.0
    f_v: float = 32.0
    mean: float = 0.7
    depth: float = 0.25

    def __post_init__(self):
        if self.kind not in ("phase-shift", "cross-sinusoid"):
            raise CodecError(f"unknown pattern kind {self.kind!r}")
        if self.steps < 3:
            raise CodecError("phase shifting needs K >= 3 steps")
        if min(self.freq, self.freq_low, self.f_u, self.f_v) <= 0:
            raise CodecError("frequencies must be positive")
        if not (0.0 <= self.mean - self.depth and self.mean + self.depth <= 1.0):
            raise CodecError("mean +/- depth must stay within [0, 1]")
        for ax in self.axes:
            if ax not in ("u", "v"):
                raise CodecError(f"unknown axis {ax!r}")


@dataclass
class PatternFrame:
    """One display raster plus the metadata needed to decode it."""

    raster: np.ndarray  # (h_d, w_d) in [0, 1]
    kind: str
    axis: str  # 'u' | 'v' | 'both'
    freq: float
    step: int = 0
    steps: int = 1
    role: str = "code"  # 'code' | 'prior'

    def meta(self) -> dict:
        return {
            "kind": self.kind,
            "axis": self.axis,
            "frequency": self.freq,
            "step": self.step,
            "steps": self.steps,
            "role": self.role,
            "units": "display intensity fraction, phase = 2*pi*f*index/extent",
        }


def _axis_phase(disp: DisplayPlane, axis: str, freq: float) -> np.ndarray:
    i = np.arange(disp.width, dtype=np.float64) + 0.5
    j = np.arange(disp.height, dtype=np.float64) + 0.5
    ii, jj = np.meshgrid(i, j)
    if axis == "u":
        return 2.0 * np.pi * freq * ii / disp.width
    return 2.0 * np.pi * freq * jj / disp.height


def generate_patterns(spec: PatternSpec, disp: DisplayPlane) -> list[PatternFrame]:
    """Emit the display rasters for a pattern spec.

    Phase-shift: steps frames per (axis, frequency) pair, phase offsets
    2*pi*k/K. Cross-sinusoid: a single frame
    mean + depth*(cos(phi_u) + cos(phi_v))/2, preceded by low-frequency
    phase-shift prior frames used for unwrapping.
    """
    frames: list[PatternFrame] = []
    if spec.kind == "phase-shift":
        for axis in spec.axes:
            for freq in (spec.freq_low, spec.freq):
                phase = _axis_phase(disp, axis, freq)
                for k in range(spec.steps):
                    delta = 2.0 * np.pi * k / spec.steps
                    raster = spec.mean + spec.depth * np.cos(phase - delta)
                    frames.append(
                        PatternFrame(raster, "phase-shift", axis, freq, k, spec.steps)
                    )
        return frames

    # Single-shot: low-frequency prior frames, then the cross-sinusoid.
    for axis in spec.axes:
        phase = _axis_phase(disp, axis, spec.freq_low)
        for k in range(spec.steps):
            delta = 2.0 * np.pi * k / spec.steps
            raster = spec.mean + spec.depth * np.cos(phase - delta)
            frames.append(
                PatternFrame(
                    raster, "phase-shift", axis, spec.freq_low, k, spec.steps, role="prior"
                )
            )
    cross = spec.mean + spec.depth * 0.5 * (
        np.cos(_axis_phase(disp, "u", spec.f_u)) + np.cos(_axis_phase(disp, "v", spec.f_v))
    )
    frames.append(PatternFrame(cross, "cross-sinusoid", "both", spec.f_u))
    return frames


def decode_phase_shift(captured, steps: int, modulation_threshold: float = 1e-6):
    """K-step phase estimator.

    captured: sequence of K rasters taken with phase offsets 2*pi*k/K.
    Returns (wrapped_phase in [0, 2*pi), modulation_amplitude, valid).
    A pattern generated as mean + depth*cos(phi - 2*pi*k/K) decodes to
    phi with modulation = depth (times any common intensity scale).
    """
    if len(captured) != steps or steps < 3:
        raise CodecError("need exactly K >= 3 equally spaced frames")
    stack = np.stack([np.asarray(c, dtype=np.float64) for c in captured])
    deltas = 2.0 * np.pi * np.arange(steps) / steps
    num = np.tensordot(np.sin(deltas), stack, axes=1)
    den = np.tensordot(np.cos(deltas), stack, axes=1)
    phase = np.mod(np.arctan2(num, den), 2.0 * np.pi)
    modulation = 2.0 / steps * np.hypot(num, den)
    return phase, modulation, modulation > modulation_threshold


def unwrap_two_frequency(
    phase_low,
    phase_high,
    freq_high: float,
    freq_low: float = 1.0,
    residual_threshold: float = np.pi / 2,
):
    """Temporal unwrap of a high-frequency wrapped phase.

    phase_low must be absolute (freq_low = 1 cycle across the display).
    Returns (absolute_high, valid, residual); residual is the distance of
    the fringe-order estimate from an integer, in radians.
    """
    if freq_low != 1.0:
        raise CodecError("phase_low must be the absolute single-cycle phase")
    ratio = freq_high / freq_low
    if abs(ratio - round(ratio)) > 1e-9:
        raise CodecError("freq_high must be an integer multiple of freq_low")
    phase_low = np.asarray(phase_low, dtype=np.float64)
    phase_high = np.asarray(phase_high, dtype=np.float64)
    order_real = (freq_high * phase_low - phase_high) / (2.0 * np.pi)
    order = np.round(order_real)
    residual = 2.0 * np.pi * np.abs(order_real - order)
    return phase_high + 2.0 * np.pi * order, residual <= residual_threshold, residual


def _raised_cosine_bandpass(shape, center, bandwidth):
    """2-D raised-cosine window centred on `center` (cycles/pixel)."""
    ky = np.fft.fftfreq(shape[0])[:, None]
    kx = np.fft.fftfreq(shape[1])[None, :]
    # distance on the periodic frequency torus
    dx = (kx - center[0] + 0.5) % 1.0 - 0.5
    dy = (ky - center[1] + 0.5) % 1.0 - 0.5
    r = np.hypot(dx, dy)
    h = np.where(r < bandwidth, 0.5 * (1.0 + np.cos(np.pi * r / bandwidth)), 0.0)
    return h


def _find_carrier(spectrum, axis: str, min_freq: float):
    """Peak-magnitude bin in the sector of the half-plane belonging to an
    axis: dominantly horizontal frequencies for 'u', vertical for 'v'."""
    ky = np.fft.fftfreq(spectrum.shape[0])[:, None]
    kx = np.fft.fftfreq(spectrum.shape[1])[None, :]
    if axis == "u":
        sector = (kx > min_freq) & (np.abs(ky) <= np.abs(kx))
    else:
        sector = (ky > min_freq) & (np.abs(kx) < np.abs(ky))
    mag = np.where(sector, np.abs(spectrum), 0.0)
    flat = int(np.argmax(mag))
    iy, ix = np.unravel_index(flat, spectrum.shape)
    if mag[iy, ix] == 0.0:
        raise CodecError(f"no carrier found for axis {axis!r}")
    return float(kx[0, ix]), float(ky[iy, 0])


def decode_fourier_single_shot(
    captured,
    carriers: dict[str, tuple[float, float]] | None = None,
    bandwidth: float | None = None,
    guard: int = 8,
    valid_mask=None,
    min_freq: float = 4.0,
    amplitude_threshold: float = 1e-6,
    reference_phase: dict[str, np.ndarray] | None = None,
):
    """Takeda-style demodulation of a single cross-sinusoid frame.

    Two demodulation routes per axis:

    * fixed carrier: isolate the carrier lobe with a raised-cosine
      bandpass around `carriers[axis]` (cycles/pixel; found as the
      strongest sector peak when absent). bandwidth defaults to half the
      carrier separation.
    * reference phase (space-variant carrier): when
      `reference_phase[axis]` gives a per-pixel predicted phase in
      radians (e.g. the scaled low-frequency prior), the frame is
      heterodyned by exp(-i*reference) so the residual sits near DC, and
      a raised-cosine lowpass (bandwidth, default 0.02 cycles/pixel)
      extracts it. This tracks curved surfaces whose instantaneous
      frequency sweeps too widely for any fixed bandpass.

    Returns per-axis dicts with wrapped phase, amplitude and validity; a
    guard margin plus mask erosion hides transform edge effects.
    """
    img = np.asarray(captured, dtype=np.float64)
    h, w = img.shape
    min_cpp = min_freq / max(h, w)  # cycles/image -> cycles/pixel
    if valid_mask is None:
        valid_mask = np.ones_like(img, dtype=bool)
    reference_phase = reference_phase or {}
    fill = float(np.mean(img[valid_mask])) if np.any(valid_mask) else 0.0
    work = np.where(valid_mask, img, fill)
    spectrum = np.fft.fft2(work - np.mean(work))

    found = {}
    for axis in ("u", "v"):
        if axis in reference_phase:
            continue
        if carriers is not None and axis in carriers:
            found[axis] = tuple(carriers[axis])
        else:
            found[axis] = _find_carrier(spectrum, axis, min_cpp)
    for axis, (cx, cy) in found.items():
        if np.hypot(cx, cy) <= min_cpp:
            raise CodecError(f"carrier for axis {axis!r} overlaps DC")
    carrier_bandwidth = bandwidth
    if len(found) == 2:
        sep = np.hypot(
            found["u"][0] - found["v"][0], found["u"][1] - found["v"][1]
        )
        if carrier_bandwidth is None:
            carrier_bandwidth = 0.5 * sep
        if sep < 2.0 * min_cpp:
            raise CodecError("carrier lobes overlap each other")
    for axis, (cx, cy) in found.items():
        if carrier_bandwidth is None:
            carrier_bandwidth = 0.5 * np.hypot(cx, cy)
        if carrier_bandwidth > np.hypot(cx, cy):
            carrier_bandwidth = float(np.hypot(cx, cy)) * 0.95  # keep DC out
    if found and carrier_bandwidth <= 0:
        raise CodecError("carrier lobes overlap each other")

    border = np.zeros_like(valid_mask)
    if guard > 0:
        border[guard:-guard, guard:-guard] = True
    else:
        border[:] = True
    from scipy.ndimage import binary_erosion

    interior = valid_mask & border
    if guard > 0:
        interior = binary_erosion(interior, iterations=guard)

    out = {}
    for axis in ("u", "v"):
        if axis in reference_phase:
            ref = np.asarray(reference_phase[axis], dtype=np.float64)
            if ref.shape != img.shape:
                raise CodecError("reference phase dimensions do not match")
            # zero outside the mask: the reference is meaningless there and
            # a constant fill would alias into the baseband after mixing
            mixed = np.where(valid_mask, img - fill, 0.0) * np.exp(-1j * ref)
            lp_bw = bandwidth if bandwidth is not None else 0.02
            window = _raised_cosine_bandpass(img.shape, (0.0, 0.0), lp_bw)
            analytic = np.fft.ifft2(np.fft.fft2(mixed) * window)
            phase = np.mod(np.angle(analytic) + ref, 2.0 * np.pi)
            gyp, gxp = np.gradient(ref)
            carrier = (
                float(np.median(gxp[valid_mask])) / (2.0 * np.pi),
                float(np.median(gyp[valid_mask])) / (2.0 * np.pi),
            ) if np.any(valid_mask) else (0.0, 0.0)
        else:
            window = _raised_cosine_bandpass(img.shape, found[axis], carrier_bandwidth)
            analytic = np.fft.ifft2(spectrum * window)
            phase = np.mod(np.angle(analytic), 2.0 * np.pi)
            carrier = found[axis]
        amplitude = 2.0 * np.abs(analytic)
        out[axis] = {
            "phase": phase,
            "amplitude": amplitude,
            "carrier": carrier,
            "valid": interior & (amplitude > amplitude_threshold),
        }
    return out


@dataclass
class CorrespondenceMap:
    """Per camera pixel: real-valued display coordinates (i, j), a
    validity mask and the decode residual."""

    i: np.ndarray
    j: np.ndarray
    valid: np.ndarray
    residual: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.residual is None:
            self.residual = np.zeros_like(self.i)


def phase_to_display_coords(
    abs_phase_u,
    abs_phase_v,
    freq_u: float,
    freq_v: float,
    disp: DisplayPlane,
    valid=None,
    residual=None,
) -> CorrespondenceMap:
    """Absolute phases -> display pixel coordinates.

    i = phi_u * w_d / (2*pi*f_u), j likewise; out-of-bounds coordinates
    are invalidated (boundary values are kept).
    """
    abs_phase_u = np.asarray(abs_phase_u, dtype=np.float64)
    abs_phase_v = np.asarray(abs_phase_v, dtype=np.float64)
    i = abs_phase_u * disp.width / (2.0 * np.pi * freq_u)
    j = abs_phase_v * disp.height / (2.0 * np.pi * freq_v)
    in_bounds = (i >= 0) & (i <= disp.width) & (j >= 0) & (j <= disp.height)
    if valid is None:
        valid = np.ones_like(i, dtype=bool)
    return CorrespondenceMap(i=i, j=j, valid=valid & in_bounds, residual=residual)
