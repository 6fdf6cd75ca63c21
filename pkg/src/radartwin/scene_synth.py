"""Synthetic ground-truth scenes: a breathing ellipsoid torso patch observed by
a pseudo depth camera, plus the exact displacement waveform driving it.

The patch is the cap of an ellipsoid facing the sensor cluster at the origin.
Breathing displaces the rest surface along its local outward normal by
amplitude * sin(2 pi rate t + phase) * bump(p), with Gaussian spatial bumps,
so the ground-truth motion is exactly normal-directed. Camera frames sample
the deformed surface on a fixed rectangular (x, y) pseudo-pixel grid and add
Gaussian noise along the viewing ray, emulating time-of-flight depth error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .geometry import PointCloudFrame, load_ply, save_ply

_GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


@dataclass
class TorsoSpec:
    """Ellipsoid patch: semi-axes in meters, sensor standoff to the nearest
    surface point, and the polar half-angle of the cap."""

    semi_axis_x: float = 0.27
    semi_axis_y: float = 0.27
    semi_axis_z: float = 0.10
    standoff: float = 0.8
    extent_angle: float = 0.28     # rad

    def __post_init__(self):
        if min(self.semi_axis_x, self.semi_axis_y, self.semi_axis_z) <= 0:
            raise ValueError("semi-axes must be positive")
        if not 0 < self.extent_angle < np.pi / 2:
            raise ValueError("extent_angle must lie in (0, pi/2)")

    @property
    def center(self) -> np.ndarray:
        return np.array([0.0, 0.0, self.standoff + self.semi_axis_z])


@dataclass
class BumpSpec:
    """Gaussian displacement bump on the patch."""

    center_u: float = 0.0          # rad, azimuth of the bump centre
    center_v: float = 0.0          # rad, polar angle of the bump centre
    width: float = 0.04            # m, Gaussian sigma over surface chord
    amplitude: float = 2e-3        # m
    rate: float = 0.25             # Hz
    phase: float = 0.0             # rad


@dataclass
class SceneConfig:
    torso: TorsoSpec = field(default_factory=TorsoSpec)
    breathing: BumpSpec = field(default_factory=BumpSpec)
    # Optional static surface feature (a rib/sternum-like dome): a rate-0 bump
    # whose constant offset is part of the rest shape seen by both sensors.
    # Its slopes create an extra quasi-specular site away from the sub-radar
    # point, which is how multi-site scattering regimes arise.
    static_dome: BumpSpec | None = None
    template_density: float = 6.0e4      # points / m^2
    camera_density: float = 3.0e4        # points / m^2 (projected)
    camera_noise_sigma: float = 1.5e-3   # m, along the viewing ray
    # Optional polar margin of camera coverage past the template rim.
    # Nonzero margins drag rim template points outward during registration;
    # keep 0 unless the template is cropped to a sub-patch of the scan.
    camera_extent_margin: float = 0.0    # rad
    duration_s: float = 20.0
    frame_rate: float = 15.0             # Hz
    seed: int = 0

    def __post_init__(self):
        if self.breathing.amplitude <= 0:
            raise ValueError("breathing amplitude must be positive")
        if self.frame_rate <= 2.0 * self.breathing.rate:
            raise ValueError("frame_rate must exceed twice the breathing rate")
        if self.duration_s <= 0 or self.template_density <= 0 or self.camera_density <= 0:
            raise ValueError("durations and densities must be positive")

    @property
    def frame_times(self) -> np.ndarray:
        n = int(round(self.duration_s * self.frame_rate))
        return np.arange(n) / self.frame_rate


@dataclass
class GroundTruth:
    """Noise-free reference motion for closed-loop evaluation."""

    times: np.ndarray
    displacement: np.ndarray                  # at the primary bump centre, m
    per_frame_truth: list[PointCloudFrame]    # deformed template, no noise
    secondary_displacement: np.ndarray | None = None


def _ellipsoid_point(torso: TorsoSpec, u, v) -> np.ndarray:
    """Cap parameterisation about the pole that faces the sensors (-z)."""
    cx, cy, cz = torso.center
    x = cx + torso.semi_axis_x * np.sin(v) * np.cos(u)
    y = cy + torso.semi_axis_y * np.sin(v) * np.sin(u)
    z = cz - torso.semi_axis_z * np.cos(v)
    return np.stack(np.broadcast_arrays(x, y, z), axis=-1)


def _ellipsoid_normal(torso: TorsoSpec, pts: np.ndarray) -> np.ndarray:
    """Outward unit normal from the implicit-surface gradient."""
    rel = pts - torso.center
    grad = rel / np.array([torso.semi_axis_x, torso.semi_axis_y, torso.semi_axis_z]) ** 2
    return grad / np.linalg.norm(grad, axis=-1, keepdims=True)


def patch_area(torso: TorsoSpec, n_grid: int = 256) -> float:
    """Numerical area of the cap via the parameterisation's surface element."""
    u = np.linspace(0.0, 2.0 * np.pi, n_grid, endpoint=False)
    v = np.linspace(0.0, torso.extent_angle, n_grid // 2 + 1)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    a, b, c = torso.semi_axis_x, torso.semi_axis_y, torso.semi_axis_z
    pu = np.stack([-a * np.sin(vv) * np.sin(uu), b * np.sin(vv) * np.cos(uu),
                   np.zeros_like(uu)], axis=-1)
    pv = np.stack([a * np.cos(vv) * np.cos(uu), b * np.cos(vv) * np.sin(uu),
                   c * np.sin(vv)], axis=-1)
    elem = np.linalg.norm(np.cross(pu, pv), axis=-1)
    du = 2.0 * np.pi / n_grid
    return float(np.trapz(elem, v[None, :], axis=1).sum() * du)


def displacement_field(cfg: SceneConfig, bumps: list[BumpSpec], rest_points: np.ndarray,
                       rest_normals: np.ndarray, t: float) -> np.ndarray:
    """Normal-directed displacement of rest-surface points at time t."""
    disp = np.zeros(rest_points.shape[0])
    for bump in bumps:
        center = _ellipsoid_point(cfg.torso, bump.center_u, bump.center_v)
        d2 = np.sum((rest_points - center) ** 2, axis=1)
        disp += (bump.amplitude * np.sin(2.0 * np.pi * bump.rate * t + bump.phase)
                 * np.exp(-d2 / (2.0 * bump.width ** 2)))
    return rest_points + disp[:, None] * rest_normals


def gen_template(cfg: SceneConfig) -> PointCloudFrame:
    """Quasi-uniform golden-spiral sampling of the rest patch with analytic normals."""
    torso = cfg.torso
    area = patch_area(torso)
    n = max(1, int(round(cfg.template_density * area)))
    i = np.arange(n)
    frac = (i + 0.5) / n
    # Equal-area polar spacing on the spherical cap, golden-angle azimuth.
    v = np.arccos(1.0 - frac * (1.0 - np.cos(torso.extent_angle)))
    u = np.mod(i * _GOLDEN_ANGLE, 2.0 * np.pi)
    pts = _ellipsoid_point(torso, u, v)
    return PointCloudFrame(pts, _ellipsoid_normal(torso, pts), 0.0)


def _camera_grid(cfg: SceneConfig) -> tuple[np.ndarray, np.ndarray]:
    """Rest positions and normals of the fixed pseudo-pixel samples.

    Pixels form a rectangular (x, y) grid over the patch footprint; each keeps
    the surface point vertically below it (graph form of the cap), which
    stands in for a fixed camera ray at this standoff.
    """
    torso = cfg.torso
    v_cam = min(torso.extent_angle + cfg.camera_extent_margin, 1.45)
    sv = np.sin(v_cam)
    half_x = torso.semi_axis_x * sv
    half_y = torso.semi_axis_y * sv
    pitch = 1.0 / np.sqrt(cfg.camera_density)

    def centered(half):
        n = int(np.floor(2.0 * half / pitch)) + 1
        return (np.arange(n) - (n - 1) / 2.0) * pitch

    gx, gy = np.meshgrid(centered(half_x), centered(half_y), indexing="ij")
    cx, cy, cz = torso.center
    q = ((gx - cx) / torso.semi_axis_x) ** 2 + ((gy - cy) / torso.semi_axis_y) ** 2
    keep = q <= sv ** 2
    gx, gy, q = gx[keep], gy[keep], q[keep]
    gz = cz - torso.semi_axis_z * np.sqrt(1.0 - q)
    pts = np.column_stack([gx, gy, gz])
    return pts, _ellipsoid_normal(torso, pts)


def _gen_scene(cfg: SceneConfig, bumps: list[BumpSpec]) -> tuple[list[PointCloudFrame], GroundTruth]:
    template = gen_template(cfg)
    cam_pts, cam_normals = _camera_grid(cfg)
    times = cfg.frame_times
    streams = np.random.SeedSequence(cfg.seed).spawn(times.shape[0])

    frames = []
    truth_frames = []
    for t, stream in zip(times, streams):
        moved = displacement_field(cfg, bumps, cam_pts, cam_normals, t)
        rays = moved / np.linalg.norm(moved, axis=1, keepdims=True)  # camera at origin
        noise = np.random.default_rng(stream).standard_normal(moved.shape[0])
        observed = moved + (cfg.camera_noise_sigma * noise)[:, None] * rays
        frames.append(PointCloudFrame(observed, None, t))
        truth_frames.append(PointCloudFrame(
            displacement_field(cfg, bumps, template.points, template.normals, t),
            None, t))

    primary = bumps[0]
    disp = primary.amplitude * np.sin(2.0 * np.pi * primary.rate * times + primary.phase)
    secondary = None
    if len(bumps) > 1:
        b = bumps[1]
        secondary = b.amplitude * np.sin(2.0 * np.pi * b.rate * times + b.phase)
    truth = GroundTruth(times, disp, truth_frames, secondary)
    return frames, truth


def gen_frames(cfg: SceneConfig) -> tuple[list[PointCloudFrame], GroundTruth]:
    """Noisy camera frame sequence plus exact reference motion for one bump."""
    return _gen_scene(cfg, [cfg.breathing])


def gen_two_site_scene(cfg: SceneConfig,
                       second_bump: BumpSpec) -> tuple[list[PointCloudFrame], GroundTruth]:
    """Two displacement bumps with independent phases; truth carries both.

    The bumps must be spatially disjoint (centre separation above the summed
    widths) so each reflective site keeps its own identity.
    """
    c1 = _ellipsoid_point(cfg.torso, cfg.breathing.center_u, cfg.breathing.center_v)
    c2 = _ellipsoid_point(cfg.torso, second_bump.center_u, second_bump.center_v)
    if second_bump.amplitude > 0 and \
            np.linalg.norm(c1 - c2) <= cfg.breathing.width + second_bump.width:
        raise ValueError("bumps must be disjoint")
    bumps = [cfg.breathing]
    if second_bump.amplitude > 0:
        bumps.append(second_bump)
    return _gen_scene(cfg, bumps)


# ---------------------------------------------------------------------------
# Scene directory serialisation
# ---------------------------------------------------------------------------

def scene_config_to_dict(cfg: SceneConfig, second_bump: BumpSpec | None = None) -> dict:
    d = asdict(cfg)
    if second_bump is not None:
        d["second_bump"] = asdict(second_bump)
    return d


def scene_config_from_dict(d: dict) -> tuple[SceneConfig, BumpSpec | None]:
    d = dict(d)
    second = d.pop("second_bump", None)
    cfg = SceneConfig(torso=TorsoSpec(**d.pop("torso")),
                      breathing=BumpSpec(**d.pop("breathing")), **d)
    return cfg, (BumpSpec(**second) if second is not None else None)


def save_scene(dirpath, template: PointCloudFrame, frames: list[PointCloudFrame],
               truth: GroundTruth, cfg: SceneConfig,
               second_bump: BumpSpec | None = None) -> None:
    """Directory layout: template.ply, frames/frame_%04d.ply, truth.csv, scene.json.

    per_frame_truth is regenerable from scene.json and is not serialised.
    """
    root = Path(dirpath)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    save_ply(template, root / "template.ply")
    for i, f in enumerate(frames):
        save_ply(f, root / "frames" / f"frame_{i:04d}.ply")
    lines = ["t_s,d_m"]
    for t, d in zip(truth.times, truth.displacement):
        lines.append(f"{t:.9g},{d:.9g}")
    (root / "truth.csv").write_text("\n".join(lines) + "\n")
    (root / "scene.json").write_text(
        json.dumps(scene_config_to_dict(cfg, second_bump), indent=2, sort_keys=True) + "\n")


def load_scene(dirpath) -> tuple[PointCloudFrame, list[PointCloudFrame], np.ndarray, dict]:
    """Returns (template, frames, truth array of (t, d), raw scene.json dict)."""
    root = Path(dirpath)
    template = load_ply(root / "template.ply")
    frames = [load_ply(p) for p in sorted((root / "frames").glob("frame_*.ply"))]
    rows = (root / "truth.csv").read_text().strip().splitlines()[1:]
    truth = np.array([[float(v) for v in r.split(",")] for r in rows])
    cfg_dict = json.loads((root / "scene.json").read_text())
    return template, frames, truth, cfg_dict
