"""End-to-end orchestration: scene -> registration -> scattering -> IF synthesis
-> DSP -> metrics, with artifacts persisted per stage.

Sign convention: the DSP displacement tracks two-way path growth (positive =
away from the radar). Scene ground truth is normal-directed (positive = toward
the sensors), so recovered waveforms are negated before comparison and written
to CSV in the toward-sensor convention used by truth.csv.
"""

from __future__ import annotations

import json
from contextlib import contextmanager
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial.distance import cdist

from . import cpd, em_scatter, radar_dsp, radar_model, scene_synth
from .config import DspConfig, PipelineConfig, config_to_dict
from .em_scatter import DipoleSource, EmConstants, ScatteringMap
from .errors import PipelineError
from .geometry import estimate_normals, subsample, surface_sampling, save_ply, time_average_frames
from .metrics import MetricReport, max_crosscorr, pearson, rms_error
from .radar_model import IFCube, ScatterCenter, VirtualArray


@contextmanager
def _stage(name: str):
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, str(exc)) from exc


def _theta_grid(dsp: DspConfig) -> np.ndarray:
    span = np.deg2rad(dsp.theta_span_deg)
    return np.linspace(-span, span, dsp.n_theta)


def _prepare(cloud, k_neighbors: int):
    """Normals (sensor-facing) plus area weights for a working cloud."""
    with_normals = estimate_normals(cloud, k_neighbors, viewpoint=(0.0, 0.0, 0.0))
    return surface_sampling(with_normals)


def _element_amplitudes(sampling, wmat_rows, array: VirtualArray, em_cfg, consts):
    """Eye-windowed |E| per virtual element at preselected window centres.

    The dipole source sits at the element's physical Tx antenna and the field
    is observed at its Rx antenna.
    """
    amps = np.empty((array.n_elements, wmat_rows.shape[0]))
    currents_by_tx = {}
    for i, el in enumerate(array.elements):
        if el.tx_index not in currents_by_tx:
            src = DipoleSource(array.tx_positions[el.tx_index], em_cfg.dipole_axis,
                               em_cfg.moment)
            currents_by_tx[el.tx_index] = em_scatter.induced_currents(
                sampling, src, consts, shadowing=em_cfg.shadowing)
        vec = em_scatter.radiation_vectors(currents_by_tx[el.tx_index], consts,
                                           array.rx_positions[el.rx_index])
        amps[i] = np.linalg.norm(wmat_rows @ vec, axis=1)
    return amps


def _reference_map(sampling, wmat, array: VirtualArray, em_cfg, consts) -> ScatteringMap:
    """Scattering map for the central virtual element (the selection reference)."""
    ref = array.elements[array.n_elements // 2]
    src = DipoleSource(array.tx_positions[ref.tx_index], em_cfg.dipole_axis, em_cfg.moment)
    currents = em_scatter.induced_currents(sampling, src, consts,
                                           shadowing=em_cfg.shadowing)
    vec = em_scatter.radiation_vectors(currents, consts,
                                       array.rx_positions[ref.rx_index])
    mags = np.linalg.norm(wmat @ vec, axis=1)
    return ScatteringMap(sampling.points.points.copy(),
                         array.rx_positions[ref.rx_index], mags, em_cfg.a0)


def _dsp_chain(cube: IFCube, array: VirtualArray, dsp: DspConfig):
    profiles = radar_dsp.range_profile(cube, dsp.window, dsp.zero_pad)
    profiles = radar_dsp.crop_range(profiles, dsp.range_min, dsp.range_max)
    ra_map = radar_dsp.beamform(profiles, array, _theta_grid(dsp), cube.chirp.wavelength)
    ir, iq = radar_dsp.select_peak_pixel(ra_map)
    series = ra_map.samples[ir, iq, :]
    raw = radar_dsp.displacement(series, cube.chirp.wavelength, cube.chirp.slow_rate)
    smoothed = radar_dsp.smooth_detrend(raw, dsp.smooth_window_s, dsp.detrend_window_s)
    return ra_map, (ir, iq), raw, smoothed


def _flip(wave: radar_dsp.DisplacementWaveform) -> radar_dsp.DisplacementWaveform:
    """Convert range-growth-positive output to toward-sensor-positive motion."""
    return radar_dsp.DisplacementWaveform(-wave.values, wave.rate, wave.smoothed)


def _metric_report(recovered: np.ndarray, truth: np.ndarray, rate: float,
                   max_lag_s: float, smoothed: bool) -> MetricReport:
    corr, lag = max_crosscorr(truth, recovered, max_lag_s, rate)
    return MetricReport(rms_error=rms_error(recovered, truth),
                        max_xcorr=corr, lag_s=lag,
                        pcc=pearson(recovered, truth), smoothed=smoothed)


def iq_magnitude_compare(cube_a: IFCube, cube_b: IFCube, array: VirtualArray,
                         dsp: DspConfig, pixel: tuple[int, int] | None = None,
                         max_lag_s: float = 0.5) -> dict:
    """Agreement of beamformed |S(t)| magnitude series between two cubes.

    Both cubes run the DSP chain to the same pixel (selected on ``cube_a``
    when not given). The RMS entry is in the cubes' arbitrary field units.
    """
    maps = []
    for cube in (cube_a, cube_b):
        profiles = radar_dsp.range_profile(cube, dsp.window, dsp.zero_pad)
        profiles = radar_dsp.crop_range(profiles, dsp.range_min, dsp.range_max)
        maps.append(radar_dsp.beamform(profiles, array, _theta_grid(dsp),
                                       cube.chirp.wavelength))
    if pixel is None:
        pixel = radar_dsp.select_peak_pixel(maps[0])
    ir, iq = pixel
    mag_a = np.abs(maps[0].samples[ir, iq, :])
    mag_b = np.abs(maps[1].samples[ir, iq, :])
    corr, lag = max_crosscorr(mag_a, mag_b, max_lag_s, cube_a.chirp.slow_rate)
    return {
        "pcc": pearson(mag_a, mag_b),
        "max_xcorr": corr,
        "lag_s": lag,
        "pixel_range_m": float(maps[0].range_axis[ir]),
        "pixel_theta_rad": float(maps[0].theta_axis[iq]),
    }


def run_pipeline(cfg: PipelineConfig, out_dir) -> dict:
    """Execute the configured pipeline and return the report dictionary.

    Every stage failure raises :class:`PipelineError` tagged with the stage
    name; artifacts written by earlier stages stay on disk. Identical seeds
    and configs produce byte-identical report.json and CSV outputs.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    full = cfg.artifact_level == "full"

    with _stage("scene"):
        template = scene_synth.gen_template(cfg.scene)
        if cfg.second_bump is not None:
            frames, truth = scene_synth.gen_two_site_scene(cfg.scene, cfg.second_bump)
        else:
            frames, truth = scene_synth.gen_frames(cfg.scene)
        scene_dir = out / "scene"
        if full:
            scene_synth.save_scene(scene_dir, template, frames, truth, cfg.scene,
                                   cfg.second_bump)
        else:
            scene_dir.mkdir(parents=True, exist_ok=True)
            lines = ["t_s,d_m"]
            for t, d in zip(truth.times, truth.displacement):
                lines.append(f"{t:.9g},{d:.9g}")
            (scene_dir / "truth.csv").write_text("\n".join(lines) + "\n")
            (scene_dir / "scene.json").write_text(json.dumps(
                scene_synth.scene_config_to_dict(cfg.scene, cfg.second_bump),
                indent=2, sort_keys=True) + "\n")

    chirp = cfg.radar.chirp
    consts = EmConstants(frequency=chirp.f_center)
    array = radar_model.build_virtual_array(cfg.radar.n_tx, cfg.radar.tx_pitch,
                                            cfg.radar.n_rx, cfg.radar.rx_pitch,
                                            cfg.radar.array_origin, cfg.radar.axis)
    frame_times = np.array([f.timestamp for f in frames])
    n_slow = int(round(cfg.observation_duration * chirp.slow_rate))
    slow_grid = np.arange(n_slow) / chirp.slow_rate
    eta = cfg.radar.eta

    cubes: dict[str, IFCube] = {}

    if cfg.mode in ("conventional", "both"):
        with _stage("conventional_model"):
            avg = time_average_frames(frames)
            sampling = _prepare(avg, cfg.cpd.k_neighbors)
            wmat = em_scatter.eye_window_matrix(sampling.points.points, cfg.em.a0)
            avg_map = _reference_map(sampling, wmat, array, cfg.em, consts)
            centers_idx = radar_model.select_centers_conventional(avg_map,
                                                                  cfg.radar.theta_scat)
            amps = _element_amplitudes(sampling, wmat[centers_idx], array, cfg.em, consts)
            ranges = np.stack([radar_model.track_centers_conventional(
                frames, sampling.points, centers_idx, el) for el in array.elements])
            centers = [radar_model.constant_amplitude_center(
                int(k), frame_times, ranges[:, j, :], amps[:, j], eta)
                for j, k in enumerate(centers_idx)]
            cubes["conventional"] = radar_model.synth_if_conventional(
                centers, chirp, slow_grid)
            if full:
                em_scatter.save_map_csv(avg_map, out / "map_conventional_avg.csv")
                save_ply(sampling.points, out / "camera_average.ply")

    if cfg.mode in ("proposed", "both"):
        with _stage("registration"):
            template_sub = subsample(template, cfg.cpd.template_points, cfg.scene.seed)
            deformed = []
            w_prev = None
            for frame in frames:
                fld = cpd.register(frame, template_sub, cfg.cpd.params, w_init=w_prev,
                                   sigma2_init=cfg.cpd.sigma2_init)
                if cfg.cpd.warm_start:
                    w_prev = fld.weights
                deformed.append(cpd.apply_deformation(fld))
            if full:
                dd = out / "deformed"
                dd.mkdir(exist_ok=True)
                for i, d in enumerate(deformed):
                    save_ply(d, dd / f"frame_{i:04d}.ply")

        with _stage("scattering"):
            samplings, wmats, maps = [], [], []
            for d in deformed:
                s = _prepare(d, cfg.cpd.k_neighbors)
                wm = em_scatter.eye_window_matrix(s.points.points, cfg.em.a0)
                samplings.append(s)
                wmats.append(wm)
                maps.append(_reference_map(s, wm, array, cfg.em, consts))
            kset = radar_model.select_index_set(maps, cfg.radar.theta_thresh)
            n_t = len(deformed)
            A = np.empty((array.n_elements, kset.size, n_t))
            R = np.empty((array.n_elements, kset.size, n_t))
            pcs = array.phase_centers
            for t in range(n_t):
                A[:, :, t] = _element_amplitudes(samplings[t], wmats[t][kset],
                                                 array, cfg.em, consts)
                R[:, :, t] = cdist(pcs, deformed[t].points[kset])
            if full:
                em_scatter.save_map_csv(maps[0], out / "map_proposed_frame0.csv")

        with _stage("synthesis"):
            centers = [ScatterCenter(int(k), frame_times, R[:, j, :], A[:, j, :], eta)
                       for j, k in enumerate(kset)]
            cubes["proposed"] = radar_model.synth_if_proposed(centers, chirp, slow_grid)

    report: dict = {
        "mode": cfg.mode,
        "seed": cfg.scene.seed,
        "slow_rate_hz": chirp.slow_rate,
        "observation_duration_s": cfg.observation_duration,
        "config": config_to_dict(cfg),
        "modes": {},
    }

    dsp_results = {}
    with _stage("dsp"):
        for name, cube in cubes.items():
            if full:
                radar_model.save_cube(cube, out / f"cube_{name}.bin")
            ra_map, pixel, raw, smoothed = _dsp_chain(cube, array, cfg.dsp)
            raw_flipped, smooth_flipped = _flip(raw), _flip(smoothed)
            radar_dsp.save_waveform_csv(raw_flipped, out / f"displacement_{name}_raw.csv")
            radar_dsp.save_waveform_csv(smooth_flipped,
                                        out / f"displacement_{name}_smoothed.csv")
            radar_dsp.save_range_angle_csv(ra_map, out / f"range_angle_{name}.csv")
            dsp_results[name] = (ra_map, pixel, raw_flipped, smooth_flipped)

    with _stage("metrics"):
        breathing_rate = cfg.scene.breathing.rate
        min_duration = 2.0 / breathing_rate
        if cfg.observation_duration < min_duration:
            raise PipelineError(
                "metrics", f"record of {cfg.observation_duration:g} s holds fewer than "
                f"2 respiration cycles (need >= {min_duration:g} s)")
        truth_slow = CubicSpline(truth.times, truth.displacement)(slow_grid)
        for name, (ra_map, pixel, raw, smoothed) in dsp_results.items():
            ir, iq = pixel
            entry = {
                "peak_pixel": {"range_m": float(ra_map.range_axis[ir]),
                               "theta_rad": float(ra_map.theta_axis[iq])},
                "raw": _metric_report(raw.values, truth_slow, chirp.slow_rate,
                                      cfg.max_lag_s, smoothed=False).as_dict(),
                "smoothed": _metric_report(smoothed.values, truth_slow, chirp.slow_rate,
                                           cfg.max_lag_s, smoothed=True).as_dict(),
            }
            report["modes"][name] = entry
        if len(cubes) == 2:
            report["iq_compare"] = iq_magnitude_compare(
                cubes["proposed"], cubes["conventional"], array, cfg.dsp,
                max_lag_s=cfg.max_lag_s)

    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report
