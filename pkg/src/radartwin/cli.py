"""Command-line surface.

Subcommands cover the pipeline stages individually (scene, register, scatter,
synth, dsp, metrics) and end to end (pipeline). Every subcommand takes
``--config <json>`` plus repeatable ``--set path=value`` overrides whose dotted
paths mirror the config JSON, and ``--seed`` as a shortcut for
``--set scene.seed=N``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import cpd, em_scatter, pipeline, radar_dsp, radar_model, scene_synth
from .config import PipelineConfig, apply_override, load_config, save_config
from .em_scatter import EmConstants
from .errors import RadarTwinError
from .geometry import estimate_normals, load_ply, save_ply, subsample, surface_sampling
from .metrics import max_crosscorr, pearson, rms_error


def _common_args(sub):
    sub.add_argument("--config", type=Path, default=None, help="pipeline config JSON")
    sub.add_argument("--seed", type=int, default=None, help="override scene seed")
    sub.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="PATH=VALUE", help="override a config field by dotted path")


def _load_cfg(args) -> PipelineConfig:
    cfg = load_config(args.config)
    for ov in args.overrides:
        if "=" not in ov:
            raise SystemExit(f"--set expects PATH=VALUE, got '{ov}'")
        path, value = ov.split("=", 1)
        apply_override(cfg, path.strip(), value.strip())
    if args.seed is not None:
        cfg.scene.seed = args.seed
    return cfg


def _cmd_scene(args) -> None:
    cfg = _load_cfg(args)
    template = scene_synth.gen_template(cfg.scene)
    if cfg.second_bump is not None:
        frames, truth = scene_synth.gen_two_site_scene(cfg.scene, cfg.second_bump)
    else:
        frames, truth = scene_synth.gen_frames(cfg.scene)
    scene_synth.save_scene(args.out, template, frames, truth, cfg.scene, cfg.second_bump)
    print(f"scene with {len(frames)} frames written to {args.out}")


def _cmd_register(args) -> None:
    cfg = _load_cfg(args)
    template, frames, _, _ = scene_synth.load_scene(args.scene)
    template_sub = subsample(template, min(cfg.cpd.template_points, len(template)),
                             cfg.scene.seed)
    out = Path(args.out)
    (out / "deformed").mkdir(parents=True, exist_ok=True)
    (out / "fields").mkdir(parents=True, exist_ok=True)
    w_prev = None
    for i, frame in enumerate(frames):
        fld = cpd.register(frame, template_sub, cfg.cpd.params, w_init=w_prev)
        if cfg.cpd.warm_start:
            w_prev = fld.weights
        save_ply(cpd.apply_deformation(fld), out / "deformed" / f"frame_{i:04d}.ply")
        cpd.save_field(fld, out / "fields" / f"frame_{i:04d}")
    print(f"registered {len(frames)} frames into {out}")


def _clouds_for_scatter(args, cfg) -> list:
    if args.deformed is not None:
        return [load_ply(p) for p in sorted(Path(args.deformed).glob("frame_*.ply"))]
    _, frames, _, _ = scene_synth.load_scene(args.scene)
    return frames


def _cmd_scatter(args) -> None:
    cfg = _load_cfg(args)
    clouds = _clouds_for_scatter(args, cfg)
    consts = EmConstants(frequency=cfg.radar.chirp.f_center)
    array = radar_model.build_virtual_array(cfg.radar.n_tx, cfg.radar.tx_pitch,
                                            cfg.radar.n_rx, cfg.radar.rx_pitch,
                                            cfg.radar.array_origin, cfg.radar.axis)
    ref = array.elements[array.n_elements // 2]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, cloud in enumerate(clouds):
        sampling = surface_sampling(estimate_normals(cloud, cfg.cpd.k_neighbors,
                                                     viewpoint=(0, 0, 0)))
        src = em_scatter.DipoleSource(array.tx_positions[ref.tx_index],
                                      cfg.em.dipole_axis, cfg.em.moment)
        smap = em_scatter.scattering_map(sampling, src, consts,
                                         array.rx_positions[ref.rx_index],
                                         cfg.em.a0, shadowing=cfg.em.shadowing)
        em_scatter.save_map_csv(smap, out / f"map_{i:04d}.csv")
    print(f"wrote {len(clouds)} scattering maps to {out}")


def _cmd_synth(args) -> None:
    cfg = _load_cfg(args)
    cfg.mode = args.mode
    report = pipeline.run_pipeline(cfg, args.out)
    print(f"synthesised mode(s) {list(report['modes'])} into {args.out}")


def _cmd_dsp(args) -> None:
    cfg = _load_cfg(args)
    cube = radar_model.load_cube(args.cube)
    array = radar_model.build_virtual_array(cfg.radar.n_tx, cfg.radar.tx_pitch,
                                            cfg.radar.n_rx, cfg.radar.rx_pitch,
                                            cfg.radar.array_origin, cfg.radar.axis)
    ra_map, pixel, raw, smoothed = pipeline._dsp_chain(cube, array, cfg.dsp)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    radar_dsp.save_waveform_csv(raw, out / "displacement_raw.csv")
    radar_dsp.save_waveform_csv(smoothed, out / "displacement_smoothed.csv")
    radar_dsp.save_range_angle_csv(ra_map, out / "range_angle.csv")
    ir, iq = pixel
    print(f"peak pixel at {ra_map.range_axis[ir]:.3f} m, "
          f"{np.rad2deg(ra_map.theta_axis[iq]):.2f} deg; CSVs in {out}")


def _cmd_metrics(args) -> None:
    cfg = _load_cfg(args)
    a = radar_dsp.load_waveform_csv(args.a)
    b = radar_dsp.load_waveform_csv(args.b)
    corr, lag = max_crosscorr(a.values, b.values, cfg.max_lag_s, a.rate)
    report = {
        "rms_error_mm": rms_error(a.values, b.values) * 1e3,
        "pcc": pearson(a.values, b.values),
        "max_xcorr": corr,
        "lag_s": lag,
    }
    Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(json.dumps(report, indent=2, sort_keys=True))


def _cmd_pipeline(args) -> None:
    cfg = _load_cfg(args)
    report = pipeline.run_pipeline(cfg, args.out)
    summary = {m: {k: v[k] for k in ("raw", "smoothed")}
               for m, v in report["modes"].items()}
    print(json.dumps(summary, indent=2, sort_keys=True))
    print(f"full report at {Path(args.out) / 'report.json'}")


def _cmd_config(args) -> None:
    cfg = _load_cfg(args)
    save_config(cfg, args.out)
    print(f"config written to {args.out}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="radartwin",
        description="Deformation-aware radar observation simulator")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("scene", help="generate a synthetic scene directory")
    p.add_argument("--out", type=Path, required=True)
    _common_args(p)
    p.set_defaults(func=_cmd_scene)

    p = subs.add_parser("register", help="CPD registration over a scene's frames")
    p.add_argument("--scene", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _common_args(p)
    p.set_defaults(func=_cmd_register)

    p = subs.add_parser("scatter", help="scattering maps per frame")
    p.add_argument("--scene", type=Path)
    p.add_argument("--deformed", type=Path, help="directory of deformed clouds")
    p.add_argument("--out", type=Path, required=True)
    _common_args(p)
    p.set_defaults(func=_cmd_scatter)

    p = subs.add_parser("synth", help="synthesise IF cube(s) end to end")
    p.add_argument("--mode", choices=["conventional", "proposed", "both"],
                   default="both")
    p.add_argument("--out", type=Path, required=True)
    _common_args(p)
    p.set_defaults(func=_cmd_synth)

    p = subs.add_parser("dsp", help="IF cube to displacement CSVs")
    p.add_argument("--cube", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _common_args(p)
    p.set_defaults(func=_cmd_dsp)

    p = subs.add_parser("metrics", help="compare two displacement CSVs")
    p.add_argument("--a", type=Path, required=True)
    p.add_argument("--b", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _common_args(p)
    p.set_defaults(func=_cmd_metrics)

    p = subs.add_parser("pipeline", help="run the full closed loop")
    p.add_argument("--out", type=Path, required=True)
    _common_args(p)
    p.set_defaults(func=_cmd_pipeline)

    p = subs.add_parser("config", help="write the resolved config JSON")
    p.add_argument("--out", type=Path, required=True)
    _common_args(p)
    p.set_defaults(func=_cmd_config)

    args = parser.parse_args(argv)
    try:
        args.func(args)
    except RadarTwinError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
