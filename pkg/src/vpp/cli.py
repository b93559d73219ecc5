"""Command line entry point: ``python3 -m vpp <command> --seed N ...``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import grad_check
from .config import parse_kv
from .metrics import ioi_rows, pkr_rows, write_rows
from .pipeline import (BACKBONE_DEFAULTS, ConfigError, NumericalError, PipelineConfig, VppModel,
                       ablation_grid, analytic_ledger, render_masks, run_video, scene_switch_experiment,
                       train_heads)
from .synth_video import SynthScenario, default_suite, export_video, format_scenario, generate, parse_scenario
from .vit_sim import VitConfig

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

_VIT_KEYS = {"layers": int, "embed_dim": int, "heads": int, "mlp_ratio": float, "patch_size": int,
             "channels": int}
_CFG_KEYS = {"ref_layer": int, "goal_pkr": float, "kappa_init": float, "tau": float, "scale_map": float,
             "scale_sm": float, "lambda_d": float, "steps": int, "lr": float, "momentum": float,
             "head_scale": float, "backbone_seed": int}
_OPTIONAL_FLOAT = ("topk_fraction", "rho")


def _int_list(val: str) -> tuple[int, ...]:
    val = val.strip().lower()
    if val in ("", "none"):
        return ()
    return tuple(int(v) for v in val.replace(" ", "").split(","))


def config_from_pairs(pairs: dict[str, str], seed: int) -> PipelineConfig:
    vit_kw, kw, backbone = {}, {}, dict(BACKBONE_DEFAULTS)
    for key, val in pairs.items():
        try:
            if key in _VIT_KEYS:
                vit_kw[key] = _VIT_KEYS[key](val)
            elif key == "grid":
                a, b = val.lower().split("x")
                vit_kw["grid"] = (int(a), int(b))
            elif key in _CFG_KEYS:
                kw[key] = _CFG_KEYS[key](val)
            elif key in _OPTIONAL_FLOAT:
                kw[key] = None if val.lower() == "auto" else float(val)
            elif key == "mapsm_index":
                kw[key] = None if val.lower() in ("none", "off") else int(val)
            elif key == "sm_indices":
                kw[key] = _int_list(val)
            elif key == "normalize_similarity":
                kw[key] = val.lower() in ("1", "true", "yes")
            elif key.startswith("backbone."):
                name = key.split(".", 1)[1]
                if name not in backbone:
                    raise ConfigError(f"unknown backbone option {name!r}")
                backbone[name] = float(val)
            elif key == "seed":
                continue  # the command line seed always wins
            else:
                raise ConfigError(f"unknown config key {key!r}")
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from exc
    return PipelineConfig(vit=VitConfig(**vit_kw), backbone=backbone, seed=seed, **kw)


def load_config(args) -> PipelineConfig:
    pairs: dict[str, str] = {}
    if getattr(args, "config", None):
        try:
            pairs, _ = parse_kv(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        pairs[k.strip()] = v.strip()
    if getattr(args, "preset", None) is not None:
        pairs["goal_pkr"] = str(args.preset)
    return config_from_pairs(pairs, args.seed)


def load_scenarios(args, cfg: PipelineConfig | None = None, default_seed: int | None = None) -> list[SynthScenario]:
    files = getattr(args, "scenario", None) or []
    if files:
        out = []
        for f in files:
            try:
                out.append(parse_scenario(Path(f).read_text()))
            except OSError as exc:
                raise ConfigError(f"cannot read scenario: {exc}") from exc
        return out
    grid = cfg.vit.grid if cfg is not None else (10, 10)
    seed = args.seed if default_seed is None else default_seed
    return default_suite(seed, count=args.suite, grid=tuple(grid), blank_prefix=getattr(args, "blank_prefix", 0))


def _check_grid(cfg: PipelineConfig, scenarios: list[SynthScenario]) -> None:
    for sc in scenarios:
        if tuple(sc.grid) != tuple(cfg.vit.grid) or sc.patch_size != cfg.vit.patch_size or sc.channels != cfg.vit.channels:
            raise ConfigError("scenario geometry does not match the backbone config")


def _model(cfg: PipelineConfig, checkpoint) -> VppModel:
    if checkpoint:
        return VppModel.load(cfg, checkpoint)
    return VppModel.init(cfg)


# --- commands ------------------------------------------------------------

def cmd_generate(args) -> int:
    out = Path(args.out)
    for i, sc in enumerate(load_scenarios(args)):
        d = out / f"scenario_{i:02d}"
        export_video(generate(sc), d)
        (d / "scenario.txt").write_text(format_scenario(sc))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args)
    scenarios = load_scenarios(args, cfg)
    _check_grid(cfg, scenarios)
    model = VppModel.init(cfg)
    res = train_heads(model, [generate(s) for s in scenarios], args.steps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "checkpoint.vppw")
    write_rows(out / "curves.csv", res.curves)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args)
    scenarios = load_scenarios(args, cfg)
    _check_grid(cfg, scenarios)
    model = _model(cfg, args.checkpoint)
    out = Path(args.out)
    for i, sc in enumerate(scenarios):
        video = generate(sc)
        art = run_video(model, video)
        d = out / f"scenario_{i:02d}"
        render_masks(art, d / "masks", cfg.vit, video)
        d.mkdir(parents=True, exist_ok=True)
        (d / "masks.bin").write_bytes(np.ascontiguousarray(art.masks, dtype=np.uint8).tobytes())
        write_rows(d / "pkr.csv", pkr_rows(art.pkr))
        write_rows(d / "ioi.csv", ioi_rows(art.ioi) + [{"stratum": "random", "ioi": art.random_ioi.overall,
                                                        "instances": len(art.random_ioi.per_instance)}])
        write_rows(d / "flops.csv", _ledger_rows(art.flops))
    return EXIT_OK


def _ledger_rows(ledger) -> list[dict]:
    rows = [{"item": f"layer{l + 1}", "attention": a, "mlp": m, "total": a + m}
            for l, (a, m) in enumerate(zip(ledger.attention, ledger.mlp))]
    rows += [{"item": k, "total": v} for k, v in ledger.overhead.items()]
    rows.append({"item": "total", "total": ledger.total})
    return rows


def cmd_ablate(args) -> int:
    cfg = load_config(args)
    train = load_scenarios(args, cfg)
    test = default_suite(args.seed + 1, count=args.suite, grid=tuple(cfg.vit.grid))
    _check_grid(cfg, train)
    rows = ablation_grid(cfg, train, test, args.steps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_rows(out / "ablation.csv", [r.row() for r in rows])
    return EXIT_OK


def cmd_scene_switch(args) -> int:
    cfg = load_config(args)
    if args.checkpoint:
        model = VppModel.load(cfg, args.checkpoint)
    else:
        model = VppModel.init(cfg)
        train_heads(model, [generate(s) for s in default_suite(args.seed, grid=tuple(cfg.vit.grid))], args.steps)
    test = default_suite(args.seed + 1, count=args.suite, grid=tuple(cfg.vit.grid), blank_prefix=args.blank_prefix)
    out = Path(args.out)
    rows = []
    for i, sc in enumerate(test):
        rep = scene_switch_experiment(model, sc, out / f"scenario_{i:02d}")
        for t, (v, r) in enumerate(zip(rep.ioi, rep.random)):
            rows.append({"scenario": i, "t": t, "since_onset": t - rep.onset, "ioi": v, "random": r})
    write_rows(out / "scene_switch.csv", rows)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = load_config(args)
    model = _model(cfg, args.checkpoint)
    reports = grad_check.check_all(model, args.tolerance, seed=args.seed, instances=args.instances)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    grad_check.write_report(out, reports)
    bad = grad_check.failures(reports)
    if bad:
        print("gradient check failed: " + ", ".join(bad), file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_flops(args) -> int:
    cfg = load_config(args)
    ledger, dense = analytic_ledger(cfg)
    rows = _ledger_rows(ledger)
    rows.append({"item": "dense_total", "total": dense.total})
    rows.append({"item": "reduction", "total": 1.0 - ledger.total / dense.total})
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_rows(out, rows)
    print(f"pruned {ledger.total:.6g} dense {dense.total:.6g} reduction {1 - ledger.total / dense.total:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vpp", description="Temporal patch pruning on synthetic video.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True, scenarios=False):
        sp.add_argument("--seed", type=int, required=True)
        if config:
            sp.add_argument("--config")
            sp.add_argument("--set", action="append", metavar="KEY=VALUE")
            sp.add_argument("--preset", type=float, choices=(0.55, 0.40))
        if scenarios:
            sp.add_argument("--scenario", action="append", help="scenario file (repeatable)")
            sp.add_argument("--suite", type=int, default=5, help="default suite size when no file is given")
        sp.add_argument("--out", required=True)

    sp = sub.add_parser("generate", help="render scenarios to PGM frames")
    common(sp, config=False, scenarios=True)
    sp.add_argument("--blank-prefix", type=int, default=0)
    sp.set_defaults(fn=cmd_generate)

    sp = sub.add_parser("train", help="train pruning heads; writes checkpoint and curves")
    common(sp, scenarios=True)
    sp.add_argument("--steps", type=int)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("run", help="prune scenarios; writes masks and metrics")
    common(sp, scenarios=True)
    sp.add_argument("--checkpoint")
    sp.set_defaults(fn=cmd_run)

    sp = sub.add_parser("ablate-position", help="stage positioning ablation at matched PKR")
    common(sp, scenarios=True)
    sp.add_argument("--steps", type=int)
    sp.set_defaults(fn=cmd_ablate)

    sp = sub.add_parser("scene-switch", help="IoI recovery after blank frames")
    common(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--suite", type=int, default=5)
    sp.add_argument("--blank-prefix", type=int, default=3)
    sp.set_defaults(fn=cmd_scene_switch)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient report")
    common(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--tolerance", type=float, default=1e-4)
    sp.add_argument("--instances", type=int, default=20)
    sp.set_defaults(fn=cmd_gradcheck)

    sp = sub.add_parser("flops", help="analytic FLOP ledger of the configured schedule")
    common(sp)
    sp.set_defaults(fn=cmd_flops)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return args.fn(args)
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
