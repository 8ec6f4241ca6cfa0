"""Command-line entry point.

    bergmanlab --preset example_5_2 --cmd examples --out runs/ex52
    bergmanlab --config run.json

Exit status: 0 when every requested verdict passes, 1 when one fails,
2 on an invalid configuration, 3 when an output file cannot be written.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import verify
from ._io import write_csv, write_json
from .bergman import SectionSpace, bergman_function, kernel_offdiag_sq, monomial_log_norms
from .envelope import InvalidWindowError, SlopeWindow, constrained_envelope
from .presets import PRESETS, list_presets
from .weight import DEFAULT_GRID, VGrid, Weight

COMMANDS = ("envelope", "bergman", "kernel", "verify", "examples")
WINDOW_KEYWORDS = ("at_zero", "at_infinity", "none")


class ConfigError(ValueError):
    def __init__(self, path: str, msg: str):
        self.path = path
        super().__init__(f"{path}: {msg}")


@dataclass
class RunConfig:
    preset: str = "fs"
    weight: Weight = field(default_factory=lambda: PRESETS["fs"].weight)
    window: SlopeWindow = field(default_factory=lambda: SlopeWindow(0.0, 1.0))
    grid: VGrid = DEFAULT_GRID
    ks: tuple[int, ...] = verify.DEFAULT_KS
    outputs: Path = Path("bergmanlab-out")
    commands: tuple[str, ...] = ("verify",)
    grid_given: bool = False


def _parse_weight(value, path: str) -> tuple[str, Weight, Optional[SlopeWindow]]:
    if isinstance(value, str) and value in PRESETS:
        p = PRESETS[value]
        return p.name, p.weight, p.window
    if isinstance(value, str):
        try:
            value = json.loads(value)
        except json.JSONDecodeError:
            raise ConfigError(path, f"unknown preset {value!r}; known: {', '.join(PRESETS)}") from None
    if not isinstance(value, dict):
        raise ConfigError(path, "expected a preset name or a weight object")
    if "degree_m" not in value:
        raise ConfigError(f"{path}.degree_m", "missing")
    bump = value.get("bump")
    if bump is not None:
        if not isinstance(bump, dict):
            raise ConfigError(f"{path}.bump", "expected an object or null")
        for key in ("amplitude", "center", "halfwidth"):
            if key not in bump:
                raise ConfigError(f"{path}.bump.{key}", "missing")
            if not isinstance(bump[key], (int, float)) or isinstance(bump[key], bool):
                raise ConfigError(f"{path}.bump.{key}", "expected a number")
        if not bump["halfwidth"] > 0:
            raise ConfigError(f"{path}.bump.halfwidth", "must be positive")
    m = value["degree_m"]
    if not isinstance(m, int) or isinstance(m, bool) or m < 1:
        raise ConfigError(f"{path}.degree_m", "expected a positive integer")
    return "custom", Weight.from_dict(value), None


def _parse_window(value, weight: Weight, path: str) -> Optional[SlopeWindow]:
    m = float(weight.degree_m)
    if value is None:
        return None
    if isinstance(value, str):
        if value == "none":
            return SlopeWindow(0.0, m)
        if value in ("at_zero", "at_infinity"):
            if weight.degree_m < 2:
                raise ConfigError(path, "divisor windows need degree_m >= 2")
            return SlopeWindow(1.0, m) if value == "at_zero" else SlopeWindow(0.0, m - 1.0)
        parts = value.split(":")
        if len(parts) != 2:
            raise ConfigError(path, f"expected lo:hi or one of {WINDOW_KEYWORDS}")
        value = parts
    try:
        lo, hi = (float(x) for x in value)
    except (TypeError, ValueError):
        raise ConfigError(path, "expected two numbers") from None
    try:
        win = SlopeWindow(lo, hi)
        win.check(weight)
    except InvalidWindowError as exc:
        raise ConfigError(path, str(exc)) from None
    return win


def _parse_grid(value, path: str) -> VGrid:
    if isinstance(value, str):
        parts = value.split(":")
        if len(parts) != 3:
            raise ConfigError(path, "expected vmin:vmax:n")
        value = {"v_min": parts[0], "v_max": parts[1], "n_points": parts[2]}
    if not isinstance(value, dict):
        raise ConfigError(path, "expected an object with v_min, v_max, n_points")
    try:
        v_min = float(value["v_min"])
        v_max = float(value["v_max"])
    except KeyError as exc:
        raise ConfigError(f"{path}.{exc.args[0]}", "missing") from None
    except (TypeError, ValueError):
        raise ConfigError(path, "grid bounds must be numbers") from None
    try:
        n = int(value["n_points"])
    except KeyError:
        raise ConfigError(f"{path}.n_points", "missing") from None
    except (TypeError, ValueError):
        raise ConfigError(f"{path}.n_points", "expected an integer") from None
    try:
        return VGrid(v_min, v_max, n)
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None


def _parse_ks(value, path: str) -> tuple[int, ...]:
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(path, "expected a non-empty list of integers")
    out = []
    for i, k in enumerate(value):
        try:
            ki = int(k)
        except (TypeError, ValueError):
            raise ConfigError(f"{path}[{i}]", f"expected an integer, got {k!r}") from None
        if ki < 1 or ki != float(k):
            raise ConfigError(f"{path}[{i}]", f"expected a positive integer, got {k!r}")
        out.append(ki)
    return tuple(sorted(set(out)))


def build_config(raw: dict) -> RunConfig:
    """Validate a raw config mapping (JSON schema of RunConfig)."""
    known = {"preset", "window", "grid", "ks", "outputs", "commands"}
    for key in raw:
        if key not in known:
            raise ConfigError(key, "unknown field")
    name, weight, preset_window = _parse_weight(raw.get("preset", "fs"), "preset")
    window = _parse_window(raw.get("window"), weight, "window") or preset_window
    if window is None:
        window = SlopeWindow.full(weight)
    cfg = RunConfig(preset=name, weight=weight, window=window)
    if raw.get("grid") is not None:
        cfg.grid = _parse_grid(raw["grid"], "grid")
        cfg.grid_given = True
    if raw.get("ks") is not None:
        cfg.ks = _parse_ks(raw["ks"], "ks")
    if raw.get("outputs") is not None:
        if not isinstance(raw["outputs"], str):
            raise ConfigError("outputs", "expected a directory path")
        cfg.outputs = Path(raw["outputs"])
    cmds = raw.get("commands")
    if cmds is not None:
        if isinstance(cmds, str) or not isinstance(cmds, (list, tuple)) or not cmds:
            raise ConfigError("commands", f"expected a non-empty list drawn from {COMMANDS}")
        for i, c in enumerate(cmds):
            if c not in COMMANDS:
                raise ConfigError(f"commands[{i}]", f"unknown command {c!r}")
        cfg.commands = tuple(dict.fromkeys(cmds))
    return cfg


def run(cfg: RunConfig, log=print) -> int:
    """Execute the configured commands; returns the exit status."""
    outputs: list[tuple[Path, object]] = []
    reports: list[verify.ConvergenceReport] = []
    out = cfg.outputs

    for cmd in cfg.commands:
        if cmd == "envelope":
            res = constrained_envelope(cfg.weight.sample(cfg.grid), cfg.window)
            outputs.append((out / "envelope.csv", res))
        elif cmd == "bergman":
            for k in cfg.ks:
                space = SectionSpace.from_window(cfg.weight, k, cfg.window)
                ev = bergman_function(space, monomial_log_norms(space), cfg.grid)
                outputs.append((out / f"bergman_k{k}.csv", ev))
        elif cmd == "kernel":
            v = cfg.grid.nodes
            for k in cfg.ks:
                space = SectionSpace.from_window(cfg.weight, k, cfg.window)
                norms = monomial_log_norms(space)
                ksq = kernel_offdiag_sq(space, norms, (0.0, 0.0), (v, np.zeros_like(v)))
                with np.errstate(divide="ignore"):
                    cols = [v, ksq, np.log(ksq)]
                outputs.append((out / f"kernel_k{k}.csv", (["v", "kernel_sq", "log_kernel_sq"], cols)))
        elif cmd == "verify":
            reports += verify.run_suite(cfg.weight, cfg.window, cfg.ks)
        elif cmd == "examples":
            which = [cfg.preset] if cfg.preset in ("example_5_2", "example_5_3") else [
                "example_5_2", "example_5_3"]
            grid = cfg.grid if cfg.grid_given else verify.DIVISOR_GRID
            reports += [verify.divisor_example_report(w, grid) for w in which]
            reports.append(verify.lelong_report(cfg.ks))

    try:
        out.mkdir(parents=True, exist_ok=True)
        for path, obj in outputs:
            if isinstance(obj, tuple):
                write_csv(path, *obj)
            else:
                obj.to_csv(path)
        for rep in reports:
            stem = rep.theorem_id.lower()
            if rep.theorem_id == "DIVISOR_RADIUS":
                stem += "_" + ("5_2" if rep.rows[0].aux["v_boundary"] > 0 else "5_3")
            write_json(out / f"{stem}.json", rep.to_dict())
            rep.to_csv(out / f"{stem}.csv")
    except OSError as exc:
        log(f"error: cannot write {exc.filename}: {exc.strerror}")
        return 3

    for rep in reports:
        log(rep.summary())
    return 0 if all(r.passed for r in reports) else 1


def _arg_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bergmanlab", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="JSON RunConfig file")
    p.add_argument("--preset", help="preset name or inline weight JSON")
    p.add_argument("--k", type=str, action="append", dest="ks", help="tensor power (repeatable)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--grid", help="vmin:vmax:n")
    p.add_argument("--window", help="lo:hi, at_zero, at_infinity or none")
    p.add_argument("--cmd", action="append", dest="commands", choices=COMMANDS)
    p.add_argument("--list-presets", action="store_true", help="print the preset catalog and exit")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _arg_parser().parse_args(argv)
    if args.list_presets:
        print(json.dumps(list_presets(), indent=2))
        return 0
    raw: dict = {}
    try:
        if args.config:
            try:
                raw = json.loads(Path(args.config).read_text())
            except OSError as exc:
                raise ConfigError("--config", f"cannot read {args.config}: {exc.strerror}") from None
            except json.JSONDecodeError as exc:
                raise ConfigError("--config", f"invalid JSON: {exc}") from None
            if not isinstance(raw, dict):
                raise ConfigError("--config", "expected a JSON object")
        for key, val in [
            ("preset", args.preset),
            ("ks", args.ks),
            ("outputs", args.out),
            ("grid", args.grid),
            ("window", args.window),
            ("commands", args.commands),
        ]:
            if val is not None:
                raw[key] = val
        cfg = build_config(raw)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
