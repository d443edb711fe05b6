"""Command-line front end.

Commands write CSV files (``#`` header naming columns and units) and, when
asked, a TOML run manifest from which ``replay`` regenerates the same bytes.

Exit codes: 0 success, 1 inconclusive analysis, 2 usage or configuration
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass, field

import tomli
import tomli_w

from . import __version__, pipeline
from .errors import (BracketError, ConfigError, DegeneracyError, IntegrationError,
                     NormBoundsError, UnsupportedError, ValidationError)
from .integrator import IntegratorConfig
from .system_model import load_config, spec_from_mapping, spec_to_mapping

EXIT_OK, EXIT_INCONCLUSIVE, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


@dataclass
class RunManifest:
    command: str
    config: dict
    integrator: dict
    options: dict
    outputs: list[str]
    seed: int = 0
    assumptions: list[str] = field(default_factory=list)

    def to_toml(self) -> str:
        doc = {"version": __version__, "command": self.command, "seed": self.seed,
               "outputs": list(self.outputs), "assumptions": list(self.assumptions),
               "options": self.options, "integrator": self.integrator, "config": self.config}
        return tomli_w.dumps(doc)

    @classmethod
    def from_toml(cls, text: str) -> "RunManifest":
        try:
            doc = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"malformed manifest: {exc}") from None
        for key in ("command", "config", "integrator", "options", "outputs"):
            if key not in doc:
                raise ConfigError("missing manifest key", key)
        return cls(doc["command"], doc["config"], doc["integrator"], doc["options"],
                   doc["outputs"], doc.get("seed", 0), doc.get("assumptions", []))


def _integrator_settings(args) -> dict:
    return {"rtol": args.rtol, "atol": args.atol, "grid_step": args.grid_step,
            "max_step": args.max_step}


def _vector(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _direction(text: str):
    return text if text.startswith("e") else _vector(text)


def execute(manifest: RunManifest) -> pipeline.Result:
    """Run the pipeline a manifest describes."""
    cfg = IntegratorConfig(**manifest.integrator)
    opts = manifest.options
    if manifest.command == "figure":
        return pipeline.run_figure(opts["figure"], cfg)
    spec = spec_from_mapping(manifest.config)
    out = manifest.outputs[0]
    if manifest.command == "fundamental":
        return pipeline.run_fundamental(spec, cfg, opts["normalization"], opts["t_end"], out)
    if manifest.command == "bound":
        return pipeline.run_bound(spec, cfg, opts["x0"], opts["envelope"], opts["t_end"],
                                  opts.get("lipschitz"), out)
    if manifest.command == "attractor":
        return pipeline.run_attractor(spec, cfg, opts["method"], opts["directions"],
                                      opts["t_end"], opts["probe_horizon"],
                                      opts["escape_radius"], out)
    raise ConfigError(f"unknown command '{manifest.command}'", "command")


def _write(path: str, text: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _emit(manifest: RunManifest, result: pipeline.Result, out_dir: str | None,
          manifest_path: str | None, stdout_name: str | None = None):
    for name, text in result.outputs.items():
        if out_dir is None and name == stdout_name:
            sys.stdout.write(text)
            continue
        _write(os.path.join(out_dir or ".", name), text)
    if manifest_path:
        _write(manifest_path, manifest.to_toml())
    for line in result.messages:
        print(line, file=sys.stderr)
    return EXIT_INCONCLUSIVE if result.inconclusive else EXIT_OK


def _load(path: str) -> dict:
    if not os.path.isfile(path):
        raise FileNotFoundError(path)
    return spec_to_mapping(load_config(path))


def cmd_fundamental(args) -> int:
    config = _load(args.config)
    out_dir, name = os.path.split(args.out) if args.out else (None, "fundamental.csv")
    m = RunManifest("fundamental", config, _integrator_settings(args),
                    {"normalization": args.normalization, "t_end": args.t_end}, [name])
    return _emit(m, execute(m), out_dir if args.out else None, args.manifest, name)


def cmd_bound(args) -> int:
    config = _load(args.config)
    out_dir, name = os.path.split(args.out) if args.out else (None, "bounds.csv")
    opts = {"x0": args.x0, "envelope": args.envelope, "t_end": args.t_end}
    if args.lipschitz is not None:
        opts["lipschitz"] = args.lipschitz
    m = RunManifest("bound", config, _integrator_settings(args), opts, [name])
    return _emit(m, execute(m), out_dir if args.out else None, args.manifest, name)


def cmd_attractor(args) -> int:
    config = _load(args.config)
    out_dir, name = os.path.split(args.out) if args.out else (None, "estimates.csv")
    opts = {"method": args.method, "directions": args.direction or ["e1"], "t_end": args.t_end,
            "probe_horizon": args.probe_horizon, "escape_radius": args.escape_radius}
    m = RunManifest("attractor", config, _integrator_settings(args), opts, [name])
    return _emit(m, execute(m), out_dir if args.out else None, args.manifest, name)


def cmd_figure(args) -> int:
    spec = pipeline.figure_spec(args.name)
    os.makedirs(args.out_dir, exist_ok=True)
    result = pipeline.run_figure(args.name, IntegratorConfig(**_integrator_settings(args)))
    m = RunManifest("figure", spec_to_mapping(spec), _integrator_settings(args),
                    {"figure": args.name, **pipeline.FIGURES[args.name][1]},
                    sorted(result.outputs), assumptions=pipeline.FIGURES[args.name][2])
    return _emit(m, result, args.out_dir, os.path.join(args.out_dir, "manifest.toml"))


def cmd_replay(args) -> int:
    if not os.path.isfile(args.manifest_path):
        raise FileNotFoundError(args.manifest_path)
    with open(args.manifest_path, encoding="utf-8") as fh:
        m = RunManifest.from_toml(fh.read())
    out_dir = args.out_dir or os.path.dirname(os.path.abspath(args.manifest_path))
    os.makedirs(out_dir, exist_ok=True)
    result = execute(m)
    # outputs keep the names recorded in the manifest
    if m.command != "figure":
        result.outputs = {m.outputs[0]: next(iter(result.outputs.values()))}
    return _emit(m, result, out_dir, os.path.join(out_dir, os.path.basename(args.manifest_path)))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--rtol", type=float, default=1e-9)
    common.add_argument("--atol", type=float, default=1e-12)
    common.add_argument("--grid-step", type=float, default=0.01)
    common.add_argument("--max-step", type=float, default=math.inf)

    parser = argparse.ArgumentParser(prog="normbounds", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fundamental", parents=[common], help="p(t), k(t) and running averages")
    p.add_argument("config")
    p.add_argument("--normalization", choices=["identity", "frozen"], default="frozen")
    p.add_argument("--t-end", type=float, default=100.0)
    p.add_argument("--out")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_fundamental)

    p = sub.add_parser("bound", parents=[common], help="solution norm against its upper bounds")
    p.add_argument("config")
    p.add_argument("--x0", type=_vector, required=True)
    p.add_argument("--envelope", choices=["linear", "nonlinear", "both"], default="both")
    p.add_argument("--lipschitz", type=float, help="constant l for the linear envelope")
    p.add_argument("--t-end", type=float, default=100.0)
    p.add_argument("--out")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("attractor", parents=[common], help="stability basin / trapping region")
    p.add_argument("config")
    p.add_argument("--method", choices=[*pipeline.METHODS, "all"], default="all")
    p.add_argument("--direction", type=_direction, action="append",
                   help="e1, e2 or comma-separated vector; repeatable")
    p.add_argument("--t-end", type=float, default=200.0)
    p.add_argument("--probe-horizon", type=float, default=100.0)
    p.add_argument("--escape-radius", type=float, default=1e3)
    p.add_argument("--out")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_attractor)

    p = sub.add_parser("figure", parents=[common], help="reproduce a benchmark figure")
    p.add_argument("name", choices=list(pipeline.FIGURES))
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_figure)

    p = sub.add_parser("replay", help="rerun a manifest")
    p.add_argument("manifest_path")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: config not found: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ValidationError, UnsupportedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IntegrationError, DegeneracyError, BracketError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except NormBoundsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
