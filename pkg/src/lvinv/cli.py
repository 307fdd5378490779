"""Command-line entry point: ``lvinv forward|variation|recover|pipeline --config <path>``.

Exit codes: 0 success, 2 validation failure, 3 numerical failure, 4 tolerance failure.
"""
from __future__ import annotations

import argparse
import sys

from . import harness
from .errors import LVInvError


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _params(text):
    out = {}
    for item in text.split(","):
        if not item.strip():
            continue
        key, sep, val = item.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"expected key=value, got {item!r}")
        try:
            out[key.strip()] = float(val)
        except ValueError:
            raise argparse.ArgumentTypeError(f"parameter {key!r} is not a number: {val!r}")
    return out


def build_parser() -> argparse.ArgumentParser:
    # argparse exits with status 2 on bad usage, matching the validation code
    p = argparse.ArgumentParser(prog="lvinv", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="TOML run configuration (defaults are used if omitted)")
        sp.add_argument("--out", help="output directory (overrides LVINV_OUT and [output].dir)")

    fw = sub.add_parser("forward", help="simulate the coupled system and write fields and measurements")
    common(fw)
    fw.add_argument("--model", help="preset: hydra, holling_tanner or bazykin")
    fw.add_argument("--params", type=_params, help="comma-separated key=value model parameters")
    fw.add_argument("--L", help='domain length (number or "pi")')
    fw.add_argument("--N", type=int, help="number of grid cells")
    fw.add_argument("--T", type=float, help="final time")
    fw.add_argument("--steps", type=int, help="number of time steps")
    fw.add_argument("--scheme", choices=["backward_euler_imex", "crank_nicolson_imex"])

    va = sub.add_parser("variation", help="finite-difference and direct variation fields, with agreement report")
    common(va)
    va.add_argument("--order", type=int)
    va.add_argument("--eps", type=float, help="smallest epsilon of a doubling ladder")
    va.add_argument("--ladder", type=_floats, help="comma-separated epsilon ladder")
    va.add_argument("--mode", choices=["fd", "direct", "both"])

    rc = sub.add_parser("recover", help="reconstruct Taylor coefficients from synthetic measurements")
    common(rc)
    rc.add_argument("--design", help="TOML file whose [design] table replaces the config's")
    rc.add_argument("--max-order", type=int)
    rc.add_argument("--eps-ladder", type=_floats)
    rc.add_argument("--truth", help='"model" (default), "none", or a preset name to report errors against')
    rc.add_argument("--report", help="report CSV path; the summary goes next to it as .txt")

    pl = sub.add_parser("pipeline", help="full run: forward, variation check, recovery, reports")
    common(pl)
    return p


def _overrides(args) -> dict:
    ov = {"model": {}, "grid": {}, "variation": {}, "recovery": {}}
    if args.command == "forward":
        ov["model"] = {"kind": args.model, "params": args.params}
        if args.model and not args.params:
            ov["model"]["params"] = {}
        ov["grid"] = {"L": args.L, "N": args.N, "T": args.T, "steps": args.steps, "scheme": args.scheme}
        if args.L is not None and args.L.strip().lower() != "pi":
            try:
                ov["grid"]["L"] = float(args.L)
            except ValueError:
                raise harness.StageError("config", harness.ValidationError(f"bad --L {args.L!r}"))
    elif args.command == "variation":
        ov["variation"] = {"order": args.order, "eps": args.eps, "ladder": args.ladder, "mode": args.mode}
    elif args.command == "recover":
        ov["recovery"] = {"max_order": args.max_order, "ladder": args.eps_ladder}
        if args.truth is not None:
            ov["recovery"]["truth"] = args.truth.lower() != "none"
            if args.truth.lower() not in ("none", "model"):
                ov["recovery"]["truth_preset"] = args.truth
    return ov


def _load(args):
    ov = _overrides(args)
    raw = {}
    if args.config:
        raw = harness.read_config(args.config)
    if getattr(args, "design", None):
        raw["design"] = harness.read_config(args.design).get("design", {})
    return harness.build_config(harness.merge_overrides(raw, ov), args.config or "<defaults>", args.out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        if args.command == "forward":
            result = harness.run_forward(cfg)
        elif args.command == "variation":
            result = harness.run_variation(cfg)
        elif args.command == "recover":
            result = harness.run_recover(cfg, args.report)
        else:
            result = harness.run_pipeline(cfg)
    except (LVInvError, OSError) as exc:
        print(f"lvinv: error: {exc}", file=sys.stderr)
        return harness.exit_code_for(exc)
    for m in result.messages:
        print(m)
    for f in result.files:
        print(f"wrote {f}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
