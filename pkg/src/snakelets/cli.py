"""Command-line interface: canny, recover, detect, eval and gvf subcommands.

Every subcommand accepts ``--config FILE`` with ``key=value`` lines whose
keys are flag names (dashes or underscores); flags given on the command line
override the file.  Exit codes: 0 success, 1 assertion failure, 2 usage or
validation error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .canny import Thresholds, canny_detect, thresholds_from_fractiles
from .detect import DetectParams, detect, rasterize
from .evaluation import BreakSpec, contour_gradient, ellipse_ring, make_breaks, score, u_shape
from .gvf import DEFAULT_MU, field_to_display, gvf_init, gvf_iterate, gvf_normalize
from .imagecore import ImageFormatError, gradient, load_image, nonmax_suppress, save_image, to_grayscale
from .recovery import RecoveryParams, SnakeletSet, recover
from .snakelet import Snakelet, SnakeletParams, State, write_records

EXIT_OK = 0
EXIT_ASSERT = 1
EXIT_USAGE = 2
EXIT_IO = 3

CAL = "calibrated default"
RNG = "default taken from the usual working range"


class UsageError(Exception):
    pass


# ------------------------------------------------------------------- parser


def _add_snake_args(p: argparse.ArgumentParser) -> None:
    d = SnakeletParams()
    g = p.add_argument_group("snakelet")
    g.add_argument("--alpha", type=float, default=d.alpha, help=f"tension weight ({CAL}: %(default)s)")
    g.add_argument("--beta", type=float, default=d.beta, help=f"rigidity weight ({CAL}: %(default)s)")
    g.add_argument("--gamma", type=float, default=d.gamma, help=f"growing force weight ({CAL}: %(default)s)")
    g.add_argument("--kappa", type=float, default=d.kappa, help=f"external force step ({CAL}: %(default)s)")
    g.add_argument("--spacing", type=float, default=d.spacing, help=f"point spacing in pixels ({CAL}: %(default)s)")
    g.add_argument("--step", type=float, default=d.step, help=f"growth per iteration in pixels ({CAL}: %(default)s)")
    g.add_argument(
        "--curvature-window",
        type=float,
        default=d.curvature_window,
        help=f"arc length used to bend the growth direction, 0 grows straight ({CAL}: %(default)s)",
    )


def _add_recovery_args(p: argparse.ArgumentParser) -> None:
    d = RecoveryParams()
    g = p.add_argument_group("recovery")
    g.add_argument("--init-length", type=int, default=d.init_length, help=f"initial snakelet length ({RNG}: %(default)s)")
    g.add_argument("--max-grow", type=float, default=d.max_grow, help=f"maximum growing length ({RNG}: %(default)s)")
    g.add_argument("--gvf-init-iters", type=int, default=d.gvf_init_iters, help=f"initial GVF iterations ({RNG}: %(default)s)")
    g.add_argument("--gvf-expand-step", type=int, default=d.gvf_expand_step, help=f"GVF iterations added per retry ({CAL}: %(default)s)")
    g.add_argument("--gvf-max-iters", type=int, default=d.gvf_max_iters, help=f"GVF iteration cap ({CAL}: %(default)s)")


def _add_common_args(p: argparse.ArgumentParser, *, thresholds: bool = False) -> None:
    p.add_argument("--config", type=Path, help="key=value file; command-line flags take precedence")
    p.add_argument("--sigma", type=float, default=1.0, help=f"Gaussian smoothing in pixels ({CAL}: %(default)s)")
    if thresholds:
        d = DetectParams().th
        p.add_argument("--th", type=float, default=d.high, help=f"high threshold ({CAL}: %(default)s)")
        p.add_argument("--tl", type=float, default=d.low, help=f"low threshold ({CAL}: %(default)s)")
        p.add_argument(
            "--fractiles",
            action="store_true",
            help="read --th and --tl as fractiles of the positive NMS magnitudes instead of absolute values",
        )


def _add_output_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--records", type=Path, help="snakelet records file (default: output with .jsonl suffix)")
    p.add_argument("--export", choices=("svg",), help="also write snakelets as vector polylines")
    p.add_argument("--export-path", type=Path, help="vector output path (default: output with .svg suffix)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="snakelets", description="Snakelet edge detection and broken-edge recovery.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("canny", help="baseline Canny edge map")
    _add_common_args(p, thresholds=True)
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path)

    p = sub.add_parser("recover", help="close breaks in a binary edge map")
    _add_common_args(p)
    _add_recovery_args(p)
    _add_snake_args(p)
    p.add_argument("--snap", type=float, default=RecoveryParams().snap, help=f"reach distance in pixels ({CAL}: %(default)s)")
    p.add_argument("--mu", type=float, default=DEFAULT_MU, help=f"GVF regularization ({CAL}: %(default)s)")
    p.add_argument("--gradient-image", type=Path, help="gray or color image whose gradient guides the recovery")
    _add_output_args(p)
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path)

    p = sub.add_parser("detect", help="snakelet edge detection")
    _add_common_args(p, thresholds=True)
    d = DetectParams()
    p.add_argument("--seed-init-length", type=float, default=d.seed_init_length, help=f"initial seed snakelet length ({RNG}: %(default)s)")
    p.add_argument("--chain-max-grow", type=float, default=d.chain_max_grow, help=f"maximum growth per chain link ({RNG}: %(default)s)")
    p.add_argument("--gvf-iters", type=int, default=d.gvf_iters, help=f"GVF iterations ({RNG}: %(default)s)")
    p.add_argument("--coverage-radius", type=int, default=d.coverage_radius, help=f"occupancy dilation radius ({CAL}: %(default)s)")
    p.add_argument("--snap", type=float, default=d.snap, help=f"reach distance in pixels ({CAL}: %(default)s)")
    p.add_argument("--mu", type=float, default=d.mu, help=f"GVF regularization ({CAL}: %(default)s)")
    p.add_argument("--no-recovery", action="store_true", help="skip the final break recovery pass")
    _add_recovery_args(p)
    _add_snake_args(p)
    _add_output_args(p)
    p.add_argument("--overlay", type=Path, help="PNG with snakelets drawn in blue over the NMS image")
    p.add_argument("--merge-chains", action="store_true", help="export each seed's chain of snakelets as one polyline")
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path)

    p = sub.add_parser("eval", help="score recovery on a synthetic fixture")
    p.add_argument("--config", type=Path, help="key=value file; command-line flags take precedence")
    p.add_argument("--fixture", choices=("ellipse", "u-shape"), default="ellipse")
    p.add_argument("--mode", choices=("binary", "gradient"), default="binary", help="recovery without or with a gradient field")
    p.add_argument("--seed", type=int, default=0, help="break placement seed")
    p.add_argument("--breaks", type=int, default=2, help="number of breaks")
    p.add_argument("--min-break", type=int, default=5, help="shortest break in pixels")
    p.add_argument("--max-break", type=int, default=25, help="longest break in pixels")
    p.add_argument("--tolerance", type=float, default=2.0, help="match distance in pixels")
    p.add_argument("--report", type=Path, help="write the metrics report here as well as to stdout")
    p.add_argument("--assert-f1", type=float, help="exit 1 when f1 is below this bound")
    p.add_argument("--assert-gap-closure", type=float, help="exit 1 when the gap closure rate is below this bound")
    _add_recovery_args(p)
    _add_snake_args(p)

    p = sub.add_parser("gvf", help="write GVF components as debug PGM images")
    p.add_argument("--config", type=Path, help="key=value file; command-line flags take precedence")
    p.add_argument("--mu", type=float, default=DEFAULT_MU, help=f"GVF regularization ({CAL}: %(default)s)")
    p.add_argument("--iterations", default="3,10", help="comma-separated iteration counts (default: %(default)s)")
    p.add_argument("input", type=Path, help="edge map or gray image used as the GVF source")
    p.add_argument("prefix", type=Path, help="outputs are PREFIX_u_N.pgm and PREFIX_v_N.pgm")
    return parser


# ------------------------------------------------------------------- config


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:  # noqa: SLF001
        if isinstance(action, argparse._SubParsersAction) and command in action.choices:
            return action.choices[command]
    raise UsageError(f"unknown command {command!r}")


def read_config(path: Path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for number, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{number}: expected key=value")
            key, value = line.split("=", 1)
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def _apply_config(sub: argparse.ArgumentParser, values: dict[str, str]) -> None:
    actions = {a.dest: a for a in sub._actions if a.option_strings and a.dest not in ("help", "config")}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None:
            raise UsageError(f"unknown config key {key!r}")
        if isinstance(action, argparse._StoreTrueAction):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise UsageError(f"config key {key!r} expects a boolean")
            defaults[key] = raw.lower() in ("true", "1", "yes")
            continue
        try:
            value = action.type(raw) if action.type else raw
        except (TypeError, ValueError):
            raise UsageError(f"config key {key!r}: invalid value {raw!r}") from None
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"config key {key!r}: {raw!r} is not one of {sorted(action.choices)}")
        defaults[key] = value
    sub.set_defaults(**defaults)


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    if known.config is not None and known.command:
        try:
            values = read_config(known.config)
        except OSError as exc:
            raise OSError(f"cannot read config {known.config}: {exc.strerror or exc}") from exc
        _apply_config(_subparser(parser, known.command), values)
    return parser.parse_args(argv)


# ----------------------------------------------------------------- builders


def _thresholds(args) -> Thresholds:
    return Thresholds(args.th, args.tl)


def _snake_params(args) -> SnakeletParams:
    return SnakeletParams(
        alpha=args.alpha,
        beta=args.beta,
        gamma=args.gamma,
        spacing=args.spacing,
        kappa=args.kappa,
        step=args.step,
        curvature_window=args.curvature_window,
    )


def _recovery_params(args, snake: SnakeletParams) -> RecoveryParams:
    params = RecoveryParams(
        init_length=args.init_length,
        max_grow=args.max_grow,
        gvf_init_iters=args.gvf_init_iters,
        gvf_expand_step=args.gvf_expand_step,
        gvf_max_iters=args.gvf_max_iters,
        snap=getattr(args, "snap", RecoveryParams().snap),
        mu=getattr(args, "mu", DEFAULT_MU),
    )
    params.check_against(snake)
    return params


def _check_sigma(sigma: float) -> None:
    if sigma < 0:
        raise ValueError("sigma must be >= 0")


# ------------------------------------------------------------------ outputs


def svg_document(polylines: Sequence[np.ndarray], shape: tuple[int, int]) -> str:
    """SVG 1.1 document with one polyline per point chain, 3-decimal coordinates."""
    h, w = shape
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
    ]
    for k, pts in enumerate(polylines):
        coords = " ".join(f"{x:.3f},{y:.3f}" for x, y in pts)
        lines.append(f'  <polyline id="s{k}" points="{coords}" fill="none" stroke="#0000ff" stroke-width="1"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def merge_chains(snakelets: Sequence[Snakelet]) -> list[np.ndarray]:
    """Join each chain of continuation links, and the two halves started at one seed, into one polyline.

    A link whose ``parent_id`` names another snakelet continues from that
    snakelet's tail.  Root snakelets sharing ``source_id`` and head point
    are the two halves of one seed and are joined head to head.  Snakelets
    without relatives are exported unchanged.
    """
    by_id = {s.id: s for s in snakelets}
    child = {}
    for s in snakelets:
        if s.parent_id is not None and s.parent_id in by_id and s.parent_id not in child:
            child[s.parent_id] = s

    def walk(root: Snakelet) -> np.ndarray:
        parts = [root.points]
        cur = root
        while cur.id in child:
            cur = child[cur.id]
            parts.append(cur.points[1:] if np.allclose(cur.points[0], parts[-1][-1]) else cur.points)
        return np.vstack(parts)

    roots = [s for s in snakelets if s.parent_id is None or s.parent_id not in by_id]
    groups: dict[tuple, list[Snakelet]] = {}
    order = []
    for s in roots:
        key = (s.source_id, round(float(s.points[0, 0]), 3), round(float(s.points[0, 1]), 3))
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(s)
    out = []
    for key in order:
        members = groups[key]
        if len(members) == 2:
            a, b = walk(members[0]), walk(members[1])
            out.append(np.vstack((b[::-1], a[1:])))
        else:
            out.extend(walk(m) for m in members)
    return out


def _default_path(output: Path, given: Optional[Path], suffix: str) -> Path:
    return given if given is not None else output.with_suffix(suffix)


def _write_snakelet_outputs(args, result: SnakeletSet, polylines: Optional[list[np.ndarray]] = None) -> None:
    write_records(_default_path(args.output, args.records, ".jsonl"), result.snakelets)
    if args.export == "svg":
        if polylines is None:
            polylines = [s.points for s in result.snakelets]
        Path(_default_path(args.output, args.export_path, ".svg")).write_text(
            svg_document(polylines, result.shape), encoding="utf-8"
        )


def _overlay(nms: np.ndarray, edges: np.ndarray) -> np.ndarray:
    peak = nms.max()
    gray = nms / peak if peak > 0 else nms
    rgb = np.repeat(np.clip(gray, 0.0, 1.0)[:, :, None], 3, axis=2)
    rgb[edges] = (0.0, 0.0, 1.0)
    return rgb


def _binary_input(path: Path) -> np.ndarray:
    img = load_image(path)
    plane = to_grayscale(img).data if img.channels == 3 else img.data
    binary = plane >= 0.5
    if not np.all((plane == 0.0) | (plane == 1.0)):
        print(f"warning: {path} is not binary; thresholding at 0.5", file=sys.stderr)
    return binary


# ----------------------------------------------------------------- commands


def cmd_canny(args) -> int:
    th = _thresholds(args)
    _check_sigma(args.sigma)
    img = load_image(args.input)
    if args.fractiles:
        th = thresholds_from_fractiles(nonmax_suppress(gradient(img, args.sigma)), th.high, th.low)
    edges = canny_detect(img, args.sigma, th)
    save_image(args.output, edges)
    print(f"edge pixels: {int(edges.sum())}")
    return EXIT_OK


def cmd_recover(args) -> int:
    snake = _snake_params(args)
    params = _recovery_params(args, snake)
    _check_sigma(args.sigma)
    edges = _binary_input(args.input)
    grad = None
    if args.gradient_image is not None:
        guide = load_image(args.gradient_image)
        if guide.shape[:2] != edges.shape:
            raise ValueError(f"gradient image shape {guide.shape[:2]} does not match edge map {edges.shape}")
        grad = gradient(guide, args.sigma)
    result = recover(edges, params, snake, grad)
    reached = result.with_state(State.REACHED)
    out = edges | rasterize(reached, edges.shape)
    save_image(args.output, out)
    _write_snakelet_outputs(args, result)
    print(f"endpoints: {len(result)} reached: {len(reached)} discarded: {len(result.with_state(State.DISCARDED))}")
    return EXIT_OK


def cmd_detect(args) -> int:
    th = _thresholds(args)
    snake = _snake_params(args)
    recovery = None if args.no_recovery else _recovery_params(args, snake)
    params = DetectParams(
        sigma=args.sigma,
        th=th,
        seed_init_length=args.seed_init_length,
        chain_max_grow=args.chain_max_grow,
        gvf_iters=args.gvf_iters,
        coverage_radius=args.coverage_radius,
        snap=args.snap,
        mu=args.mu,
        snake=snake,
        recovery=recovery,
    )
    img = load_image(args.input)
    grad = gradient(img, params.sigma)
    if args.fractiles:
        params = replace(params, th=thresholds_from_fractiles(nonmax_suppress(grad), th.high, th.low))
    result = detect(img, params, grad)
    edges = rasterize(result)
    save_image(args.output, edges)
    polylines = merge_chains(result.snakelets) if args.merge_chains else None
    _write_snakelet_outputs(args, result, polylines)
    if args.overlay is not None:
        save_image(args.overlay, _overlay(nonmax_suppress(grad).data, edges))
    print(f"snakelets: {len(result)} edge pixels: {int(edges.sum())}")
    return EXIT_OK


def cmd_eval(args) -> int:
    snake = _snake_params(args)
    params = _recovery_params(args, snake)
    spec = BreakSpec(args.breaks, args.min_break, args.max_break, args.seed)
    if args.tolerance < 0:
        raise ValueError("tolerance must be >= 0")
    truth = ellipse_ring() if args.fixture == "ellipse" else u_shape()
    broken, gaps = make_breaks(truth, spec)
    grad = contour_gradient(truth) if args.mode == "gradient" else None
    result = recover(broken, params, snake, grad)
    out = broken | rasterize(result.with_state(State.REACHED), truth.shape)
    metrics = score(out, truth, args.tolerance, gaps)
    report = metrics.report()
    sys.stdout.write(report)
    if args.report is not None:
        args.report.write_text(report, encoding="utf-8")
    status = EXIT_OK
    if args.assert_f1 is not None and metrics.f1 < args.assert_f1:
        print(f"assertion failed: f1 {metrics.f1:.6f} < {args.assert_f1}", file=sys.stderr)
        status = EXIT_ASSERT
    if args.assert_gap_closure is not None and metrics.gap_closure_rate < args.assert_gap_closure:
        print(
            f"assertion failed: gap_closure_rate {metrics.gap_closure_rate:.6f} < {args.assert_gap_closure}",
            file=sys.stderr,
        )
        status = EXIT_ASSERT
    return status


def _iteration_list(text: str) -> list[int]:
    try:
        counts = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ValueError(f"invalid iteration list {text!r}") from None
    if not counts or any(c < 0 for c in counts):
        raise ValueError("iteration counts must be non-negative integers")
    return sorted(set(counts))


def cmd_gvf(args) -> int:
    counts = _iteration_list(args.iterations)
    if not args.mu > 0:
        raise ValueError(f"mu must be > 0, got {args.mu}")
    img = load_image(args.input)
    source = to_grayscale(img).data if img.channels == 3 else img.data
    state = gvf_init(source, args.mu)
    for n in counts:
        state = gvf_iterate(state, n - state.iterations_done)
        unit = gvf_normalize(state)
        for name, comp in (("u", unit.u), ("v", unit.v)):
            save_image(Path(f"{args.prefix}_{name}_{n}.pgm"), field_to_display(comp))
    print(f"wrote {2 * len(counts)} images")
    return EXIT_OK


COMMANDS = {"canny": cmd_canny, "recover": cmd_recover, "detect": cmd_detect, "eval": cmd_eval, "gvf": cmd_gvf}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        return COMMANDS[args.command](args)
    except (ImageFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
