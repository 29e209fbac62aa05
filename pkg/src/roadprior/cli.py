"""Command line pipeline: synth -> build-templates -> cluster-anchors -> diffuse -> evaluate.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal invariant
violation.  Every subcommand accepts ``--config file.toml``; keys in the
section named after the subcommand (or at top level) set flag defaults, and
explicit flags override them.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import anchors as anchors_mod
from . import dataset as ds
from . import diffusion as dif
from . import evaluation as ev
from . import plotting
from . import template_space as ts
from .errors import DataError, InvariantViolation, RoadPriorError
from .geometry import CLASSES, DEFAULT_BOX, RoadElement, canonicalize

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- commands


def cmd_synth(args):
    cfg = ds.SynthConfig.from_toml(args.config) if args.config else ds.SynthConfig()
    overrides = {k: v for k, v in (("seed", args.seed), ("n_frames", args.n_frames)) if v is not None}
    if overrides:
        cfg = ds.SynthConfig.from_dict({**_config_dict(cfg), **overrides})
    records = ds.generate_synthetic(cfg)
    ds.save_dataset(records, args.out)
    n = sum(len(r.elements) for r in records)
    print(f"synth: wrote {len(records)} frames, {n} elements to {args.out}")


def _config_dict(cfg):
    d = asdict(cfg)
    d["box"] = cfg.box.to_dict()
    return d


def cmd_build_templates(args):
    records = ds.load_dataset(args.dataset)
    matrix = ts.ElementMatrix.from_records(records, center=args.center)
    space = ts.fit(matrix, args.M, method=args.method)
    try:
        ts.check_orthonormal(space.basis)
    except DataError as exc:
        raise InvariantViolation(str(exc)) from exc
    ts.save(space, args.out)
    print(
        f"build-templates: N={space.N} M={space.M} L={matrix.L} "
        f"explained={space.explained_variance(min(space.M, space.rank)):.6f} -> {args.out}"
    )
    if args.plot:
        spaces = {"all": ts.fit(matrix, min(5, matrix.N, matrix.L))}
        for cls, sp in ts.fit_per_class(records, 5, center=args.center).items():
            spaces[cls.value] = sp
        plotting.write(plotting.templates_svg(spaces), args.plot)


def cmd_cluster_anchors(args):
    space = ts.load(args.templates)
    records = ds.load_dataset(args.dataset)
    matrix = ts.ElementMatrix.from_records(records, center=space.mean_removed)
    cfg = anchors_mod.ClusterConfig(args.n_anchors, args.max_iter, args.tol, args.seed, args.init)
    aset = anchors_mod.select_prior_anchors(matrix, space, cfg)
    if not np.array_equal(aset.anchors, space.reconstruct(aset.coefficients)):
        raise InvariantViolation("anchors differ from the reconstruction of their coefficients")
    anchors_mod.save(aset, args.out)
    print(
        f"cluster-anchors: {aset.n_anchors} anchors, {aset.iterations_run} iterations, "
        f"converged={aset.converged} -> {args.out}"
    )
    if args.plot:
        plotting.write(
            plotting.anchors_svg(aset.anchors, aset.classes, title="prior anchors"), args.plot
        )


def _frame_seed(seed, index):
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def cmd_diffuse(args):
    aset = anchors_mod.load(args.anchors)
    schedule = dif.NoiseSchedule.linear(args.beta_start, args.beta_end, args.t_total, args.t_trunc)
    denoiser = dif.oracle_denoiser(aset)
    frames = [r.frame_id for r in ds.load_dataset(args.frames)] if args.frames else ["anchors"]
    box = None if args.raw_meters else DEFAULT_BOX
    preds = []
    for fi, frame in enumerate(frames):
        scores, elements = dif.truncated_denoise_loop(
            schedule,
            aset,
            denoiser,
            conditioning=frame,
            steps=args.steps,
            seed=_frame_seed(args.sigma_seed, fi),
            noise_once=args.noise_once,
            box=box,
        )
        for k, (s, vec) in enumerate(zip(scores, elements)):
            cls = CLASSES[int(np.argmax(s))]
            elem = canonicalize(RoadElement.from_vector(cls, vec, id=f"{frame}/pred{k}"))
            preds.append(ev.Prediction(elem, float(np.max(s)), frame))
    ds.save_predictions(preds, args.out)
    print(f"diffuse: {len(preds)} predictions over {len(frames)} frames -> {args.out}")
    if args.plot:
        plotting.write(
            plotting.anchors_svg(
                [p.element.vector for p in preds[: aset.n_anchors]],
                [p.element.cls for p in preds[: aset.n_anchors]],
                title="denoised predictions",
            ),
            args.plot,
        )


def _parse_thresholds(text):
    try:
        vals = tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise UsageError(f"evaluate: bad --thresholds {text!r}") from exc
    if not vals or any(v <= 0 for v in vals):
        raise UsageError("evaluate: thresholds must be positive")
    return vals


def cmd_evaluate(args):
    thresholds = ev.STRICT_THRESHOLDS if args.strict else _parse_thresholds(args.thresholds)
    preds = ds.load_predictions(args.pred)
    gts = ds.load_dataset(args.gt)
    report = ev.evaluate(preds, gts, thresholds)
    print(report.table())
    out = args.report or str(Path(args.pred).with_suffix(".report.json"))
    Path(out).write_text(json.dumps(report.to_dict(), indent=1) + "\n")
    print(f"evaluate: report -> {out}")


# ---------------------------------------------------------------- parser


def build_parser():
    p = _Parser(prog="roadprior", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    s = sub.add_parser("synth", help="generate a synthetic scene dataset")
    s.add_argument("--config", help="TOML file with generator settings ([synth] table or top level)")
    s.add_argument("--out", required=True, help="output JSONL dataset")
    s.add_argument("--seed", type=int, help="override the generator seed")
    s.add_argument("--n-frames", type=int, help="override the number of frames")
    s.set_defaults(func=cmd_synth, generic_config=False)

    b = sub.add_parser("build-templates", help="fit the SVD shape template space")
    b.add_argument("--config", help="TOML file with flag defaults")
    b.add_argument("--dataset", required=True, help="input JSONL dataset")
    b.add_argument("-M", "--M", dest="M", type=int, default=ts.DEFAULT_RANK, help="retained rank (default 20)")
    b.add_argument("--out", required=True, help="output template JSON")
    b.add_argument("--center", action="store_true", help="subtract the mean element before the SVD")
    b.add_argument("--method", choices=("auto", "svd", "gram"), default="auto", help="numerical path")
    b.add_argument("--plot", help="write an SVG of the first 5 basis vectors per class")
    b.set_defaults(func=cmd_build_templates, generic_config=True)

    c = sub.add_parser("cluster-anchors", help="select prior anchors by K-means in template space")
    c.add_argument("--config", help="TOML file with flag defaults")
    c.add_argument("--templates", required=True, help="template JSON from build-templates")
    c.add_argument("--dataset", required=True, help="input JSONL dataset")
    c.add_argument("--n-anchors", type=int, default=50, help="number of anchors N_P (default 50)")
    c.add_argument("--seed", type=int, default=0, help="K-means initialization seed")
    c.add_argument("--max-iter", type=int, default=300, help="iteration cap S_max (default 300)")
    c.add_argument("--tol", type=float, default=1e-4, help="center-movement tolerance (default 1e-4)")
    c.add_argument("--init", choices=("random", "k-means++"), default="random", help="center initialization")
    c.add_argument("--out", required=True, help="output anchor JSON")
    c.add_argument("--plot", help="write an SVG of all anchors in the BEV box")
    c.set_defaults(func=cmd_cluster_anchors, generic_config=True)

    d = sub.add_parser("diffuse", help="run the truncated noise/denoise loop with the oracle denoiser")
    d.add_argument("--config", help="TOML file with flag defaults")
    d.add_argument("--anchors", required=True, help="anchor JSON from cluster-anchors")
    d.add_argument("--steps", type=int, default=2, help="denoiser iterations T (default 2)")
    d.add_argument("--sigma-seed", type=int, default=0, help="noise seed")
    d.add_argument("--out", required=True, help="output predictions JSONL")
    d.add_argument("--beta-start", type=float, default=1e-4, help="first beta of the linear schedule")
    d.add_argument("--beta-end", type=float, default=0.02, help="last beta of the linear schedule")
    d.add_argument("--t-total", type=int, default=1000, help="schedule length T_total")
    d.add_argument("--t-trunc", type=int, default=2, help="truncated step count (default 2)")
    d.add_argument("--noise-once", action="store_true", help="noise only the initial anchors")
    d.add_argument("--raw-meters", action="store_true", help="noise in meters instead of box-normalized")
    d.add_argument("--frames", help="dataset whose frame ids receive predictions")
    d.add_argument("--plot", help="write an SVG of the first frame's predictions")
    d.set_defaults(func=cmd_diffuse, generic_config=True)

    e = sub.add_parser("evaluate", help="Chamfer AP/mAP of predictions against ground truth")
    e.add_argument("--config", help="TOML file with flag defaults")
    e.add_argument("--pred", required=True, help="predictions JSONL")
    e.add_argument("--gt", required=True, help="ground-truth JSONL dataset")
    e.add_argument("--thresholds", default="0.5,1.0,1.5", help="comma-separated Chamfer thresholds (m)")
    e.add_argument("--strict", action="store_true", help="evaluate at the strict threshold 0.2 m only")
    e.add_argument("--report", help="JSON report path (default: <pred>.report.json)")
    e.set_defaults(func=cmd_evaluate, generic_config=True)
    return p, sub


def _apply_config(sub, argv):
    """Install defaults from ``--config`` before the real parse."""
    if not argv or argv[0] not in sub.choices:
        return
    subparser = sub.choices[argv[0]]
    if subparser.get_default("generic_config") is not True:
        return
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv[1:])
    if not known.config:
        return
    with open(known.config, "rb") as fh:
        data = tomllib.load(fh)
    section = data.get(argv[0], data)
    dests = {a.dest for a in subparser._actions} - {"config", "func", "help", "generic_config"}
    defaults = {}
    for key, value in section.items():
        dest = key.replace("-", "_")
        if dest not in dests:
            raise UsageError(f"{argv[0]}: unknown config key {key!r}")
        defaults[dest] = value
    for a in subparser._actions:
        if a.dest in defaults:
            a.required = False
    subparser.set_defaults(**defaults)


def main(argv=None) -> int:
    parser, sub = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        _apply_config(sub, argv)
        args = parser.parse_args(argv)
        args.func(args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvariantViolation as exc:
        print(f"{argv[0] if argv else 'roadprior'}: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (DataError, RoadPriorError, OSError) as exc:
        print(f"{argv[0] if argv else 'roadprior'}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"{argv[0] if argv else 'roadprior'}: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
