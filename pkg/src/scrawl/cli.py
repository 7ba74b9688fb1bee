"""Command-line batch entry points for every pipeline stage.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training divergence.
All diagnostics go to standard error; the effective configuration (all
defaults resolved) is printed before each run for reproducibility.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import io_formats as iof
from . import pipelines, slm
from .augment import AugmentConfig, augment_dataset
from .reconstruct import ReconstructionConfig, reconstruct_plan

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3


class UsageError(Exception):
    pass


class CliParser(argparse.ArgumentParser):
    """argparse, but usage problems exit with code 1 instead of 2."""

    def error(self, message):
        raise UsageError(message)


def _infer_format(path: str) -> str:
    ext = os.path.splitext(path)[1].lower()
    return {".gml": "gml", ".json": "points-json", ".csv": "points-csv"}.get(
        ext, "points-json"
    )


def _read_trace(path: str, fmt: str):
    with open(path, "rb") as fh:
        data = fh.read()
    if fmt == "gml":
        return iof.parse_gml(data)
    return iof.parse_points(data, fmt.removeprefix("points-"), normalize=True)


def _print_config(args: argparse.Namespace) -> None:
    doc = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    print(f"config: {json.dumps(doc, default=str)}", file=sys.stderr)


def _load_plans_from_manifest(path: str):
    with open(path, "rb") as fh:
        manifest = iof.load_manifest(fh.read())
    base = os.path.dirname(path)
    cfg = ReconstructionConfig()
    plans, labels = [], []
    for entry in manifest.entries:
        trace = iof.load_trace(entry, base)
        plan, _ = reconstruct_plan(trace, cfg)
        plans.append(plan)
        labels.append(entry.style_label)
    return plans, labels


def _write_primers(out_path: str, plans, labels) -> None:
    primers = {}
    for plan, label in zip(plans, labels):
        if label and label not in primers:
            primers[label] = json.loads(iof.plan_to_json(plan))
    if primers:
        primer_path = os.path.splitext(out_path)[0] + ".primers.json"
        with open(primer_path, "w") as fh:
            json.dump(primers, fh, indent=2)
        print(f"wrote {len(primers)} primer styles to {primer_path}", file=sys.stderr)


def _load_primer(ckpt_path: str, style):
    if style is None:
        return None
    primer_path = os.path.splitext(ckpt_path)[0] + ".primers.json"
    if not os.path.exists(primer_path):
        raise iof.TraceParseError(f"no primer file {primer_path} for style {style!r}")
    with open(primer_path, "rb") as fh:
        doc = json.loads(fh.read())
    if style not in doc:
        raise iof.TraceParseError(f"style {style!r} not in {primer_path}")
    return pipelines.PrimerExample(
        iof.plan_from_json(json.dumps(doc[style]).encode()), style
    )


def _write_outputs(args, plan, traj) -> None:
    if getattr(args, "plan", None):
        with open(args.plan, "wb") as fh:
            fh.write(iof.plan_to_json(plan))
    if getattr(args, "svg", None):
        with open(args.svg, "wb") as fh:
            fh.write(iof.export_svg(traj, plan))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_reconstruct(args) -> int:
    trace = _read_trace(args.input, args.format or _infer_format(args.input))
    plan, report = reconstruct_plan(trace, ReconstructionConfig())
    traj = slm.integrate_trajectory(plan)
    _write_outputs(args, plan, traj)
    print(
        f"reconstructed {len(plan.targets)} targets "
        f"({report.iterations} adjustment iterations, mse {report.mse:.3g})"
    )
    return EXIT_OK


def cmd_augment(args) -> int:
    with open(args.plan_file, "rb") as fh:
        plan = iof.plan_from_json(fh.read())
    cfg = AugmentConfig(
        n_p=args.np, pos_sigma=args.pos_sigma, dt_sigma=args.dt_sigma,
        theta_sigma=args.theta_sigma, seed=args.seed,
    )
    plans = augment_dataset([plan], cfg)
    doc = [json.loads(iof.plan_to_json(p)) for p in plans]
    payload = json.dumps(doc, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(payload)
    else:
        print(payload)
    print(f"wrote {len(plans)} plans", file=sys.stderr)
    return EXIT_OK


def _train_common(args, trainer, default_net):
    plans, labels = _load_plans_from_manifest(args.manifest)
    n_styles = len({l for l in labels if l}) or 1
    net = default_net(
        n_styles,
        layers=args.layers,
        hidden_dim=args.hidden,
        num_gaussians=args.gaussians,
        **({"seq_len": args.seq_len} if args.seq_len else {}),
    )
    aug = AugmentConfig(n_p=args.np, seed=args.seed)
    ckpt = trainer(plans, aug, net, seed=args.seed, epochs=args.epochs)
    iof.save_checkpoint(ckpt, args.out)
    _write_primers(args.out, plans, labels)
    print(
        f"trained {ckpt.model_kind} model: final loss "
        f"{ckpt.training_meta['final_loss']:.4f}, saved to {args.out}"
    )
    return EXIT_OK


def cmd_train_dpp(args) -> int:
    return _train_common(args, pipelines.train_dpp, pipelines.default_dpp_network)


def cmd_train_vtp(args) -> int:
    return _train_common(args, pipelines.train_vtp, pipelines.default_vtp_network)


def cmd_sample(args) -> int:
    ckpt = iof.load_checkpoint(args.ckpt)
    with open(args.targets, "rb") as fh:
        source = iof.plan_from_json(fh.read())
    primer = _load_primer(args.ckpt, args.primer)
    dynamics = pipelines.predict_dynamics(ckpt, source.targets, primer, args.seed)
    plan = slm.ActionPlan(
        source.targets, tuple(dynamics), tuple(slm.StrokeShape() for _ in dynamics)
    )
    traj = slm.integrate_trajectory(plan)
    _write_outputs(args, plan, traj)
    print(f"sampled dynamics for {len(plan.targets)} targets (seed {args.seed})")
    return EXIT_OK


def cmd_stylize(args) -> int:
    ckpt = iof.load_checkpoint(args.ckpt)
    if ckpt.model_kind != "DPP":
        raise iof.CheckpointError(
            f"stylize needs a DPP checkpoint, got {ckpt.model_kind}"
        )
    trace = _read_trace(args.trace, args.format or _infer_format(args.trace))
    primer = _load_primer(args.ckpt, args.primer)
    result = pipelines.stylize(ckpt, trace, primer=primer, seed=args.seed)
    _write_outputs(args, result.plan, result.trajectory)
    print(
        f"stylized trace: {len(result.plan.targets)} targets (seed {args.seed})"
    )
    return EXIT_OK


def cmd_generate(args) -> int:
    vtp = iof.load_checkpoint(args.vtp_ckpt)
    dpp = iof.load_checkpoint(args.dpp_ckpt)
    vtp_primer = _load_primer(args.vtp_ckpt, args.vtp_primer)
    dpp_primer = _load_primer(args.dpp_ckpt, args.dpp_primer)
    traj, plan = pipelines.generate_tag(
        vtp, dpp, vtp_primer, dpp_primer, args.seed, args.max_targets
    )
    _write_outputs(args, plan, traj)
    print(f"generated {len(plan.targets)} targets (seed {args.seed})")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(args.models), host=args.host, port=args.port)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> CliParser:
    parser = CliParser(prog="scrawl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reconstruct", help="trace file -> action plan")
    p.add_argument("input")
    p.add_argument("--format", choices=["gml", "points-json", "points-csv"])
    p.add_argument("--svg")
    p.add_argument("--plan")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("augment", help="expand one plan into perturbed variants")
    p.add_argument("plan_file")
    p.add_argument("--np", type=int, default=10)
    p.add_argument("--pos-sigma", type=float, default=0.02)
    p.add_argument("--dt-sigma", type=float, default=0.05)
    p.add_argument("--theta-sigma", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_augment)

    for name, func in (("train-dpp", cmd_train_dpp), ("train-vtp", cmd_train_vtp)):
        p = sub.add_parser(name, help=f"{name.replace('-', ' ')} from a manifest")
        p.add_argument("manifest")
        p.add_argument("--out", required=True)
        p.add_argument("--np", type=int, default=200)
        p.add_argument("--seq-len", type=int, default=None)
        p.add_argument("--layers", type=int, default=2)
        p.add_argument("--hidden", type=int, default=64)
        p.add_argument("--gaussians", type=int, default=5)
        p.add_argument("--epochs", type=int, default=20)
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=func)

    p = sub.add_parser("sample", help="predict dynamics for given targets")
    p.add_argument("ckpt")
    p.add_argument("--targets", required=True)
    p.add_argument("--primer")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--svg")
    p.add_argument("--plan")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("stylize", help="re-dress a trace in a model's style")
    p.add_argument("ckpt")
    p.add_argument("trace")
    p.add_argument("--format", choices=["gml", "points-json", "points-csv"])
    p.add_argument("--primer")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--svg")
    p.add_argument("--plan")
    p.set_defaults(func=cmd_stylize)

    p = sub.add_parser("generate", help="fully generative trace (VTP + DPP)")
    p.add_argument("vtp_ckpt")
    p.add_argument("dpp_ckpt")
    p.add_argument("--vtp-primer")
    p.add_argument("--dpp-primer")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-targets", type=int, default=64)
    p.add_argument("--svg")
    p.add_argument("--plan")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("serve", help="launch the HTTP/WebSocket service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--models", default=".")
    p.set_defaults(func=cmd_serve)

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    _print_config(args)
    try:
        return args.func(args)
    except (iof.TraceParseError, iof.CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except RuntimeError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


def main() -> None:
    sys.exit(run())
