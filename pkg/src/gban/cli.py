"""``gban`` command-line entry point.

Subcommands::

    gban synth          --out DIR [--n N] [--seed S] [--text-only | --speech-only] [--snr-db X] [--groups G]
    gban train          --config PATH [--seed S] [--kfold K] [--fusion MODE] [--out DIR]
    gban eval           --config PATH --checkpoint FILE [--fusion MODE] [--out DIR]
    gban compare-reps   --config PATH [--seed S] [--kfold K] [--out DIR]
    gban compare-fusion --config PATH [--seed S] [--kfold K] [--out DIR]
    gban inspect        --config PATH --checkpoint FILE --what {gates,alignment} [--out DIR]
    gban gradcheck      [--only NAME ...] [--seed S]

Every report is CSV or ``key: value`` text and is also written under the
output directory.  Inputs are validated before the output directory is
created, so a failed pre-flight leaves nothing behind.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path


from . import experiments as ex
from .config import format_config, load_config
from .data import make_batch
from .errors import GbanError
from .fusion import gate_summary
from .gradcheck import COMPONENTS, format_report, run_checks
from .metrics import confusion_matrix, metrics_from_confusion, predict
from .model import FUSION_MODES
from .synth import SynthConfig, generate
from .training import EVAL_BATCH, run_inference

logger = logging.getLogger("gban")


def _run_config(args):
    cfg = load_config(args.config)
    changes = {}
    for key in ("seed", "kfold", "fusion"):
        value = getattr(args, key, None)
        if value is not None:
            changes[key] = value
    if getattr(args, "out", None) is not None:
        changes["out_dir"] = Path(args.out)
    cfg = cfg.replace(**changes)
    cfg.validate()
    return cfg


def _emit(out_dir: Path, name: str, text: str) -> None:
    (out_dir / name).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def cmd_synth(args) -> int:
    if args.n < 1:
        raise GbanError("--n must be >= 1")
    cfg = SynthConfig(n_per_class=args.n, seed=args.seed, speech_informative=not args.text_only,
                      text_informative=not args.speech_only, snr_db=args.snr_db, groups=args.groups)
    manifest = generate(args.out, cfg)
    print(f"wrote {4 * args.n} utterances to {manifest}")
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args)
    ws = ex.open_workspace(cfg)
    samples = ex.load_all(ws)
    results = ex.run_protocol(ws, samples)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "run.cfg").write_text(format_config(cfg), encoding="utf-8")
    for r in results:
        stem = f"fold{r.fold}" if cfg.kfold else "model"
        ex.save_model(out / f"{stem}.ckpt", r.model, r.result.norm)
        (out / f"{stem}_epochs.csv").write_text(r.result.log_csv(), encoding="utf-8")
    _emit(out, "metrics.csv", ex.metrics_report(results))
    return 0


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    ws = ex.open_workspace(cfg)
    model, norm = ex.load_model(args.checkpoint, ws, args.fusion)
    samples = ex.load_all(ws)
    pred = run_inference(model, samples, norm)
    metrics = metrics_from_confusion(confusion_matrix(pred.labels, predict(pred.probs), model.config.n_classes))
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    lines = ["n,wa,ua", f"{len(samples)},{metrics.wa:.6f},{metrics.ua:.6f}"]
    _emit(out, "eval.csv", "\n".join(lines) + "\n")
    return 0


def cmd_compare_reps(args) -> int:
    cfg = _run_config(args)
    ws = ex.open_workspace(cfg)
    table = ex.compare_representations(ws, ex.load_all(ws))
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    _emit(cfg.out_dir, "compare_reps.csv", table)
    return 0


def cmd_compare_fusion(args) -> int:
    cfg = _run_config(args)
    ws = ex.open_workspace(cfg)
    table = ex.compare_fusion(ws, ex.load_all(ws))
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    _emit(cfg.out_dir, "compare_fusion.csv", table)
    return 0


def cmd_inspect(args) -> int:
    cfg = _run_config(args)
    ws = ex.open_workspace(cfg)
    model, norm = ex.load_model(args.checkpoint, ws, args.fusion)
    if args.what == "gates" and model.ggf is None:
        raise GbanError(f"{args.checkpoint}: gate inspection needs a ggf checkpoint")
    samples = ex.load_all(ws)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    if args.what == "gates":
        pred = run_inference(model, samples, norm)
        _emit(out, "gates.txt", gate_summary([(pred.z_p, pred.z_q)]).to_text())
        return 0
    target = out / "alignment"
    target.mkdir(exist_ok=True)
    for start in range(0, len(samples), EVAL_BATCH):
        chunk = samples[start:start + EVAL_BATCH]
        result = model.forward(make_batch(chunk, norm), training=False)
        alpha, beta = result.aligned.alpha.data, result.aligned.beta.data
        for b, s in enumerate(chunk):
            k, l = int(result.speech.lengths[b]), int(result.text.lengths[b])
            (target / f"{s.id}_alpha.csv").write_text(ex.alignment_csv(alpha[b, :l, :k]), encoding="utf-8")
            (target / f"{s.id}_beta.csv").write_text(ex.alignment_csv(beta[b, :k, :l]), encoding="utf-8")
    print(f"wrote alignment matrices for {len(samples)} utterances to {target}")
    return 0


def cmd_gradcheck(args) -> int:
    results = run_checks(args.only, seed=args.seed)
    sys.stdout.write(format_report(results))
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gban", description="Gated bidirectional alignment network")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_command(name, fn, help_text, checkpoint=False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--seed", type=int)
        p.add_argument("--kfold", type=int)
        p.add_argument("--fusion", choices=FUSION_MODES)
        p.add_argument("--out", type=Path, help="output directory (overrides out_dir)")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, type=Path)
        p.set_defaults(fn=fn)
        return p

    run_command("train", cmd_train, "train one model per fold and write checkpoints")
    run_command("eval", cmd_eval, "score a checkpoint on the manifest", checkpoint=True)
    run_command("compare-reps", cmd_compare_reps, "WA of each representation fed alone to the classifier")
    run_command("compare-fusion", cmd_compare_fusion, "WA of the concatenation baselines and GGF")
    inspect = run_command("inspect", cmd_inspect, "gate weights or alignment matrices", checkpoint=True)
    inspect.add_argument("--what", choices=("gates", "alignment"), required=True)

    p = sub.add_parser("gradcheck", help="finite-difference checks of every differentiable component")
    p.add_argument("--only", nargs="+", choices=list(COMPONENTS), metavar="NAME")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--n", type=int, default=50, help="utterances per class")
    p.add_argument("--seed", type=int, default=7)
    only = p.add_mutually_exclusive_group()
    only.add_argument("--text-only", action="store_true", help="class-independent audio")
    only.add_argument("--speech-only", action="store_true", help="class-independent transcripts")
    p.add_argument("--snr-db", type=float, default=10.0)
    p.add_argument("--groups", type=int, default=5)
    p.set_defaults(fn=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except GbanError as exc:
        print(f"gban {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"gban {args.command}: i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
