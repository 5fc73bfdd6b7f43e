"""Command-line entry point: ``selfprove <command> [flags]``.

Exit codes: 0 success, 1 a gradient check failed, 2 bad usage, 3 file I/O.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("selfprove")


class UsageError(ValueError):
    pass


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _num(text: str) -> int:
    """Integer flag that also accepts ``1e6``-style literals."""
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}")
    if v != int(v):
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    return int(v)


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise UsageError(msg)


def _outdir(path: str) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create output directory {p}: {e}") from e
    return p


def write_manifest(out: Path, command: str, args: argparse.Namespace, seeds, inputs, outputs,
                   started: float) -> None:
    from . import __version__
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}
    manifest = {"command": command, "config": config, "seeds": list(seeds),
                "inputs": [str(p) for p in inputs], "outputs": [str(p) for p in outputs],
                "version": __version__, "wall_clock_seconds": round(time.time() - started, 3)}
    try:
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise OSError(f"cannot write manifest in {out}: {e}") from e


# ------------------------------------------------------------------- commands

def cmd_gen_data(args) -> int:
    from .data import generate_dataset, write_vocab
    _require(args.base >= 2, "base must be ≥ 2")
    _require(args.max >= 1, "max must be ≥ 1")
    _require(args.n >= 1, "n must be ≥ 1")
    _require(args.cutoff >= 0, "cutoff must be ≥ 0")
    started = time.time()
    out = _outdir(args.out)
    ds = generate_dataset(args.max, args.base, args.cutoff, args.n, args.seed)
    ds.save(out / "data.txt")
    write_vocab(ds.vocab, out / "vocab.tsv")
    meta = {"records": len(ds), "distinct_pairs": len(ds.pairs()), "length": ds.length,
            "vocab_size": len(ds.vocab)}
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    write_manifest(out, "gen-data", args, [args.seed], [],
                   [out / "data.txt", out / "vocab.tsv", out / "meta.json"], started)
    print(f"wrote {len(ds)} records ({meta['distinct_pairs']} distinct pairs) to {out}")
    return EXIT_OK


def _training_pairs(extra: dict) -> set:
    """Rebuild the training pairs a checkpoint was fitted on, from the data settings it records."""
    from .data import generate_dataset
    if "data_n" not in extra:
        return set()
    return generate_dataset(extra["max"], extra["base"], extra["cutoff"], extra["data_n"],
                            extra["data_seed"]).pairs()


def _build_model(args, vocab_size: int, window: int):
    from .model import TabularModel, TransformerModel
    if args.backend == "tabular":
        return TabularModel(vocab_size, args.order, window)
    return TransformerModel(vocab_size, window, width=args.width, layers=args.layers,
                            heads=args.heads, mlp_ratio=args.mlp_ratio, dtype=args.dtype)


def cmd_train(args) -> int:
    import numpy as np
    from .data import Dataset, heldout_inputs, max_sequence_length
    from .encoding import Vocabulary
    from .evaluation import evaluate, rlvf_sampler
    from .model import load_checkpoint, save_checkpoint
    from .proof_system import BezoutVerifier
    from .training import TrainConfig, train

    _require(args.iters >= 1 and args.batch >= 1, "iters and batch must be ≥ 1")
    _require(args.lr > 0, "lr must be positive")
    started = time.time()
    tl = args.mode in ("tl", "tl-faithful")
    inputs = []
    dataset = None
    if args.data:
        dataset = Dataset.load(Path(args.data) / "data.txt")
        inputs.append(Path(args.data) / "data.txt")
        base, cutoff, max_value, data_seed = dataset.base, dataset.cutoff, dataset.max_value, dataset.seed
        data_n = len(dataset.tokens)
    else:
        _require(not tl, "TL needs --data (a directory written by gen-data)")
        base, cutoff, max_value, data_seed = args.base, args.cutoff, args.max, args.seed
        data_n = None
    theta0 = None
    train_pairs = dataset.pairs() if dataset is not None else set()
    if args.init:
        model, theta0, header = load_checkpoint(args.init)
        inputs.append(Path(args.init))
        extra = header.get("extra", {})
        if not args.data and extra:
            base, cutoff, max_value = extra["base"], extra["cutoff"], extra["max"]
            data_seed = extra.get("data_seed", data_seed)
            data_n = extra.get("data_n")
            train_pairs = _training_pairs(extra)
    elif args.mode == "rlvf":
        log.warning("RLVF from a fresh initialization: acceptances will be rare "
                    "until the model can already prove some inputs")
    vocab = Vocabulary(base, cutoff)
    if theta0 is None:
        window = dataset.length if dataset is not None else max_sequence_length(max_value, vocab)
        model = _build_model(args, len(vocab), window)
    _require(model.vocab_size == len(vocab), "checkpoint vocabulary does not match the data")
    verifier = BezoutVerifier(vocab, max_value)
    held = heldout_inputs(max_value, args.heldout, data_seed, train_pairs)
    probe = held[:args.eval_size]

    def evaluator(theta):
        r = evaluate(theta, model, verifier, probe)
        return r.correctness, r.verifiability

    cfg = TrainConfig(mode=args.mode, lr=args.lr, iters=args.iters, batch=args.batch, seed=args.seed,
                      iterate=args.iterate, optimizer=args.optimizer, warmup=args.warmup,
                      weight_decay=args.weight_decay, temperature=args.temperature, eval_every=args.eval_every,
                      eval_size=args.eval_size)
    out = _outdir(args.out)
    sampler = None
    if not tl:
        sampler = rlvf_sampler(max_value, vocab, {(h.x0, h.x1) for h in held})
    res = train(cfg, model, verifier, dataset=dataset, sampler=sampler, theta0=theta0,
                evaluator=evaluator, metrics_path=out / "metrics.csv")
    if not np.all(np.isfinite(res.theta)):
        raise FloatingPointError("training produced non-finite parameters")
    meta = {"base": base, "cutoff": cutoff, "max": max_value, "data_seed": data_seed, "mode": args.mode}
    if data_n is not None:
        meta["data_n"] = data_n
    save_checkpoint(out / "model.ckpt", model, res.theta, args.seed, meta)
    write_manifest(out, "train", args, [args.seed, data_seed], inputs,
                   [out / "model.ckpt", out / "metrics.csv"], started)
    last = res.metrics[-1]
    print(f"trained {args.iters} iterations in {res.seconds:.1f}s; "
          f"probe correctness {last.correctness:.4f} verifiability {last.verifiability:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .data import Dataset, heldout_inputs
    from .encoding import Vocabulary
    from .evaluation import EVAL_COLUMNS, evaluate, write_csv
    from .model import load_checkpoint
    from .proof_system import BezoutVerifier
    started = time.time()
    model, theta, header = load_checkpoint(args.ckpt)
    inputs = [Path(args.ckpt)]
    extra = header.get("extra", {})
    _require(bool(extra) or args.data, "checkpoint carries no task metadata; pass --data")
    exclude = set()
    if args.data:
        ds = Dataset.load(Path(args.data) / "data.txt")
        inputs.append(Path(args.data) / "data.txt")
        exclude = ds.pairs()
        base, cutoff, max_value, data_seed = ds.base, ds.cutoff, ds.max_value, ds.seed
    else:
        base, cutoff, max_value = extra["base"], extra["cutoff"], extra["max"]
        data_seed = extra.get("data_seed", 0)
        exclude = _training_pairs(extra)
    if args.max is not None:
        max_value = args.max
    vocab = Vocabulary(base, cutoff)
    verifier = BezoutVerifier(vocab, max_value)
    held = heldout_inputs(max_value, args.n, data_seed if args.seed is None else args.seed, exclude)
    report = evaluate(theta, model, verifier, held, seed=data_seed if args.seed is None else args.seed)
    out = _outdir(args.out)
    write_csv(out / "eval.csv", EVAL_COLUMNS, [report.row()])
    write_csv(out / "eval_by_depth.csv", ("depth", "n", "verified"),
              [{"depth": d, "n": n, "verified": v} for d, (n, v) in report.by_depth.items()])
    write_manifest(out, "eval", args, [data_seed], inputs,
                   [out / "eval.csv", out / "eval_by_depth.csv"], started)
    print(f"n={report.n} correctness={report.correctness:.4f} verifiability={report.verifiability:.4f} "
          f"decode_failures={report.decode_failures}")
    return EXIT_OK


def _experiment_config(args):
    from .evaluation import ExperimentConfig
    return ExperimentConfig(max_value=args.max, base=args.base, n=args.n, iters=args.iters,
                            batch=args.batch, lr=args.lr, warmup=args.warmup,
                            weight_decay=args.weight_decay, width=args.width, layers=args.layers,
                            heads=args.heads, mlp_ratio=args.mlp_ratio, dtype=args.dtype,
                            heldout=args.heldout, eval_size=args.eval_size)


def cmd_ablate(args) -> int:
    from .evaluation import (ANNOTATION_COLUMNS, BASE_COLUMNS, ablation_annotation, ablation_base,
                             write_csv)
    _require(bool(args.seeds), "need at least one seed")
    started = time.time()
    cfg = _experiment_config(args)
    out = _outdir(args.out)
    if args.kind == "annotation":
        rows = ablation_annotation(args.cutoffs, cfg, args.seeds, args.depth_samples)
        path = out / "ablation_annotation.csv"
        write_csv(path, ANNOTATION_COLUMNS, rows)
    else:
        _require(all(b >= 2 for b in args.bases), "base must be ≥ 2")
        rows = ablation_base(args.bases, cfg, args.seeds, args.cutoff)
        path = out / "ablation_base.csv"
        write_csv(path, BASE_COLUMNS, rows)
    write_manifest(out, "ablate", args, args.seeds, [], [path], started)
    for r in rows:
        print(", ".join(f"{k}={v}" for k, v in r.items()))
    return EXIT_OK


def cmd_depth(args) -> int:
    from .data import depth_histogram, estimate_depth_ceiling
    from .evaluation import DEPTH_COLUMNS, depth_rows, write_csv
    _require(args.max >= 1 and args.samples >= 1, "max and samples must be ≥ 1")
    started = time.time()
    out = _outdir(args.out)
    write_csv(out / "depth_hist.csv", DEPTH_COLUMNS,
              depth_rows(depth_histogram(args.max, args.samples, args.seed)))
    ceilings = [{"cutoff": T, "ceiling": f"{estimate_depth_ceiling(args.max, T, args.samples, args.seed):.6f}"}
                for T in args.cutoffs]
    write_csv(out / "depth_ceiling.csv", ("cutoff", "ceiling"), ceilings)
    write_manifest(out, "depth", args, [args.seed], [],
                   [out / "depth_hist.csv", out / "depth_ceiling.csv"], started)
    for c in ceilings:
        print(f"P[depth <= {c['cutoff']}] = {c['ceiling']}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .evaluation import write_csv
    from .lemmas import check_lemmas
    started = time.time()
    report = check_lemmas(args.backend, args.points, args.seed)
    ok = report.passed(args.tol)
    print(f"{args.backend}: max TL error {report.max_tl_error:.3e}, max RLVF error "
          f"{report.max_rlvf_error:.3e}, A <= ver {'holds' if report.ordering_holds else 'FAILS'}, "
          f"tol {args.tol:g}: {'PASS' if ok else 'FAIL'}")
    if args.out:
        out = _outdir(args.out)
        write_csv(out / "gradcheck.csv", ("point", "agreement", "verifiability", "tl_error", "rlvf_error"),
                  [{"point": p.index, "agreement": f"{p.agreement:.12g}",
                    "verifiability": f"{p.verifiability:.12g}", "tl_error": f"{p.tl_error:.3e}",
                    "rlvf_error": f"{p.rlvf_error:.3e}"} for p in report.points])
        write_manifest(out, "gradcheck", args, [args.seed], [], [out / "gradcheck.csv"], started)
    return EXIT_OK if ok else EXIT_CHECK


# --------------------------------------------------------------------- parser

def _model_flags(p):
    g = p.add_argument_group("model")
    g.add_argument("--backend", choices=("neural", "tabular"), default="neural")
    g.add_argument("--width", type=int, default=64)
    g.add_argument("--layers", type=int, default=2)
    g.add_argument("--heads", type=int, default=4)
    g.add_argument("--mlp-ratio", type=int, default=4)
    g.add_argument("--dtype", choices=("float32", "float64"), default="float32",
                   help="arithmetic of the neural backend's passes; parameters stay float64")
    g.add_argument("--order", type=int, default=2, help="context order of the tabular backend")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="selfprove", description=__doc__.splitlines()[0])
    ap.add_argument("--threads", type=int, default=None,
                    help="cap numeric worker threads (fallback: $SELFPROVE_THREADS)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a dataset of honest annotated transcripts")
    p.add_argument("--base", type=int, default=210)
    p.add_argument("--max", type=_num, default=10_000)
    p.add_argument("--n", type=_num, default=1_000_000)
    p.add_argument("--cutoff", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="Transcript Learning or RLVF")
    p.add_argument("--mode", choices=("tl", "tl-faithful", "rlvf"), default="tl")
    p.add_argument("--data", help="dataset directory from gen-data (required for TL)")
    p.add_argument("--sampler", choices=("loguniform",), default="loguniform",
                   help="RLVF input distribution")
    p.add_argument("--init", help="checkpoint to start from (RLVF base model)")
    p.add_argument("--iters", type=_num, default=10_000)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--warmup", type=int, default=200)
    p.add_argument("--weight-decay", type=float, default=0.1)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--iterate", choices=("last", "average"), default="last")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--base", type=int, default=10, help="RLVF without --data or --init")
    p.add_argument("--max", type=_num, default=100, help="RLVF without --data or --init")
    p.add_argument("--cutoff", type=int, default=0, help="RLVF without --data or --init")
    p.add_argument("--heldout", type=int, default=1000)
    p.add_argument("--eval-size", type=int, default=200, help="held-out inputs per metrics row")
    p.add_argument("--eval-every", type=int, default=None)
    p.add_argument("--out", required=True)
    _model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="correctness and Verifiability on held-out inputs")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", help="training dataset directory; its pairs are excluded")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--max", type=_num, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="annotation-cutoff or base ablation")
    p.add_argument("--kind", choices=("annotation", "base"), default="annotation")
    p.add_argument("--cutoffs", type=_ints, default=[0, 1, 3])
    p.add_argument("--bases", type=_ints, default=[2, 6, 30, 210])
    p.add_argument("--cutoff", type=int, default=0, help="annotation cutoff for the base ablation")
    p.add_argument("--seeds", type=_ints, default=[0, 1, 2])
    p.add_argument("--max", type=_num, default=100)
    p.add_argument("--base", type=int, default=10)
    p.add_argument("--n", type=_num, default=5000)
    p.add_argument("--iters", type=_num, default=10_000)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--warmup", type=int, default=200)
    p.add_argument("--weight-decay", type=float, default=0.1)
    p.add_argument("--heldout", type=int, default=1000)
    p.add_argument("--eval-size", type=int, default=200)
    p.add_argument("--depth-samples", type=_num, default=100_000)
    p.add_argument("--out", required=True)
    _model_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("depth", help="Euclidean depth histogram and ceilings")
    p.add_argument("--max", type=_num, default=10_000)
    p.add_argument("--cutoffs", type=_ints, default=[1, 2, 3, 5, 8])
    p.add_argument("--samples", type=_num, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_depth)

    p = sub.add_parser("gradcheck", help="gradient-lemma checks on the enumerable micro-system")
    p.add_argument("--backend", choices=("tabular", "neural"), default="tabular")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--points", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_gradcheck)
    return ap


def _limit_threads(n: int | None) -> None:
    if n is None:
        env = os.environ.get("SELFPROVE_THREADS")
        n = int(env) if env else None
    if n is None:
        return
    if n < 1:
        raise UsageError("threads must be ≥ 1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:  # argparse exits 2 on bad flags and 0 on --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _limit_threads(args.threads)
        return args.func(args)
    except UsageError as e:
        print(f"selfprove {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"selfprove {args.command}: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"selfprove {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
