"""Command-line interface: ``jecl synth | pretrain | cluster | eval | sweep``.

Every file written carries the resolved configuration (including the seed) either as a
leading ``# {json}`` comment line or, for JSON reports and checkpoints, as a ``config`` field.
Nothing time- or host-dependent is written unless ``--record-timing`` is given, so repeated
runs with the same flags produce byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path


from . import __version__
from .data import generate_synthetic, load_dataset, load_ints, save_dataset, save_features, save_ints
from .errors import ConfigurationError, DataError, JeclError
from .experiment import AXES, METHODS, ExperimentSpec, format_table, run_experiment
from .metrics import cluster_report
from .objective import LossConfig
from .pretrain import load_encoder, save_encoder
from .trainer import JeclConfig, TrainConfig, cluster, initialize, input_scales, pretrain_encoders, run_single_view

log = logging.getLogger("jecl")

IMAGE_CKPT = "image_encoder.ckpt"
TEXT_CKPT = "text_encoder.ckpt"


def _int_list(s: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(t) for t in s.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None
    if any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError(f"all entries must be >= 1, got {s!r}")
    return vals


def _float_list(s: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(t) for t in s.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("need at least one value")
    return vals


def _noise(s: str) -> float | tuple[float, float]:
    vals = _float_list(s)
    if len(vals) == 1:
        return vals[0]
    if len(vals) == 2:
        return vals
    raise argparse.ArgumentTypeError(f"noise is one value or 'image,text', got {s!r}")


# ---------------------------------------------------------------------------
# shared option groups


def _data_options() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("dataset files")
    g.add_argument("--images", type=Path, help="image-view feature file")
    g.add_argument("--texts", type=Path, help="text-view feature file")
    g.add_argument("--labels", type=Path, help="ground-truth label file (optional)")
    g.add_argument("--mask", type=Path, help="text-present 0/1 mask file (optional)")
    return p


def _synth_options() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("synthetic recipe")
    g.add_argument("--per-cluster", type=int, default=200, help="samples per cluster (largest cluster if imbalanced)")
    g.add_argument("--dims", type=_int_list, default=(50, 50), help="feature dimensions 'image,text' (default 50,50)")
    g.add_argument("--separation", type=float, default=50.0, help="distance between cluster centers")
    g.add_argument("--noise", type=_noise, default=1.0, help="Gaussian noise std, one value or 'image,text'")
    g.add_argument("--missing-rate", type=float, default=0.0, help="fraction of samples without text")
    g.add_argument("--merge-image-pairs", type=int, default=0, help="class pairs sharing an image center")
    g.add_argument("--imbalance", type=float, default=1.0, help="largest / smallest cluster size ratio")
    return p


def _model_options() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("model")
    g.add_argument("--k", type=int, help="number of clusters (default: number of label classes)")
    g.add_argument("--lambda", dest="lam", type=float, default=0.5, help="image weight in the joint target")
    g.add_argument("--beta", type=float, default=0.1, help="balance regularizer weight")
    g.add_argument("--gamma", type=float, default=0.1, help="cross-view alignment weight")
    g.add_argument("--max-epochs", type=int, default=100)
    g.add_argument("--tolerance", type=float, default=0.001, help="stop when fewer labels than this change")
    g.add_argument("--batch-size", type=int, default=256, help="clustering-phase minibatch size")
    g.add_argument("--update-interval", type=int, help="batches between target refreshes (default: one epoch)")
    g.add_argument("--learning-rate", type=float, default=0.01, help="clustering-phase SGD step size")
    g.add_argument("--kmeans-restarts", type=int, default=20)
    p2 = p.add_argument_group("pretraining")
    p2.add_argument("--embedding-dim", type=int, default=10)
    p2.add_argument("--hidden-dims", type=_int_list, default=(500, 500, 2000), help="encoder hidden widths")
    p2.add_argument("--layerwise-epochs", type=int, default=50)
    p2.add_argument("--finetune-epochs", type=int, default=100)
    p2.add_argument("--corruption-rate", type=float, default=0.2)
    p2.add_argument("--pretrain-batch-size", type=int, default=256)
    p2.add_argument("--pretrain-learning-rate", type=float, default=0.01)
    return p


def _common_options() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output-dir", type=Path, default=Path("."), help="where results are written")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jecl", description="Two-view deep embedded clustering.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    common, data, synth, model = _common_options(), _data_options(), _synth_options(), _model_options()

    p = sub.add_parser("synth", parents=[common, synth], help="write a synthetic paired dataset")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--binary", action="store_true", help="write binary feature files")

    sub.add_parser("pretrain", parents=[common, data, model], help="pretrain view encoders, write checkpoints")

    p = sub.add_parser("cluster", parents=[common, data, model], help="cluster a dataset")
    p.add_argument("--encoder-dir", type=Path, help=f"directory holding {IMAGE_CKPT} / {TEXT_CKPT}")
    p.add_argument("--method", choices=METHODS, default="jecl", help="two-view JECL or a one-view DEC baseline")
    p.add_argument("--progress", action="store_true", help="also write progress.jsonl, one record per refresh")

    p = sub.add_parser("eval", help="score predicted labels against ground truth")
    p.add_argument("--pred", type=Path, required=True, help="predicted label file")
    p.add_argument("--labels", type=Path, required=True, help="ground-truth label file")
    p.add_argument("--k", type=int, help="cluster count used for the empty-cluster tally")
    p.add_argument("--json", action="store_true", help="print a JSON object instead of text")

    p = sub.add_parser("sweep", parents=[common, data, synth, model], help="repeat runs over a parameter sweep")
    p.add_argument("--axis", choices=AXES, default="none")
    p.add_argument("--values", type=_float_list, default=(0.0,), help="comma-separated sweep values")
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--method", choices=METHODS, default="jecl")
    p.add_argument("--jobs", type=int, default=1, help="trials run in parallel")
    p.add_argument("--record-timing", action="store_true", help="store wall-clock seconds per trial")
    return parser


# ---------------------------------------------------------------------------
# helpers


def _config(args, k: int) -> JeclConfig:
    train = TrainConfig(
        k=k,
        loss=LossConfig(lam=args.lam, gamma=args.gamma, beta=args.beta),
        batch_size=args.batch_size,
        update_interval=args.update_interval,
        tolerance=args.tolerance,
        max_epochs=args.max_epochs,
        seed=args.seed,
        learning_rate=args.learning_rate,
    )
    if args.embedding_dim < 1 or args.kmeans_restarts < 1:
        raise ConfigurationError("--embedding-dim and --kmeans-restarts must be >= 1")
    return JeclConfig(
        train,
        embedding_dim=args.embedding_dim,
        hidden_dims=tuple(args.hidden_dims),
        corruption_rate=args.corruption_rate,
        layerwise_epochs=args.layerwise_epochs,
        finetune_epochs=args.finetune_epochs,
        pretrain_batch_size=args.pretrain_batch_size,
        pretrain_learning_rate=args.pretrain_learning_rate,
        kmeans_restarts=args.kmeans_restarts,
    )


def _load(args):
    if args.images is None or args.texts is None:
        raise ConfigurationError("--images and --texts are required")
    return load_dataset(args.images, args.texts, args.labels, args.mask)


def _resolve_k(args, ds) -> int:
    if args.k is not None:
        return args.k
    if ds.labels is None:
        raise ConfigurationError("--k is required when no --labels file is given")
    return ds.n_classes


def _inputs(args) -> dict:
    return {name: str(getattr(args, name)) for name in ("images", "texts", "labels", "mask") if getattr(args, name)}


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _synth_recipe(args, k: int) -> dict:
    if len(args.dims) != 2:
        raise ConfigurationError(f"--dims needs two entries 'image,text', got {args.dims}")
    noise = args.noise if isinstance(args.noise, float) else list(args.noise)
    return {
        "k": k,
        "per_cluster_n": args.per_cluster,
        "dims": list(args.dims),
        "separation": args.separation,
        "view_noise": noise,
        "missing_rate": args.missing_rate,
        "merge_image_pairs": args.merge_image_pairs,
        "imbalance": args.imbalance,
    }


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    recipe = _synth_recipe(args, args.k)
    ds = generate_synthetic(seed=args.seed, **{**recipe, "dims": tuple(recipe["dims"])})
    header = {"command": "synth", "seed": args.seed, **recipe}
    paths = save_dataset(args.output_dir, ds, header, binary=args.binary)
    log.info("wrote %d samples (%d without text) to %s", ds.n, int((~ds.text_present).sum()), args.output_dir)
    for name in sorted(paths):
        print(f"{name}: {paths[name]}")
    return 0


def cmd_pretrain(args) -> int:
    ds = _load(args)
    cfg = _config(args, args.k or 1)
    header = {"command": "pretrain", "config": cfg.to_dict(), "inputs": _inputs(args)}
    enc_img, enc_txt = pretrain_encoders(ds, cfg)
    s_img, s_txt = input_scales(ds, cfg)
    args.output_dir.mkdir(parents=True, exist_ok=True)
    save_encoder(args.output_dir / IMAGE_CKPT, enc_img, {**header, "view": "image", "input_scale": s_img})
    print(f"image encoder: {args.output_dir / IMAGE_CKPT}")
    if enc_txt is not None:
        save_encoder(args.output_dir / TEXT_CKPT, enc_txt, {**header, "view": "text", "input_scale": s_txt})
        print(f"text encoder: {args.output_dir / TEXT_CKPT}")
    return 0


def _load_checkpoints(directory: Path | None):
    if directory is None:
        return None, None
    if not directory.is_dir():
        raise DataError(f"{directory}: encoder directory does not exist")
    img_path, txt_path = directory / IMAGE_CKPT, directory / TEXT_CKPT
    enc_img = load_encoder(img_path)[0] if img_path.exists() else None
    enc_txt = load_encoder(txt_path)[0] if txt_path.exists() else None
    return enc_img, enc_txt


def cmd_cluster(args) -> int:
    ds = _load(args)
    k = _resolve_k(args, ds)
    cfg = _config(args, k)
    header = {"command": "cluster", "method": args.method, "config": cfg.to_dict(), "inputs": _inputs(args)}
    out = args.output_dir
    out.mkdir(parents=True, exist_ok=True)

    records: list[dict] = []
    progress = records.append if args.progress else None
    enc_img, enc_txt = _load_checkpoints(args.encoder_dir)
    if args.method == "jecl":
        if enc_img is None or (enc_txt is None and ds.text_present.any()):
            log.warning("no pretrained checkpoints found; pretraining the missing encoders first")
        init = initialize(ds, cfg, True, enc_img, enc_txt)
        res = cluster(ds, cfg, init, progress)
    else:
        encoder = enc_img if args.method == "image" else enc_txt
        if encoder is None:
            log.warning("no pretrained %s checkpoint found; pretraining it first", args.method)
        res = run_single_view(ds, args.method, cfg, progress, encoder=encoder)

    labels = res.result.labels
    save_ints(out / "assignments.txt", labels, header)
    save_features(out / "image_embedding.txt", res.image_embedding, header)
    if res.text_embedding is not None:
        save_features(out / "text_embedding.txt", res.text_embedding, header)
    state = res.result.state
    report = {
        "config": header,
        "metrics": res.report.to_dict(),
        "epochs": state.epoch,
        "converged": state.converged,
        "refreshes": len(state.loss_trace),
        "final_loss": state.loss_trace[-1].to_dict() if state.loss_trace else None,
        "alignment_drift": state.alignment_drift,
    }
    _write_json(out / "report.json", report)
    if args.progress:
        lines = ["# " + json.dumps(header, sort_keys=True)] + [json.dumps(r, sort_keys=True) for r in records]
        (out / "progress.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _print_metrics(res.report.to_dict())
    print(f"epochs {state.epoch}, converged {state.converged}; results in {out}")
    return 0


def _print_metrics(m: dict) -> None:
    if m.get("acc") is not None:
        print(f"ACC {m['acc']:.4f}  NMI {m['nmi']:.4f}  ARI {m['ari']:.4f}")
    print(f"empty clusters: {m['empty_clusters']}")


def cmd_eval(args) -> int:
    pred = load_ints(args.pred)
    truth = load_ints(args.labels)
    if pred.size != truth.size:
        raise DataError(f"{args.pred} has {pred.size} labels but {args.labels} has {truth.size}")
    if pred.size and pred.min() < 0:
        raise DataError(f"{args.pred}: cluster labels must be non-negative")
    k = args.k if args.k is not None else int(pred.max()) + 1 if pred.size else 1
    if pred.size and pred.max() >= k:
        raise ConfigurationError(f"--k {k} but {args.pred} contains label {pred.max()}")
    m = cluster_report(pred, k, truth).to_dict()
    if args.json:
        print(json.dumps({key: m[key] for key in ("acc", "nmi", "ari", "empty_clusters", "n_samples")}, sort_keys=True))
    else:
        _print_metrics(m)
    return 0


def cmd_sweep(args) -> int:
    files = _inputs(args) if args.images or args.texts else None
    if files is not None and not (args.images and args.texts):
        raise ConfigurationError("--images and --texts must be given together")
    if files is not None:
        k = _resolve_k(args, load_dataset(args.images, args.texts, args.labels, args.mask))
        recipe = None
    else:
        k = args.k if args.k is not None else 5
        recipe = _synth_recipe(args, k)
        recipe["dims"] = tuple(recipe["dims"])
        if isinstance(recipe["view_noise"], list):
            recipe["view_noise"] = tuple(recipe["view_noise"])
    if args.jobs < 1:
        raise ConfigurationError("--jobs must be >= 1")
    spec = ExperimentSpec(
        config=_config(args, k),
        synthetic=recipe,
        files=files,
        axis=args.axis,
        values=args.values,
        trials=args.trials,
        seed=args.seed,
        method=args.method,
        record_timing=args.record_timing,
    )
    report = run_experiment(spec, args.output_dir, jobs=args.jobs)
    sys.stdout.write(format_table(report))
    return 0


COMMANDS = {"synth": cmd_synth, "pretrain": cmd_pretrain, "cluster": cmd_cluster, "eval": cmd_eval, "sweep": cmd_sweep}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(getattr(args, "verbose", 0), 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, DataError) as exc:
        parser.exit(2, f"{parser.prog} {args.command}: error: {exc}\n")
    except JeclError as exc:
        parser.exit(1, f"{parser.prog} {args.command}: error: {exc}\n")
    except OSError as exc:
        parser.exit(1, f"{parser.prog} {args.command}: error: {exc}\n")


if __name__ == "__main__":
    sys.exit(main())
