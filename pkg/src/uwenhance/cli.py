"""Command-line entry point: ``uwenhance <subcommand> ...``.

Every subcommand writes its artifacts plus ``run_manifest.json`` (resolved
options, seeds, input and output digests) into ``--out``. Training
subcommands also write ``resolved.cfg``; passing it back as ``--config``
reproduces the run. Failures print one JSON line to stderr and exit 1.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import (
    FinetuneConfig,
    PretrainConfig,
    config_echo,
    derive_seed,
    dump_config,
    load_config,
    parse_pairs,
)
from .domain import NoiseSpec, analyze
from .errors import ConfigError, EnhanceError, LoadError
from .imaging import DatasetManifest, load_image, save_image
from .iqa.niqe import niqe_fit, niqe_score
from .iqa.reports import EVAL_SIZE, evaluate_many, resize, write_metric_csv
from .iqa.scorers import make_scorer
from .iqa.underwater import uciqe, uiqm
from .losses import make_extractor
from .metric_select import evaluate_candidates, write_selection_csv
from .network import enhance_padded
from .training import (
    PRETRAIN_COLUMNS,
    epoch_summary,
    finetune,
    generate_pseudo_labels,
    pretrain,
    write_loss_log,
)

log = logging.getLogger("uwenhance")

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _require_file(path, what):
    if path is None:
        raise ConfigError(f"--{what} is required")
    if not Path(path).is_file():
        raise LoadError(f"{what} not found: {path}")
    return Path(path)


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise LoadError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def resolve_config(cls, args, overrides: dict):
    """Build a config with precedence flag > file > default and log each key's source."""
    file_keys = set()
    if args.config is not None:
        path = _require_file(args.config, "config")
        file_keys = set(parse_pairs(path.read_text(encoding="utf-8"), str(path)))
    config = load_config(cls, args.config, overrides)
    for key, value in config_echo(config).items():
        if overrides.get(key) is not None:
            source = "flag"
        elif key in file_keys:
            source = "file"
        else:
            source = "default"
        log.info("config %s = %s (%s)", key, value, source)
    return config


def write_run_manifest(out: Path, command: str, options: dict, inputs: list, extra: dict = None) -> Path:
    artifacts = {
        str(p.relative_to(out)): sha256_file(p)
        for p in sorted(out.rglob("*"))
        if p.is_file() and p.name != "run_manifest.json"
    }
    manifest = {
        "command": command,
        "package_version": __version__,
        "options": options,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "artifacts": artifacts,
        **(extra or {}),
    }
    path = out / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return path


def _write_resolved(out: Path, config) -> Path:
    path = out / "resolved.cfg"
    path.write_text(dump_config(config), encoding="utf-8")
    return path


# ------------------------------------------------------------------ commands


def cmd_pretrain(args) -> dict:
    manifest_path = _require_file(args.manifest, "manifest")
    config = resolve_config(
        PretrainConfig,
        args,
        {"seed": args.seed, "epochs": args.epochs, "max_steps": args.max_steps, "lr": args.lr},
    )
    resume = load_checkpoint(_require_file(args.checkpoint, "checkpoint")) if args.checkpoint else None
    if resume is not None and resume.kind != "pretrain":
        raise ConfigError("--checkpoint for pretrain must be a pretrain checkpoint")
    pairs = DatasetManifest.read(manifest_path).load_pairs()
    out = args.out
    _write_resolved(out, config)
    ckpt = pretrain(pairs, config, resume=resume)
    save_checkpoint(ckpt, out / "pretrain.ckpt")
    write_loss_log(ckpt.log, out / "pretrain_log.csv", PRETRAIN_COLUMNS)
    write_loss_log(epoch_summary(ckpt.log), out / "pretrain_epochs.csv", ("epoch", "batch_size", "patch_size", "steps", "total"))
    inputs = [manifest_path, Path(args.config)] if args.config else [manifest_path]
    return {"inputs": inputs, "options": config_echo(config), "extra": {"seed": config.seed, "steps": ckpt.step}}


def cmd_finetune(args) -> dict:
    manifest_path = _require_file(args.manifest, "manifest")
    ckpt_path = _require_file(args.checkpoint, "checkpoint")
    config = resolve_config(
        FinetuneConfig,
        args,
        {"seed": args.seed, "steps": args.steps, "lr": args.lr, "batch_size": args.batch_size, "scorer": args.scorer},
    )
    scorer = make_scorer(config.scorer, config.scorer_entry or None)
    scorer.require_differentiable()
    extractor = make_extractor(config.extractor)
    ckpt = load_checkpoint(ckpt_path)
    manifest = DatasetManifest.read(manifest_path)
    inputs = manifest.load_inputs()
    out = args.out
    _write_resolved(out, config)
    records = generate_pseudo_labels(inputs, ckpt, scorer, [e.source for e in manifest])
    with (out / "pseudo_labels.csv").open("w", encoding="utf-8") as fh:
        fh.write("input,source,q_reference\n")
        for entry, rec in zip(manifest, records):
            fh.write(f"{entry.input.name},{rec.source},{rec.q_reference!r}\n")
    result = finetune(records, ckpt, scorer, config, extractor=extractor)
    save_checkpoint(result, out / "finetune.ckpt")
    write_loss_log(result.log, out / "finetune_log.csv")
    return {
        "inputs": [manifest_path, ckpt_path] + ([Path(args.config)] if args.config else []),
        "options": config_echo(config),
        "extra": {"seed": config.seed, "steps": result.step, "scorer_digest": scorer.digest()},
    }


def cmd_enhance(args) -> dict:
    ckpt_path = _require_file(args.checkpoint, "checkpoint")
    if (args.manifest is None) == (args.input is None):
        raise ConfigError("give exactly one of --manifest and --input")
    paths = [e.input for e in DatasetManifest.read(args.manifest)] if args.manifest else list_images(args.input)
    if not paths:
        raise LoadError("no input images found")
    model = load_checkpoint(ckpt_path).model
    names = set()
    for p in paths:
        name = p.stem + ".png"
        if name in names:
            raise ConfigError(f"two inputs map to the output name {name}")
        names.add(name)
        save_image(enhance_padded(model, load_image(p)), args.out / name)
    return {"inputs": [ckpt_path] + paths, "options": {"checkpoint": str(ckpt_path)}}


def cmd_evaluate(args) -> dict:
    if args.resize_full_reference and args.target is None:
        raise ConfigError("--resize-full-reference needs --target")
    preds = list_images(args.pred)
    if not preds:
        raise LoadError(f"no images in {args.pred}")
    targets = {}
    if args.target is not None:
        targets = {p.stem: p for p in list_images(args.target)}
        missing = [p.name for p in preds if p.stem not in targets]
        if missing:
            raise LoadError(f"no target for {missing[0]}")
    scorer = make_scorer(args.scorer, args.scorer_entry) if args.scorer else None
    niqe_model = None
    if args.niqe_corpus is not None:
        niqe_model = niqe_fit([resize(load_image(p)) for p in list_images(args.niqe_corpus)])
    items = [(p.stem, load_image(p), load_image(targets[p.stem]) if targets else None) for p in preds]
    results = evaluate_many(
        items,
        workers=args.workers,
        scorer=scorer,
        niqe_model=niqe_model,
        resize_full_reference=args.resize_full_reference,
    )
    write_metric_csv(results, args.out / "metrics.csv")
    names = list(results[0][1])
    summary = {n: float(np.mean([m[n] for _, m in results])) for n in names}
    (args.out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    options = {
        "pred": str(args.pred),
        "target": str(args.target) if args.target else None,
        "scorer": args.scorer,
        "resize_full_reference": args.resize_full_reference,
        "no_reference_size": EVAL_SIZE,
    }
    return {"inputs": preds + list(targets.values()), "options": options}


def _candidate_metrics(names, scorer_entry, niqe_corpus):
    metrics = {}
    for name in names:
        if name == "uiqm":
            metrics[name] = lambda img: uiqm(resize(img))
        elif name == "uciqe":
            metrics[name] = lambda img: uciqe(resize(img))
        elif name == "niqe":
            if niqe_corpus is None:
                raise ConfigError("the niqe candidate needs a fitting corpus (--niqe-corpus)")
            model = niqe_fit([resize(img) for img in niqe_corpus])
            # negated so that higher is better like the other candidates
            metrics[name] = lambda img, m=model: -niqe_score(m, resize(img))
        elif name in ("proxy", "external"):
            scorer = make_scorer(name, scorer_entry)
            metrics[scorer.tag] = lambda img, s=scorer: s.score(resize(img))
        else:
            raise ConfigError(f"unknown candidate metric {name!r}")
    return metrics


def _read_labelled(path):
    path = _require_file(path, "labelled")
    rows = []
    for line in path.read_text(encoding="utf-8").splitlines()[1:]:
        if line.strip():
            name, score = line.rsplit(",", 1)
            rows.append((load_image(path.parent / name.strip()), float(score)))
    return rows


def cmd_select_metric(args) -> dict:
    manifest_path = _require_file(args.manifest, "manifest")
    manifest = DatasetManifest.read(manifest_path)
    pairs = [(img_pair.target, img_pair.input) for img_pair in manifest.load_pairs()]
    labelled = _read_labelled(args.labelled) if args.labelled else None
    corpus = [load_image(p) for p in list_images(args.niqe_corpus)] if args.niqe_corpus else None
    metrics = _candidate_metrics(args.metrics, args.scorer_entry, corpus)
    reports = evaluate_candidates(metrics, pairs, labelled, workers=args.workers)
    write_selection_csv(reports, args.out / "selection.csv")
    inputs = [manifest_path] + ([Path(args.labelled)] if args.labelled else [])
    return {"inputs": inputs, "options": {"metrics": args.metrics, "workers": args.workers}}


def cmd_analyze_domain(args) -> dict:
    manifest_path = _require_file(args.manifest, "manifest")
    seed = 0 if args.seed is None else args.seed
    clean = DatasetManifest.read(manifest_path).load_inputs()
    specs = {
        role: NoiseSpec.parse(text, seed=derive_seed(seed, role))
        for role, text in (
            ("pseudo", args.pseudo_noise),
            ("reference", args.reference_noise),
            ("nonreference", args.nonreference_noise),
        )
    }
    report = analyze(
        clean,
        specs["pseudo"],
        specs["reference"],
        specs["nonreference"],
        make_extractor(args.extractor),
        per_pixel=not args.sum,
    )
    report.write_json(args.out / "domain_report.json", include_means=args.include_means)
    options = {
        "pseudo_noise": args.pseudo_noise,
        "reference_noise": args.reference_noise,
        "nonreference_noise": args.nonreference_noise,
        "extractor": args.extractor,
        "per_pixel": not args.sum,
        "seed": seed,
        "derived_seeds": {k: s.seed for k, s in specs.items()},
    }
    return {"inputs": [manifest_path], "options": options}


COMMANDS = {
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "enhance": cmd_enhance,
    "evaluate": cmd_evaluate,
    "select-metric": cmd_select_metric,
    "analyze-domain": cmd_analyze_domain,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uwenhance", description="Underwater image enhancement pipeline.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log resolved config at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--out", type=Path, required=True, help="output directory (created if absent)")
        p.add_argument("--workers", type=int, default=1)
        if seed:
            p.add_argument("--seed", type=int, default=None, help="root seed (overrides the config)")
        return p

    p = common(sub.add_parser("pretrain", help="supervised pretraining on paired data"))
    p.add_argument("--config", type=Path)
    p.add_argument("--manifest", type=Path, help="paired dataset manifest (TSV)")
    p.add_argument("--checkpoint", type=Path, help="resume from this pretrain checkpoint")
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--lr", type=float)

    p = common(sub.add_parser("finetune", help="quality-guided fine-tuning on pseudo labels"))
    p.add_argument("--config", type=Path)
    p.add_argument("--manifest", type=Path, help="fine-tuning inputs (targets are ignored)")
    p.add_argument("--checkpoint", type=Path, help="pretrained checkpoint")
    p.add_argument("--scorer", choices=("proxy", "external"))
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)

    p = common(sub.add_parser("enhance", help="enhance images with a checkpoint"), seed=False)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--manifest", type=Path)
    p.add_argument("--input", type=Path, help="directory of input images")

    p = common(sub.add_parser("evaluate", help="metric table for a directory of predictions"), seed=False)
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--target", type=Path)
    p.add_argument("--scorer", choices=("proxy", "external"))
    p.add_argument("--scorer-entry")
    p.add_argument("--niqe-corpus", type=Path, help="directory of pristine images to fit NIQE")
    p.add_argument("--resize-full-reference", action="store_true", help="also resize before PSNR/SSIM")

    p = common(sub.add_parser("select-metric", help="rank candidate no-reference metrics"), seed=False)
    p.add_argument("--manifest", type=Path, help="degraded (input) / clean (target) pairs")
    p.add_argument("--labelled", type=Path, help="CSV of image,opinion_score for PLCC")
    p.add_argument("--metrics", nargs="+", default=["uiqm", "uciqe", "proxy"])
    p.add_argument("--scorer-entry")
    p.add_argument("--niqe-corpus", type=Path)

    p = common(sub.add_parser("analyze-domain", help="domain discrepancy and feature shift"))
    p.add_argument("--manifest", type=Path, help="clean images (inputs column)")
    p.add_argument("--pseudo-noise", default="gaussian:0.05")
    p.add_argument("--reference-noise", default="color-cast:0.0,0.05,0.1")
    p.add_argument("--nonreference-noise", default="haze-blend:0.4")
    p.add_argument("--extractor", default="random-pyramid", choices=("identity", "random-pyramid", "vgg19"))
    p.add_argument("--sum", action="store_true", help="sum squared distances instead of per-pixel means")
    p.add_argument("--include-means", action="store_true", help="write the mean feature vectors too")
    return parser


def _error_line(exc: BaseException) -> str:
    return json.dumps({"error": type(exc).__name__, "message": str(exc).replace("\n", " ")})


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if getattr(args, "workers", 1) < 1:
        print(_error_line(ConfigError("--workers must be >= 1")), file=sys.stderr)
        return 1
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        info = COMMANDS[args.command](args)
        write_run_manifest(args.out, args.command, info["options"], info["inputs"], info.get("extra"))
    except (EnhanceError, OSError) as exc:
        print(_error_line(exc), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
