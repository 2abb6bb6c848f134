"""Single executable exposing the pipeline: data, training, decoding, metrics.

Exit codes: 1 usage error, 2 data error, 3 internal invariant breach; every
failure also prints a machine-readable JSON object on stderr.  Each artifact
a command writes carries a provenance header with the command, flags, and
seed so runs can be reproduced exactly.  The LDGM_THREADS environment
variable caps worker threads for the parts that fan out.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

from . import errors as err
from .core import detokenize, layout_to_doc, quantize, tokenize, validate
from .data import (
    CATEGORY_NAMES,
    DatasetManifest,
    SynthConfig,
    ingest,
    make_splits,
    synth_corpus,
    write_corpus,
)
from .decode import decode
from .diffusion import (
    CorruptionStrategy,
    DecouplingLevel,
    corrupt,
    plan_corruption,
)
from .metrics import (
    alignment,
    compute_metrics,
    overlap,
    retention,
    train_feature_extractor,
)
from .optim import seeded_rng
from .tasks import DECODE_STRATEGIES, TaskSpec, build_task
from .train import TrainConfig, Trainer, load_checkpoint, save_checkpoint

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2 by default; the contract is 1
        raise UsageError(message)


def worker_threads() -> int:
    raw = os.environ.get("LDGM_THREADS", "")
    try:
        return max(1, int(raw)) if raw else 4
    except ValueError:
        raise UsageError(f"LDGM_THREADS must be an integer, got {raw!r}") from None


def _provenance(args: argparse.Namespace) -> dict:
    flags = {k: v for k, v in vars(args).items() if k != "func" and v is not None}
    return {
        "tool": "layoutgen",
        "command": args.command,
        "flags": flags,
        "seed": getattr(args, "seed", None),
    }


def _load_json(path: str | None) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text("utf-8"))
    except OSError as exc:
        raise err.DataError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise err.DataError(f"config {path} is not valid JSON: {exc}") from exc


def _write_json(path: str | Path, doc: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True), "utf-8")


def _train_config(args, overrides: dict | None = None) -> TrainConfig:
    doc = _load_json(getattr(args, "config", None))
    doc.update(overrides or {})
    if getattr(args, "seed", None) is not None:
        doc["seed"] = args.seed
    # Corruption flags override the config file when given.
    if getattr(args, "noise", None) is not None:
        doc["geometry_noise"] = args.noise
    if getattr(args, "level", None) is not None:
        doc["level"] = args.level
    if getattr(args, "strategy", None) is not None and args.command in ("train", "corrupt"):
        doc["strategy"] = args.strategy
    return TrainConfig.from_json(doc)


def _quantized_corpus(path: str, cfg: TrainConfig):
    layouts, _ = ingest(path)
    quantizer = cfg.quantizer()
    out = []
    for i, cont in enumerate(layouts):
        layout = quantize(cont, quantizer)
        report = validate(layout, quantizer, n_max=cfg.n_max)
        if not report.ok:
            raise err.DataError(
                f"corpus layout {i} invalid: {report.violations[0].message}"
            )
        out.append(layout)
    return out


# ---------------------------------------------------------------------------
# Commands


def cmd_synth_data(args) -> int:
    doc = _load_json(args.config)
    if args.seed is not None:
        doc["seed"] = args.seed
    cfg = SynthConfig(**doc)
    layouts = synth_corpus(cfg)
    manifest = DatasetManifest(
        name="synthetic",
        categories=list(CATEGORY_NAMES),
        canvas_convention="top-left origin, y grows downward, device units",
        counts={"total": len(layouts)},
        filters={"provenance": _provenance(args), "synth_config": doc},
    )
    write_corpus(layouts, args.out, manifest)
    print(json.dumps({"written": len(layouts), "out": args.out}))
    return EXIT_OK


def cmd_ingest(args) -> int:
    doc = _load_json(args.config)
    layouts, manifest = ingest(
        args.corpus,
        vocab=doc.get("vocab"),
        vocab_policy=doc.get("vocab_policy", "drop"),
        n_max=doc.get("n_max", 25),
        fmt=args.format or "native",
    )
    manifest.filters["provenance"] = _provenance(args)
    write_corpus(layouts, args.out, manifest)
    print(json.dumps({"written": len(layouts), "dropped": manifest.filters["dropped"]}))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _train_config(args)
    corpus = _quantized_corpus(args.corpus, cfg)
    train_set, val_set, _ = make_splits(corpus, seed=cfg.seed)
    trainer = Trainer(cfg, train_set, val_corpus=val_set)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "train-log.jsonl"
    with open(log_path, "w", encoding="utf-8") as log:
        log.write(json.dumps({"header": _provenance(args), "config": cfg.to_json()}) + "\n")
        trainer.run(on_step=lambda rec: log.write(json.dumps(rec.to_json()) + "\n"))
    if trainer.best_params is not None:
        for name, best in trainer.best_params.items():
            trainer.model.params[name].data = best
    version = save_checkpoint(
        out_dir / "model.ckpt", trainer.model, trainer.opt, step=trainer.step,
        train_config=cfg,
    )
    print(json.dumps({"checkpoint": str(out_dir / "model.ckpt"), "model_version": version,
                      "steps": trainer.step}))
    return EXIT_OK


def cmd_corrupt(args) -> int:
    cfg = _train_config(args)
    corpus = _quantized_corpus(args.corpus, cfg)
    stacks = cfg.stacks()
    strategy = CorruptionStrategy(cfg.strategy)
    level = DecouplingLevel(cfg.level)
    rng = seeded_rng(cfg.seed, "corrupt-cli")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "header.json", _provenance(args))
    quantizer = cfg.quantizer()
    for i, layout in enumerate(corpus):
        seq = tokenize(layout)
        plan = plan_corruption(seq, strategy, level, cfg.T, rng,
                               select_prob=cfg.select_prob)
        corrupted = corrupt(seq, plan, stacks, rng)
        noisy = detokenize(corrupted, quantizer)
        _write_json(out_dir / f"corrupted-{i:04d}.json", layout_to_doc(noisy, quantizer))
    print(json.dumps({"written": len(corpus), "out": str(out_dir)}))
    return EXIT_OK


def _load_model(args):
    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    loaded = load_checkpoint(args.checkpoint)
    cfg = loaded.train_config()
    if cfg is None:
        raise err.DataError(f"{args.checkpoint} has no embedded train config")
    return loaded, cfg


def _run_generation(args, loaded, cfg: TrainConfig):
    corpus = _quantized_corpus(args.corpus, cfg)
    task = TaskSpec(args.task or "gen-pcm")
    steps = args.steps or cfg.T
    seed = args.seed if args.seed is not None else 0
    stacks = cfg.stacks()
    quantizer = cfg.quantizer()
    rng = seeded_rng(seed, "build-tasks")
    results = []
    for i, source in enumerate(corpus):
        req = build_task(
            source, task, quantizer, rng, steps=steps,
            seed=seed + i,
            strategy=args.strategy or "confidence-topk",
            temperature=args.temperature if args.temperature is not None else 1.0,
            clamp_conditions=bool(args.clamp),
        )
        results.append((source, req, decode(req, loaded.model, stacks, quantizer)))
    return results, quantizer


def cmd_generate(args) -> int:
    loaded, cfg = _load_model(args)
    results, quantizer = _run_generation(args, loaded, cfg)
    out_dir = Path(args.out)
    (out_dir / "generated").mkdir(parents=True, exist_ok=True)
    (out_dir / "inputs").mkdir(parents=True, exist_ok=True)
    header = _provenance(args)
    header["model_version"] = loaded.version_hash
    _write_json(out_dir / "header.json", header)
    for i, (_, req, result) in enumerate(results):
        _write_json(out_dir / "inputs" / f"{i:04d}.json",
                    layout_to_doc(req.layout, quantizer))
        _write_json(out_dir / "generated" / f"{i:04d}.json",
                    layout_to_doc(result.layout, quantizer))
        if args.trajectory:
            (out_dir / "trajectories").mkdir(exist_ok=True)
            steps_doc = [
                {"step": len(result.trajectory.steps) - s,
                 "layout": layout_to_doc(step, quantizer),
                 "committed": result.trajectory.commits[s]}
                for s, step in enumerate(result.trajectory.steps)
            ]
            _write_json(out_dir / "trajectories" / f"{i:04d}.json", {"steps": steps_doc})
    print(json.dumps({"generated": len(results), "out": str(out_dir)}))
    return EXIT_OK


def cmd_eval(args) -> int:
    overrides = _load_json(args.config)
    fid_steps = int(overrides.pop("fid_steps", 200))
    loaded, cfg = _load_model(args)
    quantizer = cfg.quantizer()
    reference = _quantized_corpus(args.corpus, cfg)
    if args.generated:
        generated = _quantized_corpus(args.generated, cfg)
        inputs = None
        pairing = "source" if len(generated) == len(reference) else "multiset"
    else:
        results, _ = _run_generation(args, loaded, cfg)
        generated = [r.layout for _, _, r in results]
        inputs = [req.layout for _, req, _ in results]
        pairing = "multiset" if (args.task or "gen-pcm") == "u-gen" else "source"
    extractor = train_feature_extractor(
        reference, quantizer, steps=fid_steps,
        seed=args.seed if args.seed is not None else 0,
        batch=min(16, max(2, len(reference) // 2)), n_max=cfg.n_max,
    )
    report = compute_metrics(generated, reference, quantizer, extractor,
                             inputs=inputs, pairing=pairing)
    doc = report.to_json()
    doc["provenance"] = _provenance(args)
    if args.out:
        _write_json(args.out, doc)
    print(json.dumps(doc))
    return EXIT_OK


ABLATE_DEFAULTS = dict(
    T=10, batch=8, lr=5e-3, total_steps=150, d_model=32, n_heads=2, n_layers=1,
    d_ffn=64, n_max=10, coord_bins=16, val_every=0, warmup_proportion=0.1,
)


def cmd_ablate(args) -> int:
    overrides = _load_json(args.config)
    eval_count = int(overrides.pop("eval_layouts", 4))
    base = {**ABLATE_DEFAULTS, **overrides}
    strategies = [s.value for s in CorruptionStrategy]
    noises = ["Uniform", "DiscretizedGaussian", "BandDiagonal"]
    levels = [l.value for l in DecouplingLevel]
    decoders = list(DECODE_STRATEGIES)
    seed = args.seed if args.seed is not None else 0

    rows = []
    t0 = time.time()
    for strategy in strategies:
        for noise in noises:
            cells = {}
            for level in levels:
                cfg = TrainConfig.from_json({
                    **base,
                    "strategy": strategy,
                    "geometry_noise": noise,
                    "level": level,
                    "seed": seed,
                })
                corpus = _quantized_corpus(args.corpus, cfg)
                trainer = Trainer(cfg, corpus)
                history = trainer.run(cfg.total_steps)
                final_loss = history[-1].breakdown.l_total
                stacks = trainer.stacks
                quantizer = cfg.quantizer()
                rng = seeded_rng(seed, f"ablate-{strategy}-{noise}-{level}")
                sources = corpus[:eval_count]
                cells[level] = {}
                for decoder in decoders:
                    al = ov = ret = 0.0
                    n_ret = 0
                    for i, source in enumerate(sources):
                        req = build_task(
                            source, TaskSpec("gen-pcm"), quantizer, rng,
                            steps=cfg.T, seed=seed + i, strategy=decoder,
                            temperature=0.0,
                        )
                        result = decode(req, trainer.model, stacks, quantizer)
                        al += alignment(result.layout, quantizer)
                        ov += overlap(result.layout, quantizer)
                        r = retention(req.layout, result.layout)
                        if r is not None:
                            ret += r
                            n_ret += 1
                    cells[level][decoder] = {
                        "alignment": al / len(sources),
                        "overlap": ov / len(sources),
                        "retention": (ret / n_ret) if n_ret else None,
                        "final_loss": final_loss,
                    }
            rows.append({"strategy": strategy, "noise": noise, "cells": cells})
    doc = {
        "header": _provenance(args),
        "rows": rows,
        "elapsed_s": time.time() - t0,
    }
    out = Path(args.out)
    _write_json(out, doc)
    csv_path = out.with_suffix(".csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "noise", "level", "decoder", "alignment",
                         "overlap", "retention", "final_loss"])
        for row in rows:
            for level, decoders_out in row["cells"].items():
                for decoder, m in decoders_out.items():
                    writer.writerow([row["strategy"], row["noise"], level, decoder,
                                     m["alignment"], m["overlap"], m["retention"],
                                     m["final_loss"]])
    print(json.dumps({"rows": len(rows), "out": str(out), "csv": str(csv_path),
                      "elapsed_s": doc["elapsed_s"]}))
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.checkpoint, max_workers=worker_threads())
    uvicorn.run(app, host="127.0.0.1", port=args.port or 8000, log_level="warning")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> _Parser:
    parser = _Parser(prog="layoutgen", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, *flags):
        p = sub.add_parser(name)
        p.set_defaults(func=fn, command=name)
        for flag in flags:
            if flag == "--clamp" or flag == "--trajectory":
                p.add_argument(flag, action="store_true")
            elif flag in ("--steps", "--seed", "--port"):
                p.add_argument(flag, type=int)
            elif flag == "--temperature":
                p.add_argument(flag, type=float)
            else:
                p.add_argument(flag, type=str)
        return p

    add("synth-data", cmd_synth_data, "--out", "--seed", "--config")
    add("ingest", cmd_ingest, "--corpus", "--out", "--format", "--config", "--seed")
    add("train", cmd_train, "--config", "--corpus", "--out", "--seed", "--strategy",
        "--noise", "--level")
    add("corrupt", cmd_corrupt, "--config", "--corpus", "--out", "--seed", "--strategy",
        "--noise", "--level")
    add("generate", cmd_generate, "--checkpoint", "--corpus", "--task", "--strategy",
        "--steps", "--seed", "--temperature", "--clamp", "--trajectory", "--out")
    add("eval", cmd_eval, "--checkpoint", "--corpus", "--generated", "--task",
        "--strategy", "--steps", "--seed", "--temperature", "--clamp", "--config",
        "--out")
    add("ablate", cmd_ablate, "--corpus", "--out", "--seed", "--config")
    add("serve", cmd_serve, "--checkpoint", "--port")
    return parser


def _required(args, *names) -> None:
    for name in names:
        if getattr(args, name, None) is None:
            raise UsageError(f"--{name.replace('_', '-')} is required")


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command in ("synth-data",):
            _required(args, "out")
        elif args.command == "ingest":
            _required(args, "corpus", "out")
        elif args.command in ("train", "corrupt"):
            _required(args, "corpus", "out")
        elif args.command == "generate":
            _required(args, "checkpoint", "corpus", "out")
        elif args.command == "eval":
            _required(args, "checkpoint", "corpus")
        elif args.command == "ablate":
            _required(args, "corpus", "out")
        elif args.command == "serve":
            _required(args, "checkpoint")
        return args.func(args)
    except UsageError as exc:
        _emit_error("usage", str(exc))
        return EXIT_USAGE
    except (
        err.DataError,
        err.ParseError,
        err.ValidationError,
        err.VocabularyError,
        err.IncompleteLayoutError,
        err.CheckpointError,
        err.ScheduleError,
        err.DomainError,
    ) as exc:
        _emit_error("data", str(exc))
        return EXIT_DATA
    except err.LayoutGenError as exc:  # DecodeError, ShapeError, ...
        _emit_error("internal", str(exc))
        return EXIT_INTERNAL
    except Exception as exc:  # anything else is an invariant breach too
        _emit_error("internal", f"{type(exc).__name__}: {exc}")
        return EXIT_INTERNAL


def _emit_error(code: str, message: str) -> None:
    print(json.dumps({"error": {"code": code, "message": message}}), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
