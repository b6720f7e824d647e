"""Command-line entry points.

Subcommands: build-pool, split, synth, train, predict, eval, plot. Exit
codes: 0 success, 1 usage problems, 2 data/config problems, 3 numeric
failures (diverged training). Every command that writes an output directory
also drops a config echo and the tool version there, and every command with
randomness takes its seed from the config (overridable with --seed).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, dump_config, load_config, write_run_metadata
from .errors import ConfigError, DataFormatError, EcgDelinError, NumericError, TrainingDiverged
from .evaluation import WaveOutcome, MetricsReport, evaluate_record, majority_vote, normalize_input
from .fileio import (
    annotation_path,
    load_annotations,
    load_record,
    load_subject_map,
    record_path,
    save_annotations,
    save_record,
    subject_of,
)
from .network import build, predict_mask
from .pools import (
    build_pool,
    crop_segments,
    fit_amplitude_models,
    load_amplitude_model,
    load_pool,
    save_pool,
)
from .records import WaveKind, fiducials_from_mask, mask_from_fiducials
from .synth import SyntheticGenerator
from .training import (
    MixedSource,
    RealSource,
    SyntheticSource,
    load_checkpoint,
    save_checkpoint,
    train,
    write_loss_log,
)

FOLD_HEADER = "record_id,subject_id,fold"


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is exit 1."""

    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


def _load_run_config(args) -> RunConfig:
    return load_config(args.config) if args.config else RunConfig()


def _require(value, flag: str):
    if value is None:
        raise ConfigError(f"missing {flag} (flag or config paths section)")
    return value


def _list_record_ids(records_dir: Path) -> list[str]:
    if not records_dir.is_dir():
        raise DataFormatError(f"records directory {records_dir} does not exist")
    return sorted(p.stem for p in records_dir.glob("*.csv"))


def _load_pairs(records_dir: Path, annotations_dir: Path):
    """Load (record, fiducials) pairs; both files must exist per id."""
    pairs = []
    for rid in _list_record_ids(records_dir):
        ann = annotation_path(annotations_dir, rid)
        if not ann.exists():
            print(f"warning: no annotations for {rid}, skipped", file=sys.stderr)
            continue
        pairs.append((load_record(record_path(records_dir, rid)), load_annotations(ann)))
    if not pairs:
        raise DataFormatError(
            f"no annotated records found under {records_dir} + {annotations_dir}"
        )
    return pairs


# ---------------------------------------------------------------------------
# Commands


def cmd_build_pool(args) -> int:
    config = _load_run_config(args)
    records_dir = Path(_require(args.records or config.paths.records_dir, "--records"))
    annotations_dir = Path(_require(args.annotations or config.paths.annotations_dir, "--annotations"))
    out_dir = Path(_require(args.out or config.paths.pool_dir or config.paths.out_dir, "--out"))

    ids = _list_record_ids(records_dir)
    ann_ids = sorted(p.stem for p in annotations_dir.glob("*.ann")) if annotations_dir.is_dir() else []
    for rid in sorted(set(ids) ^ set(ann_ids)):
        print(f"warning: unpaired file for id {rid!r}, skipped", file=sys.stderr)

    pairs = []
    for rid in sorted(set(ids) & set(ann_ids)):
        try:
            record = load_record(record_path(records_dir, rid))
            fids = load_annotations(annotation_path(annotations_dir, rid))
            crop_segments(record, fids)   # validation probe before pooling
        except DataFormatError as exc:
            print(f"warning: skipping {rid}: {exc}", file=sys.stderr)
            continue
        pairs.append((record, fids))
    if not pairs:
        raise DataFormatError("no usable record/annotation pairs")

    pool = build_pool(pairs)
    model = fit_amplitude_models(pool)
    save_pool(pool, out_dir, model)
    write_run_metadata(out_dir, config, __version__)
    for kind, count in pool.counts().items():
        print(f"{kind.value}: {count} templates")
    print(f"discarded: {pool.discarded}")
    print(f"pool written to {out_dir}")
    return 0


def cmd_split(args) -> int:
    config = _load_run_config(args)
    records_dir = Path(_require(args.records or config.paths.records_dir, "--records"))
    out_dir = Path(_require(args.out or config.paths.out_dir, "--out"))
    seed = args.seed if args.seed is not None else (config.seeds.split or 0)
    mapping = None
    map_path = args.subjects or config.paths.subject_map
    if map_path:
        mapping = load_subject_map(map_path)

    ids = _list_record_ids(records_dir)
    if not ids:
        raise DataFormatError(f"no records found in {records_dir}")
    subjects = sorted({subject_of(rid, mapping) for rid in ids})
    if args.folds > len(subjects):
        raise DataFormatError(
            f"cannot make {args.folds} folds out of {len(subjects)} subjects"
        )
    rng = np.random.default_rng(seed)
    shuffled = list(subjects)
    rng.shuffle(shuffled)
    fold_of = {s: i % args.folds for i, s in enumerate(shuffled)}

    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [FOLD_HEADER]
    for rid in ids:
        s = subject_of(rid, mapping)
        lines.append(f"{rid},{s},{fold_of[s]}")
    (out_dir / "folds.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    write_run_metadata(out_dir, config, __version__)
    print(f"{len(ids)} records, {len(subjects)} subjects, {args.folds} folds -> {out_dir / 'folds.csv'}")
    return 0


def _load_pool_and_model(pool_dir: Path):
    pool = load_pool(pool_dir)
    model_path = pool_dir / "amplitude_model.json"
    if not model_path.exists():
        raise DataFormatError(f"{model_path}: missing amplitude model (rebuild the pool)")
    return pool, load_amplitude_model(model_path)


def cmd_synth(args) -> int:
    config = _load_run_config(args)
    pool_dir = Path(_require(args.pool or config.paths.pool_dir, "--pool"))
    out_dir = Path(_require(args.out or config.paths.out_dir, "--out"))
    gen = config.generation
    seed = args.seed if args.seed is not None else config.seeds.generation
    if seed is not None:
        gen = dataclasses.replace(gen, rng_seed=int(seed))

    pool, model = _load_pool_and_model(pool_dir)
    generator = SyntheticGenerator(pool, model, gen)
    out_dir.mkdir(parents=True, exist_ok=True)
    for k in range(args.count):
        rec = generator.record(k)
        rid = rec.signal.id
        save_record(rec.signal, record_path(out_dir, rid))
        save_annotations(fiducials_from_mask(rec.mask), annotation_path(out_dir, rid))
        prov = rec.provenance
        head = {key: prov[key] for key in prov if key != "cycles"}
        lines = [json.dumps({"record": head})]
        lines += [json.dumps(c) for c in prov["cycles"]]
        (out_dir / f"{rid}.prov").write_text("\n".join(lines) + "\n", encoding="utf-8")
    write_run_metadata(out_dir, config, __version__)
    print(f"wrote {args.count} synthetic records to {out_dir}")
    return 0


def _build_source(args, config: RunConfig):
    trainer = config.trainer
    aug = config.augmentation if config.augmentation.any_enabled() else None
    synthetic = None
    real = None
    if trainer.data_mix in ("synthetic", "both"):
        pool_dir = Path(_require(args.pool or config.paths.pool_dir, "--pool"))
        pool, model = _load_pool_and_model(pool_dir)
        gen = config.generation
        if config.seeds.generation is not None:
            gen = dataclasses.replace(gen, rng_seed=config.seeds.generation)
        synthetic = SyntheticSource(
            SyntheticGenerator(pool, model, gen),
            input_length=trainer.input_length,
            augmentation=aug,
        )
    if trainer.data_mix in ("real", "both"):
        records_dir = Path(_require(args.records or config.paths.records_dir, "--records"))
        annotations_dir = Path(
            _require(args.annotations or config.paths.annotations_dir, "--annotations")
        )
        pairs = [
            (rec, mask_from_fiducials(fids, rec.n_samples))
            for rec, fids in _load_pairs(records_dir, annotations_dir)
        ]
        real = RealSource(pairs, trainer.input_length, augmentation=aug)
    if synthetic is not None and real is not None:
        return MixedSource(synthetic, real)
    return synthetic if synthetic is not None else real


def cmd_train(args) -> int:
    config = _load_run_config(args)
    out_dir = Path(_require(args.out or config.paths.out_dir, "--out"))
    trainer = config.trainer
    if args.seed is not None:
        trainer = dataclasses.replace(trainer, seed=int(args.seed))
    elif config.seeds.training is not None:
        trainer = dataclasses.replace(trainer, seed=config.seeds.training)
    config = dataclasses.replace(config, trainer=trainer)

    source = _build_source(args, config)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_run_metadata(out_dir, config, __version__)
    try:
        result = train(trainer, config.network, source)
    except TrainingDiverged as exc:
        if exc.params is not None:
            save_checkpoint(
                exc.params, out_dir / "checkpoint.ckpt",
                step=len(exc.log or []), seed=trainer.seed,
            )
        if exc.log:
            write_loss_log(exc.log, out_dir / "loss_log.csv")
        print(f"error: {exc} (last finite checkpoint saved)", file=sys.stderr)
        return 3
    save_checkpoint(
        result.params, out_dir / "checkpoint.ckpt",
        step=len(result.log), seed=trainer.seed,
    )
    write_loss_log(result.log, out_dir / "loss_log.csv")
    from .plotting import plot_loss_log

    plot_loss_log(result.log, out_dir / "loss_curve.svg")
    first, last = result.log[0][2], result.log[-1][2]
    print(f"trained {len(result.log)} steps; loss {first:.4f} -> {last:.4f}")
    print(f"checkpoint: {out_dir / 'checkpoint.ckpt'}")
    return 0


def _make_predictor(params, threshold: float):
    return lambda signal: predict_mask(params, signal, threshold=threshold)


def cmd_predict(args) -> int:
    config = _load_run_config(args)
    records_dir = Path(_require(args.records or config.paths.records_dir, "--records"))
    out_dir = Path(_require(args.out or config.paths.out_dir, "--out"))
    ckpt = _require(args.checkpoint or config.paths.checkpoint, "--checkpoint")
    params, _ = load_checkpoint(ckpt)
    predictor = _make_predictor(params, config.evaluation.threshold)

    out_dir.mkdir(parents=True, exist_ok=True)
    ids = _list_record_ids(records_dir)
    if not ids:
        raise DataFormatError(f"no records found in {records_dir}")
    for rid in ids:
        record = load_record(record_path(records_dir, rid))
        masks = [
            predictor(normalize_input(record.signal[lead], config.evaluation.normalize_window))
            for lead in range(record.n_leads)
        ]
        fused = majority_vote(masks)
        save_annotations(fiducials_from_mask(fused), annotation_path(out_dir, rid))
    write_run_metadata(out_dir, config, __version__)
    print(f"wrote {len(ids)} annotation files to {out_dir}")
    return 0


def cmd_eval(args) -> int:
    config = _load_run_config(args)
    records_dir = Path(_require(args.records or config.paths.records_dir, "--records"))
    annotations_dir = Path(
        _require(args.annotations or config.paths.annotations_dir, "--annotations")
    )
    out_dir = Path(_require(args.out or config.paths.out_dir, "--out"))
    ckpt = _require(args.checkpoint or config.paths.checkpoint, "--checkpoint")
    mode = args.mode or config.evaluation.mode
    params, _ = load_checkpoint(ckpt)
    predictor = _make_predictor(params, config.evaluation.threshold)

    from .plotting import plot_comparison, plot_metrics_summary

    pairs = sorted(_load_pairs(records_dir, annotations_dir), key=lambda p: p[0].id)
    fig_dir = out_dir / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    totals = {wave: WaveOutcome() for wave in WaveKind}
    for record, fids in pairs:
        masks = [
            predictor(normalize_input(record.signal[lead], config.evaluation.normalize_window))
            for lead in range(record.n_leads)
        ]
        # feed the precomputed masks back through the standard evaluation path
        queue = iter(masks)
        report = evaluate_record(
            record, fids, lambda _sig: next(queue), mode,
            sign_true_minus_pred=config.evaluation.sign_true_minus_pred,
        )
        for wave in WaveKind:
            totals[wave] = totals[wave].merge(report.waves[wave])
        plot_comparison(
            record, fids, fiducials_from_mask(majority_vote(masks)),
            fig_dir / f"{record.id}.svg",
        )
    summary = MetricsReport(mode=mode, sampling_rate=pairs[0][0].sampling_rate, waves=totals)

    rows = summary.rows()
    (out_dir / "report.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    (out_dir / "report.json").write_text(
        json.dumps(summary.to_dict(), indent=2) + "\n", encoding="utf-8"
    )
    plot_metrics_summary(summary, out_dir / "summary.svg")
    write_run_metadata(out_dir, config, __version__)
    for line in rows:
        print(line)
    print(f"report written to {out_dir}")
    return 0


def cmd_plot(args) -> int:
    config = _load_run_config(args)
    records_dir = Path(_require(args.records or config.paths.records_dir, "--records"))
    annotations_dir = args.annotations or config.paths.annotations_dir
    out_dir = Path(_require(args.out or config.paths.out_dir, "--out"))

    from .plotting import plot_record

    ids = _list_record_ids(records_dir)
    if not ids:
        raise DataFormatError(f"no records found in {records_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    for rid in ids:
        record = load_record(record_path(records_dir, rid))
        fids = None
        if annotations_dir:
            ann = annotation_path(annotations_dir, rid)
            if ann.exists():
                fids = load_annotations(ann)
        plot_record(record, out_dir / f"{rid}.svg", fids=fids)
    write_run_metadata(out_dir, config, __version__)
    print(f"wrote {len(ids)} figures to {out_dir}")
    return 0


def cmd_show_config(args) -> int:
    print(dump_config(_load_run_config(args)), end="")
    return 0


# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ecgdelin", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ecgdelin {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, *, seed=False, count=False, folds=False, mode=False, checkpoint=False,
               records=False, annotations=False, pool=False, subjects=False):
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--out", help="output directory")
        if seed:
            p.add_argument("--seed", type=int, help="override the relevant config seed")
        if count:
            p.add_argument("--count", type=int, default=10, help="number of records")
        if folds:
            p.add_argument("--folds", type=int, required=True, help="number of folds")
        if mode:
            p.add_argument("--mode", choices=("single", "multi", "fused"),
                           help="evaluation mode (default from config)")
        if checkpoint:
            p.add_argument("--checkpoint", help="checkpoint file")
        if records:
            p.add_argument("--records", help="directory of signal files")
        if annotations:
            p.add_argument("--annotations", help="directory of annotation files")
        if pool:
            p.add_argument("--pool", help="segment pool directory")
        if subjects:
            p.add_argument("--subjects", help="record_id,subject_id override table")

    p = sub.add_parser("build-pool", help="crop annotated records into a segment pool")
    common(p, records=True, annotations=True)
    p.set_defaults(func=cmd_build_pool)

    p = sub.add_parser("split", help="subject-wise fold assignment")
    common(p, seed=True, folds=True, records=True, subjects=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("synth", help="generate pseudo-synthetic records")
    common(p, seed=True, count=True, pool=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the segmenter")
    common(p, seed=True, pool=True, records=True, annotations=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write predicted annotations for records")
    common(p, checkpoint=True, records=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score a checkpoint against annotations")
    common(p, checkpoint=True, records=True, annotations=True, mode=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="render records (with wave shading) to SVG")
    common(p, records=True, annotations=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("show-config", help="print the effective configuration")
    p.add_argument("--config", help="YAML run configuration")
    p.set_defaults(func=cmd_show_config)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (EcgDelinError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
