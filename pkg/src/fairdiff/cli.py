"""Command-line pipeline: prepare, train, sample, evaluate, sweep.

All commands read one JSON config; flags override config keys. Artifacts
are written atomically and embed the config hash, so mismatched
manifest/checkpoint/output pairings are refused instead of silently mixed.
"""

import argparse
import csv
import functools
import io
import logging
import os
import sys

import numpy as np

from .conditioning import ConditionTable, balance, draw_conditions, empirical_joint
from .config import (
    RunConfig,
    atomic_write_text,
    read_artifact,
    set_dotted,
    write_artifact,
)
from .data import TableSchema, load_dataset, load_schema, split_indices
from .denoiser import Denoiser, LatentCodec, train_denoiser
from .diffusion import NoiseSchedule, make_schedule
from .evaluation import (
    BuiltinClassifier,
    FairnessReport,
    SWEEP_COLUMNS,
    _eor_ratios,
    auc,
    column_density_error,
    dcr,
    dpr,
    pairwise_correlation_error,
    sweep_svg,
    tradeoff_sweep,
)
from .preprocessing import TableEncoder
from .sampling import reverse_sample

logger = logging.getLogger("fairdiff")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def manifest_path(cfg):
    return os.path.join(cfg.out_dir, "manifest.json")


def checkpoint_path(cfg):
    return os.path.join(cfg.out_dir, "checkpoint.json")


def synthetic_path(cfg, level, seed):
    return os.path.join(cfg.out_dir, f"synthetic_level{level}_seed{seed}.csv")


def report_path(cfg, level, seed):
    return os.path.join(cfg.out_dir, f"report_level{level}_seed{seed}.json")


def _sensitive_matrix(ds):
    names = ds.schema.sensitive
    if not names:
        return np.zeros((len(ds), 0), dtype=int)
    return np.stack([ds.column_values(s).astype(int) for s in names], axis=1)


def cmd_prepare(cfg):
    schema = load_schema(cfg.schema_json)
    ds = load_dataset(cfg.data_csv, schema)
    tr, va, te = split_indices(len(ds), cfg.split_seed)
    train = ds.subset(tr)
    encoder = TableEncoder().fit(train)
    table = empirical_joint(train)
    write_artifact(manifest_path(cfg), "manifest", cfg.hash, {
        "schema": ds.schema.to_dict(),
        "split_seed": cfg.split_seed,
        "row_count": len(ds),
        "dropped_rows": ds.dropped_rows,
        "splits": {
            "train": tr.tolist(), "val": va.tolist(), "test": te.tolist(),
        },
        "encoder": encoder.to_dict(),
        "condition_table": table.to_dict(),
    })
    print(f"wrote {manifest_path(cfg)}")
    return [manifest_path(cfg)]


def _load_prepared(cfg):
    manifest = read_artifact(manifest_path(cfg), "manifest", cfg.hash)
    schema = TableSchema.from_dict(manifest["schema"])
    ds = load_dataset(cfg.data_csv, schema)
    splits = tuple(
        ds.subset(manifest["splits"][part]) for part in ("train", "val", "test")
    )
    encoder = TableEncoder.from_dict(manifest["encoder"])
    table = ConditionTable.from_dict(manifest["condition_table"])
    return schema, splits, encoder, table


def _load_model(cfg):
    ck = read_artifact(checkpoint_path(cfg), "checkpoint", cfg.hash)
    model = Denoiser.from_dict(ck["denoiser"])
    codec = LatentCodec.from_dict(ck["codec"])
    sched = NoiseSchedule.from_dict(ck["schedule"])
    return model, codec, sched


def cmd_train(cfg):
    schema, (train, _, _), encoder, _ = _load_prepared(cfg)
    batch = encoder.transform(train)
    sched = make_schedule(cfg.schedule_kind, cfg.timesteps)
    codec = LatentCodec(cfg.codec_mode, cfg.latent_dim).fit(batch)
    labels = train.column_values(schema.target).astype(int)
    sensitive = _sensitive_matrix(train)
    slot_cards = [schema.column(schema.target).cardinality] + [
        schema.column(s).cardinality for s in schema.sensitive
    ]
    model = Denoiser(
        cfg.denoiser, encoder.num_width_, encoder.cardinalities_,
        slot_cards, d_in=codec.latent_width_,
    )
    curve = train_denoiser(model, batch, labels, sensitive, sched, codec)
    write_artifact(checkpoint_path(cfg), "checkpoint", cfg.hash, {
        "denoiser": model.to_dict(),
        "codec": codec.to_dict(),
        "schedule": sched.to_dict(),
    })
    curve_path = os.path.join(cfg.out_dir, "loss_curve.csv")
    lines = [f"# config_hash={cfg.hash}", "epoch,loss"]
    lines += [f"{i + 1},{loss!r}" for i, loss in enumerate(curve)]
    atomic_write_text(curve_path, "\n".join(lines) + "\n")
    print(f"wrote {checkpoint_path(cfg)}")
    print(f"wrote {curve_path}")
    return [checkpoint_path(cfg), curve_path]


def _generate(cfg, schema, encoder, table, model, codec, sched, level, seed):
    conditions = draw_conditions(cfg.sample_count, balance(table, level), seed)
    batch = reverse_sample(
        cfg.sample_count, conditions, model, sched, cfg.guidance, seed, codec
    )
    return encoder.inverse_transform(batch), conditions


def _render_cell(col, value):
    if col.kind == "categorical":
        return col.values[int(value)]
    return repr(float(value))


def _write_synthetic_csv(path, cfg_hash, ds, conditions):
    schema = ds.schema
    target_col = schema.column(schema.target)
    sens_cols = [schema.column(s) for s in schema.sensitive]
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        list(schema.names)
        + ["cond_label"]
        + [f"cond_{s}" for s in schema.sensitive]
    )
    for row, spec in zip(ds.rows, conditions):
        rendered = [
            _render_cell(col, cell) for col, cell in zip(schema.columns, row)
        ]
        rendered.append(target_col.values[int(spec.label)])
        rendered += [
            col.values[int(v)] for col, v in zip(sens_cols, spec.sensitive)
        ]
        writer.writerow(rendered)
    atomic_write_text(path, f"# config_hash={cfg_hash}\n" + buf.getvalue())


def cmd_sample(cfg):
    schema, _, encoder, table = _load_prepared(cfg)
    model, codec, sched = _load_model(cfg)
    level = cfg.balancing_level
    written = []
    for seed in cfg.seeds:
        ds, conditions = _generate(
            cfg, schema, encoder, table, model, codec, sched, level, seed
        )
        path = synthetic_path(cfg, level, seed)
        _write_synthetic_csv(path, cfg.hash, ds, conditions)
        print(f"wrote {path}")
        written.append(path)
    return written


def _fairness_scores(cfg, schema, clf, test):
    y = test.column_values(schema.target).astype(int)
    preds = clf.predict(test)
    attr = cfg.sensitive_attribute or (
        schema.sensitive[0] if schema.sensitive else None
    )
    if attr is None:
        return 1.0, 1.0, True, None
    groups = test.column_values(attr).astype(int)
    dpr_value = dpr(preds, groups, n_groups=schema.column(attr).cardinality)
    ratios, degenerate = _eor_ratios(preds, y, groups)
    eor_value = float(min(ratios)) if ratios else 1.0
    return dpr_value, eor_value, degenerate, attr


def _evaluate_dataset(cfg, splits, encoder, schema, synth, metadata):
    train, val, test = splits
    density = column_density_error(train, synth)
    correlation = pairwise_correlation_error(train, synth)
    dcr_distance, dcr_closeness = dcr(train, val, synth, encoder)
    clf = BuiltinClassifier(cfg.classifier, seed=0).fit(synth)
    auc_value = auc(clf, test)
    dpr_value, eor_value, degenerate, attr = _fairness_scores(
        cfg, schema, clf, test
    )
    meta = {
        "classifier": cfg.classifier,
        "sensitive_attribute": attr,
        "eor_degenerate": degenerate,
        "dcr_holdout": "val",
        "config_hash": cfg.hash,
    }
    meta.update(metadata)
    return FairnessReport.build(
        density, correlation, dcr_distance, dcr_closeness,
        auc_value, dpr_value, eor_value, weights=cfg.weights, metadata=meta,
    )


def cmd_evaluate(cfg, synth_csv=None):
    schema, splits, encoder, _ = _load_prepared(cfg)
    # checked against the same config hash as the manifest, so the pair is
    # known to come from one configuration
    read_artifact(checkpoint_path(cfg), "checkpoint", cfg.hash)
    level, seed = cfg.balancing_level, cfg.seeds[0]
    if synth_csv is None:
        synth_csv = synthetic_path(cfg, level, seed)
    synth = load_dataset(synth_csv, schema)
    report = _evaluate_dataset(
        cfg, splits, encoder, schema, synth,
        {"level": level, "seed": seed, "synthetic_csv": synth_csv},
    )
    path = report_path(cfg, level, seed)
    write_artifact(path, "report", cfg.hash, {"report": report.to_dict()})
    print(f"wrote {path}")
    return [path]


def _sweep_task(raw_cfg, level, seed):
    """One sweep cell: sample at (level, seed), evaluate, return the report.

    Module-level and driven only by the config dict so process pools can
    run cells in any order with identical results.
    """
    cfg = RunConfig.from_dict(raw_cfg)
    schema, splits, encoder, table = _load_prepared(cfg)
    model, codec, sched = _load_model(cfg)
    synth, _ = _generate(
        cfg, schema, encoder, table, model, codec, sched, level, seed
    )
    return _evaluate_dataset(
        cfg, splits, encoder, schema, synth, {"level": level, "seed": seed}
    )


def cmd_sweep(cfg, jobs=1):
    if not os.path.exists(manifest_path(cfg)):
        cmd_prepare(cfg)
    if not os.path.exists(checkpoint_path(cfg)):
        cmd_train(cfg)
    pipeline = functools.partial(_sweep_task, cfg.raw)
    rows = tradeoff_sweep(
        pipeline, cfg.sweep_levels, cfg.seeds, weights=cfg.weights, jobs=jobs
    )
    lines = [f"# config_hash={cfg.hash}", ",".join(SWEEP_COLUMNS)]
    for row in rows:
        lines.append(
            ",".join(
                str(row[c]) if c in ("level", "seed_count") else repr(row[c])
                for c in SWEEP_COLUMNS
            )
        )
    csv_path = os.path.join(cfg.out_dir, "sweep.csv")
    atomic_write_text(csv_path, "\n".join(lines) + "\n")
    svg_path = os.path.join(cfg.out_dir, "sweep.svg")
    atomic_write_text(
        svg_path, f"<!-- config_hash={cfg.hash} -->\n" + sweep_svg(rows)
    )
    print(f"wrote {csv_path}")
    print(f"wrote {svg_path}")
    return [csv_path, svg_path]


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fairdiff",
        description="Fair synthetic tabular data via guided mixed-type diffusion",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("prepare", "parse, split, and encode the dataset; write the manifest"),
        ("train", "train the denoiser; write checkpoint and loss curve"),
        ("sample", "generate a synthetic CSV at the configured level"),
        ("evaluate", "score a synthetic CSV against the real splits"),
        ("sweep", "run levels 0..10 and write the trade-off table"),
    ):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True, help="path to the JSON config")
        sp.add_argument("--seed", type=int, help="override the seed list")
        sp.add_argument("--level", type=int, help="override the balancing level")
        sp.add_argument("--jobs", type=int, default=1, help="sweep parallelism")
        sp.add_argument("--out", help="override the output directory")
        sp.add_argument(
            "--set", action="append", default=[], metavar="KEY.PATH=VALUE",
            help="override any config key (dotted path, JSON value)",
        )
        if name == "evaluate":
            sp.add_argument("--synthetic", help="synthetic CSV to score")
    return parser


def _overrides_from_args(args):
    overrides = {}
    for expr in args.set:
        set_dotted(overrides, expr)
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    if args.level is not None:
        overrides["balancing_level"] = args.level
    if args.out is not None:
        overrides["out_dir"] = args.out
    return overrides


def main(argv=None):
    level_name = os.environ.get("FAIRDIFF_LOG", "error").lower()
    if level_name not in LOG_LEVELS:
        print(f"fairdiff: error: ValueError: unknown FAIRDIFF_LOG level "
              f"{level_name!r}", file=sys.stderr)
        return 2
    logging.basicConfig(level=LOG_LEVELS[level_name])
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config, overrides=_overrides_from_args(args))
        if args.command == "prepare":
            cmd_prepare(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "sample":
            cmd_sample(cfg)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, synth_csv=args.synthetic)
        elif args.command == "sweep":
            cmd_sweep(cfg, jobs=max(1, args.jobs))
    except Exception as exc:
        message = " ".join(str(exc).split())
        print(f"fairdiff: error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
