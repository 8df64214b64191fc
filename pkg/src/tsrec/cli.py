"""Command-line entry point: ``tsrec <subcommand> [--config F] [--seed N] [--out DIR] [--mode M]``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from tsrec.baselines import write_recommendations
from tsrec.errors import ConfigError, NumericalError, TsrecError
from tsrec.features import compute_features, hierarchical_cluster
from tsrec.harness import Pipeline, evaluate, load_config, sweep_batch, sweep_sequential, write_rows
from tsrec.panel import RelationGraph, generate_synthetic, load_panel, load_relations, write_panel_dir
from tsrec.recommender import load_model, save_model

logger = logging.getLogger("tsrec")

COMMANDS = ("synth", "ingest", "features", "label", "graphify", "train", "recommend", "evaluate",
            "sweep-seq", "sweep-batch")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_synth(cfg, out: Path) -> None:
    panel, graph, planted = generate_synthetic(cfg.synthetic_spec())
    write_panel_dir(out / "panel", panel, graph, seed=cfg.seed, extra_meta={"source": "synthetic"})
    _write_csv(out / "planted.csv", ["entity_id", "family"], sorted(planted.items()))


def cmd_ingest(cfg, out: Path) -> None:
    if not cfg.values_path:
        raise ConfigError("ingest needs values_path in the config")
    panel = load_panel(cfg.values_path, cfg.fill_limit)
    if cfg.relations_path:
        graph = load_relations(cfg.relations_path, panel)
    else:
        graph = RelationGraph(np.zeros((panel.n_entities, 0), dtype=np.uint8))
    graph.check_ratio()
    write_panel_dir(out / "panel", panel, graph, seed=cfg.seed, extra_meta={"source": cfg.values_path})


def cmd_features(cfg, out: Path) -> None:
    pipe = Pipeline(cfg, out)
    panel, _ = pipe.panel()
    clusters = hierarchical_cluster(panel.values)
    fs = compute_features(panel, clusters)
    _write_csv(out / "clusters.csv", ["entity_id", "cluster"],
               [(e, int(c)) for e, c in zip(panel.entities, clusters)])
    rows = []
    for i, entity in enumerate(panel.entities):
        for t in range(fs.warmup, panel.length):
            rows.append([entity, panel.dates[t], *(repr(float(v)) for v in fs.values[i, t])])
    _write_csv(out / "features.csv", ["entity_id", "date", *fs.names], rows)


def cmd_label(cfg, out: Path) -> None:
    pipe = Pipeline(cfg, out)
    pipe.labels().write_csv(out / "labels.csv")


def cmd_graphify(cfg, out: Path) -> None:
    pipe = Pipeline(cfg, out)
    emb = pipe.embedding()
    _write_csv(out / "embeddings.csv", ["entity_id", *(f"v{k}" for k in range(emb.dim))],
               [[e, *(repr(float(x)) for x in row)] for e, row in zip(emb.entities, emb.vectors)])


def _train_and_save(pipe: Pipeline, out: Path):
    train_ents, test_ents = pipe.split()
    _write_csv(out / "split.csv", ["entity_id", "role"],
               [(e, "train") for e in train_ents] + [(e, "test") for e in test_ents])
    try:
        model, _ = pipe.train_gnn()
    except NumericalError as exc:
        if getattr(exc, "model", None) is not None:
            save_model(exc.model, out / "model", {"diverged": True})
        raise
    save_model(model, out / "model", {"cutoff": pipe.cutoff()})
    _write_csv(out / "train_log.csv", ["epoch", "loss"],
               [(k, repr(v)) for k, v in enumerate(model.train_log)])
    return model


def _model(pipe: Pipeline, out: Path):
    """Reuse the checkpoint in ``out/model`` when it matches the config, else train."""
    ckpt = out / "model"
    if (ckpt / "model.meta.json").exists():
        model, meta = load_model(ckpt)
        if model.config == pipe.cfg.recommender_config() and not meta.get("diverged"):
            return model
    return _train_and_save(pipe, out)


def cmd_train(cfg, out: Path) -> None:
    _train_and_save(Pipeline(cfg, out), out)


def cmd_recommend(cfg, out: Path):
    pipe = Pipeline(cfg, out)
    model = _model(pipe, out) if "gnn" in cfg.selector_list else None
    recs, secs = pipe.recommend(model)
    for name, rec in recs.items():
        write_recommendations(out / f"recommendations_{name}.csv", rec)
    return pipe, recs, secs


def cmd_evaluate(cfg, out: Path) -> None:
    pipe, recs, secs = cmd_recommend(cfg, out)
    _, test_ents = pipe.split()
    report = evaluate(recs, pipe.labels(), test_ents, secs)
    report.write_csv(out / "report.csv")
    report.write_confusion(out / "confusion.csv")
    (out / "report.txt").write_text(report.summary())
    print(report.summary(), end="")


def cmd_sweep_seq(cfg, out: Path) -> None:
    rows = sweep_sequential(Pipeline(cfg, out), cfg.int_list(cfg.seq_sizes))
    write_rows(out / "sweep_seq.csv", rows)


def cmd_sweep_batch(cfg, out: Path) -> None:
    rows = sweep_batch(Pipeline(cfg, out), cfg.int_list(cfg.batch_sizes))
    write_rows(out / "sweep_batch.csv", rows)


HANDLERS = {
    "synth": cmd_synth, "ingest": cmd_ingest, "features": cmd_features, "label": cmd_label,
    "graphify": cmd_graphify, "train": cmd_train, "recommend": cmd_recommend,
    "evaluate": cmd_evaluate, "sweep-seq": cmd_sweep_seq, "sweep-batch": cmd_sweep_batch,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsrec", description="Forecasting-model recommendation pipeline.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="flat key=value configuration file")
    parser.add_argument("--seed", type=int, help="global seed (overrides the config)")
    parser.add_argument("--out", default="tsrec_out", help="output directory (default: tsrec_out)")
    parser.add_argument("--mode", choices=("explicit", "implicit"), help="relation-strength mode")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be a non-negative integer")
        mode = args.mode.capitalize() if args.mode else None
        cfg = load_config(args.config, seed=args.seed, mode=mode)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        HANDLERS[args.command](cfg, out)
    except TsrecError as exc:
        print(f"tsrec {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
