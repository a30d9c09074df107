"""Command-line entry point: ``bandit-rank <command> --config <path> --seed <n>``.

Artifacts go under the configured output directory (override with the
``BANDIT_RANK_OUT_DIR`` environment variable)::

    logs/{train,valid,test}.jsonl
    checkpoints/<label>.brnk
    reports/<label>_loss.tsv, reports/<label>_<split>_metrics.json, reports/compare.tsv
    figures/<label>_training.png, figures/compare.png

Every artifact header carries the effective config and its hash.
"""
from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
from pathlib import Path

from .config import RunConfig, load_config
from .evaluation import MetricsReport, evaluate_model, relative_report
from .eventlog import dataset_from_records, read_event_log, write_event_log
from .models import BASELINES

log = logging.getLogger("bandit_rank")

METRICS = ("mse", "mae", "ndcg_at_5")


class CliError(RuntimeError):
    pass


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig().validate()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _provenance(cfg: RunConfig, **extra) -> dict:
    return {"config": cfg.to_dict(), "config_hash": cfg.hash(), **extra}


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _write_tsv(path: Path, cfg: RunConfig, columns, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# config_hash={cfg.hash()}", f"# config={cfg.to_json()}", "\t".join(columns)]
    for row in rows:
        lines.append("\t".join("" if v is None else (f"{v:.6g}" if isinstance(v, float) else str(v)) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _load_split(cfg: RunConfig, store, split: str):
    path = cfg.out_dir / "logs" / f"{split}.jsonl"
    if not path.exists():
        raise CliError(f"missing {path}; run `simulate` first")
    header, records = read_event_log(path)
    if header is None or header.get("config_hash") != cfg.hash():
        log.warning("%s was written under a different config (hash %s, current %s)",
                    path, header and header.get("config_hash"), cfg.hash())
    return dataset_from_records(records, store)


def _environment(cfg: RunConfig):
    from .experiment import build_environment, build_store

    env = build_environment(cfg)
    return env, build_store(cfg, env)


def cmd_simulate(cfg: RunConfig, args) -> int:
    from .experiment import simulate_logs

    env, _ = _environment(cfg)
    logs = simulate_logs(cfg, env)
    for split, records in logs.items():
        path = cfg.out_dir / "logs" / f"{split}.jsonl"
        write_event_log(path, records, _provenance(cfg, split=split, policy="uniform"))
        n_click = sum(r["clicked"] for r in records)
        print(f"{split}\t{path}\tslots={len(records)}\tclicks={n_click}")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    from .checkpoint import save_checkpoint
    from .experiment import fit, make_model
    from .plotting import plot_training

    if args.model:
        kind, features = BASELINES[args.model]
        label = args.model
    else:
        kind, features = cfg.model.kind, cfg.model.features
        label = f"{kind}_{features}"
    env, store = _environment(cfg)
    train_ds, valid_ds = _load_split(cfg, store, "train"), _load_split(cfg, store, "valid")
    model = make_model(cfg, kind, features)
    result = fit(cfg, model, train_ds, valid_ds)
    ckpt = cfg.out_dir / "checkpoints" / f"{label}.brnk"
    save_checkpoint(result.model, ckpt, cfg.to_dict(), cfg.hash(), version_tag=label)
    trace = result.train
    rows = [(e + 1, trace.loss_trace[e], trace.val_trace[e] if e < len(trace.val_trace) else None)
            for e in range(len(trace.loss_trace))]
    report = cfg.out_dir / "reports" / f"{label}_loss.tsv"
    _write_tsv(report, cfg, ("epoch", "train_mse", "valid_ndcg_at_5"), rows)
    plot_training(trace.loss_trace, trace.val_trace, cfg.out_dir / "figures" / f"{label}_training.png", label)
    print(f"checkpoint\t{ckpt}\nloss_trace\t{report}\nbest_epoch\t{result.best_epoch + 1}")
    return 0


def _evaluate_checkpoint(cfg: RunConfig, store, path: Path, split: str) -> MetricsReport:
    from .checkpoint import load_checkpoint

    model, header = load_checkpoint(path)
    if header.get("config_hash") not in (None, cfg.hash()):
        log.warning("%s was trained under config %s, evaluating under %s", path, header["config_hash"], cfg.hash())
    return evaluate_model(model, _load_split(cfg, store, split))


def cmd_evaluate(cfg: RunConfig, args) -> int:
    _, store = _environment(cfg)
    path = Path(args.checkpoint)
    report = _evaluate_checkpoint(cfg, store, path, args.split)
    out = cfg.out_dir / "reports" / f"{path.stem}_{args.split}_metrics.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(_dump({**_provenance(cfg, checkpoint=path.name, split=args.split), "metrics": report.to_dict()})
                   + "\n")
    print(report.to_text())
    return 0


def cmd_compare(cfg: RunConfig, args) -> int:
    from .plotting import plot_relative

    _, store = _environment(cfg)
    paths = [Path(p) for p in args.checkpoints]
    labels = [p.stem for p in paths]
    if len(set(labels)) != len(labels):
        raise CliError("checkpoint names must be distinct")
    baseline = args.baseline or labels[0]
    if baseline not in labels:
        raise CliError(f"baseline {baseline!r} is not among the checkpoints {labels}")
    reports = {lab: _evaluate_checkpoint(cfg, store, p, args.split) for lab, p in zip(labels, paths)}
    deltas = {lab: relative_report(r, reports[baseline]) for lab, r in reports.items()}
    columns = ("model", *METRICS, *(f"delta_{m}_pct" for m in METRICS))
    rows = [(lab, *(getattr(reports[lab], m) for m in METRICS), *(deltas[lab][m] for m in METRICS))
            for lab in labels]
    out = cfg.out_dir / "reports" / "compare.tsv"
    _write_tsv(out, cfg, columns, rows)
    plot_relative(deltas, cfg.out_dir / "figures" / "compare.png", baseline)
    print("\t".join(columns))
    for row in rows:
        print("\t".join("" if v is None else (f"{v:+.2f}" if i > 3 else (f"{v:.4f}" if i else v))
                        for i, v in enumerate(row)))
    return 0


def cmd_rank(cfg: RunConfig, args) -> int:
    from .service import RankService, ServiceError, snapshot_from_checkpoint

    text = sys.stdin.read() if args.request == "-" else Path(args.request).read_text()
    try:
        body = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(f"request is not valid JSON: {exc.msg}") from None
    service = RankService(snapshot_from_checkpoint(args.checkpoint, cfg if args.config else None))
    try:
        print(json.dumps(service.rank(body), sort_keys=True, indent=2))
    except ServiceError as exc:
        raise CliError(f"{exc.status}: {exc}") from None
    return 0


def cmd_serve(cfg: RunConfig, args) -> int:
    from .service import RankService, make_server, snapshot_from_checkpoint

    override = cfg if args.config else None

    def reload(path=None):
        return snapshot_from_checkpoint(path or args.checkpoint, override)

    service = RankService(reload())
    server = make_server(service, args.host, args.port, reload)
    if hasattr(signal, "SIGHUP"):
        signal.signal(signal.SIGHUP, lambda *_: service.swap(reload()))
    host, port = server.server_address[:2]
    print(f"serving snapshot {service.snapshot.version} on http://{host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "rank": cmd_rank,
    "serve": cmd_serve,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (defaults built in)")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="bandit-rank", description="Neural-bandit content ranking experiments.")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")
    sub.add_parser("simulate", parents=[common], help="write train/valid/test event logs")
    t = sub.add_parser("train", parents=[common], help="train a model on the simulated logs")
    t.add_argument("--model", choices=sorted(BASELINES), help="named model (defaults to config model)")
    e = sub.add_parser("evaluate", parents=[common], help="score a checkpoint on a log split")
    e.add_argument("checkpoint")
    e.add_argument("--split", default="test", choices=("train", "valid", "test"))
    c = sub.add_parser("compare", parents=[common], help="relative report of checkpoints against a baseline")
    c.add_argument("checkpoints", nargs="+")
    c.add_argument("--baseline", help="checkpoint name (file stem) used as baseline; default: first")
    c.add_argument("--split", default="test", choices=("train", "valid", "test"))
    r = sub.add_parser("rank", parents=[common], help="rank one JSON request against a checkpoint")
    r.add_argument("checkpoint")
    r.add_argument("--request", default="-", help="request JSON file, or - for stdin")
    s = sub.add_parser("serve", parents=[common], help="serve POST /rank over HTTP")
    s.add_argument("checkpoint")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8080)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)  # usage errors exit with status 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return COMMANDS[args.command](cfg, args)
    except Exception as exc:  # runtime failure: one line, exit 1
        if args.verbose:
            log.exception("command failed")
        print(f"bandit-rank {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
