"""Command-line driver: ``fedkge synth | train | eval | inspect-weights``."""
from __future__ import annotations

import argparse
import csv
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, read_manifest, save_checkpoint
from .config import ExperimentConfig, TrainingConfig, format_experiment, parse_pairs, read_pairs
from .errors import CheckpointError, ConfigError, DatasetError, FedKGEError, InvalidInputError
from .evaluation import MetricReport
from .federation import evaluate_stores, prepare_dataset, run
from .kg import load_dataset, save_dataset
from .relation_graph import STRATEGIES, compute_weights
from .synth import SynthSpec, generate_synthetic


ROUND_COLUMNS = ("round", "client", "selected", "mrr", "hits1", "hits5", "hits10", "weighted_mrr", "seconds")

EXIT_CONFIG = 2
EXIT_CHECKPOINT = 3
EXIT_RUNTIME = 1


def _is_empty_dir(path: Path) -> bool:
    return not path.exists() or (path.is_dir() and not any(path.iterdir()))


class OutputDir:
    """Output directory that is removed again if the command fails."""

    def __init__(self, path, force=False):
        self.path = Path(path)
        if not _is_empty_dir(self.path):
            if not force:
                raise ConfigError(f"{self.path} is not empty; pass --force to overwrite")
        self.force = force

    def __enter__(self):
        if self.force and self.path.exists():
            shutil.rmtree(self.path)
        self.existed = self.path.exists()
        self.path.mkdir(parents=True, exist_ok=True)
        return self.path

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            if self.existed:
                for child in self.path.iterdir():
                    shutil.rmtree(child) if child.is_dir() else child.unlink()
            else:
                shutil.rmtree(self.path, ignore_errors=True)
        return False


def _fmt(x) -> str:
    return "" if x is None else f"{x:.6f}"


def _report_line(name: str, rep: MetricReport) -> str:
    return (f"{name} mrr={rep.mrr:.6f} hits1={rep.hits1:.6f} hits5={rep.hits5:.6f} "
            f"hits10={rep.hits10:.6f} count={rep.count}")


def format_reports(reports: dict[int, MetricReport], overall: MetricReport, split: str) -> str:
    lines = [f"split={split}"]
    lines += [_report_line(f"client_{c}", reports[c]) for c in sorted(reports)]
    lines.append(_report_line("weighted", overall))
    return "\n".join(lines) + "\n"


def write_rounds(path: Path, records, n_clients: int, wallclock: bool):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROUND_COLUMNS)
        for rec in records:
            for c in range(n_clients):
                m = rec.client_metrics.get(c)
                w.writerow([
                    rec.round, c, int(c in rec.selected),
                    *(("",) * 4 if m is None else (_fmt(m.mrr), _fmt(m.hits1), _fmt(m.hits5), _fmt(m.hits10))),
                    _fmt(rec.weighted_mrr),
                    f"{rec.seconds:.3f}" if wallclock else "",
                ])


def build_experiment(args) -> ExperimentConfig:
    pairs = read_pairs(args.config) if getattr(args, "config", None) else {}
    flags = {
        "dataset": args.dataset, "out": args.out, "mode": args.mode, "scorer": args.scorer,
        "strategy": args.strategy, "seed": args.seed, "max_rounds": args.rounds,
        "eval_every": args.eval_every,
    }
    pairs.update({k: str(v) for k, v in flags.items() if v is not None})
    if args.raw:
        pairs["raw_eval"] = "true"
    for item in args.set or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        pairs[key.strip()] = value.strip()
    exp = parse_pairs(pairs)
    if not exp.dataset:
        raise ConfigError("no dataset given (use --dataset or dataset= in the config file)")
    if not exp.out:
        raise ConfigError("no output directory given (use --out or out= in the config file)")
    return exp


def cmd_synth(args) -> int:
    spec = SynthSpec(
        n_clients=args.clients, n_entities=args.entities, n_relations=args.relations,
        n_triples=args.triples, overlap=args.overlap, latent_dim=args.latent_dim,
        heterogeneity=args.heterogeneity, relation_scale=args.relation_scale,
        temperature=args.temperature,
        groups=tuple(int(g) for g in args.groups.split(",")) if args.groups else None,
    )
    spec.validate()
    dataset = generate_synthetic(spec, args.seed)
    with OutputDir(args.out, args.force) as out:
        save_dataset(dataset, out)
    print(f"wrote {dataset.n_clients} clients, {dataset.registry.n_global} entities to {args.out}")
    return 0


def cmd_train(args) -> int:
    exp = build_experiment(args)
    dataset = load_dataset(exp.dataset)
    cfg = exp.training.resolved()
    exp.training = cfg
    with OutputDir(exp.out, args.force) as out:
        (out / "manifest.txt").write_text(format_experiment(exp), encoding="utf-8")

        def dump(t, supplements, W):
            if exp.dump_weights:
                np.savetxt(out / f"weights_round_{t}.csv", W, delimiter=",", fmt="%.17g")

        result = run(dataset, cfg, on_server_update=dump)
        write_rounds(out / "rounds.csv", result.log, result.dataset.n_clients, exp.log_wallclock)
        save_checkpoint(result.checkpoint, result.dataset, cfg, out / "checkpoint")
        reports, overall = evaluate_stores(result.dataset, result.stores, "test", raw=cfg.raw_eval)
        text = format_reports(reports, overall, "test")
        (out / "final_metrics.txt").write_text(
            f"checkpoint_round={result.checkpoint.round}\nstopped_early={str(result.stopped_early).lower()}\n" + text,
            encoding="utf-8")
    sys.stdout.write(text)
    return 0


def _run_context(args):
    """Dataset path, training config and checkpoint dir for eval/inspect."""
    if args.run:
        run_dir = Path(args.run)
        exp = parse_pairs(read_pairs(run_dir / "manifest.txt"))
        return args.dataset or exp.dataset, exp.training, Path(args.checkpoint or run_dir / "checkpoint")
    if not (args.checkpoint and args.dataset):
        raise ConfigError("give --run, or both --checkpoint and --dataset")
    return args.dataset, None, Path(args.checkpoint)


def cmd_eval(args) -> int:
    dataset_path, cfg, ckpt_dir = _run_context(args)
    dataset = load_dataset(dataset_path)
    meta = read_manifest(ckpt_dir)
    if meta.get("mode") == "collective":
        dataset = prepare_dataset(dataset, TrainingConfig(mode="collective"))
    ckpt = load_checkpoint(ckpt_dir, dataset)
    raw = args.raw or (cfg.raw_eval if cfg is not None else False)
    reports, overall = evaluate_stores(dataset, ckpt.stores, args.split, raw=raw)
    text = f"checkpoint_round={ckpt.round}\n" + format_reports(reports, overall, args.split)
    sys.stdout.write(text)
    target = Path(args.output) if args.output else (Path(args.run) / f"eval_{args.split}.txt" if args.run else None)
    if target is not None:
        target.write_text(text, encoding="utf-8")
    return 0


def cmd_inspect_weights(args) -> int:
    if args.strategy == "embedding" or args.run or args.checkpoint:
        dataset_path, cfg, ckpt_dir = _run_context(args)
        dataset = load_dataset(dataset_path)
        mats = [s.entity for s in load_checkpoint(ckpt_dir, dataset).stores]
        strategy = args.strategy or (cfg.resolved().strategy if cfg is not None else None) or "embedding"
        reduce = cfg.weight_reduce if cfg is not None else "sum"
    else:
        if not args.dataset:
            raise ConfigError("--dataset is required")
        dataset, mats, strategy, reduce = load_dataset(args.dataset), None, args.strategy or "ratio", "sum"
    W = compute_weights(strategy, dataset.registry, mats, reduce)
    np.savetxt(sys.stdout, W, delimiter=",", fmt="%.6f")
    return 0


def _add_run_flags(p):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--dataset", help="dataset directory with client_<c>/{train,valid,test}.tsv")
    p.add_argument("--out", help="output directory (must be empty unless --force)")
    p.add_argument("--mode", help="personalized-embedding, personalized-ratio, fedavg, single, collective")
    p.add_argument("--scorer", choices=("TransE", "RotatE", "ComplEx"))
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--seed", type=int)
    p.add_argument("--rounds", type=int, help="maximum number of rounds")
    p.add_argument("--eval-every", type=int)
    p.add_argument("--raw", action="store_true", help="unfiltered ranking")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--force", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedkge", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic federated dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    d = SynthSpec()
    p.add_argument("--clients", type=int, default=d.n_clients)
    p.add_argument("--entities", type=int, default=d.n_entities, help="entities per client")
    p.add_argument("--relations", type=int, default=d.n_relations, help="relations per client")
    p.add_argument("--triples", type=int, default=d.n_triples, help="triples per client, all splits")
    p.add_argument("--overlap", type=float, default=d.overlap)
    p.add_argument("--latent-dim", type=int, default=d.latent_dim)
    p.add_argument("--heterogeneity", type=float, default=d.heterogeneity)
    p.add_argument("--relation-scale", type=float, default=d.relation_scale)
    p.add_argument("--temperature", type=float, default=d.temperature)
    p.add_argument("--groups", help="comma-separated group label per client, e.g. 0,0,1")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train and write rounds.csv, checkpoint/ and final_metrics.txt")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    for name, func, text in (("eval", cmd_eval, "evaluate a checkpoint"),
                             ("inspect-weights", cmd_inspect_weights, "print the client weight matrix")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--run", help="run directory written by train")
        p.add_argument("--checkpoint", help="checkpoint directory (default: <run>/checkpoint)")
        p.add_argument("--dataset", help="dataset directory (default: from the run manifest)")
        if name == "eval":
            p.add_argument("--split", choices=("train", "valid", "test"), default="test")
            p.add_argument("--raw", action="store_true", help="unfiltered ranking")
            p.add_argument("--output", help="also write the report here (default: <run>/eval_<split>.txt)")
        else:
            p.add_argument("--strategy", choices=STRATEGIES)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InvalidInputError, DatasetError) as exc:
        print(f"fedkge: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"fedkge: checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except FedKGEError as exc:
        print(f"fedkge: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
