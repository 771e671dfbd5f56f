"""Command-line front end: training, evaluation, and the experiment drivers
(cross-domain tables, layer sweeps, length buckets, MI bounds, oracle runs).

Every emitted artifact embeds the seed, a config echo, the input manifests,
and the tool version, so a rerun with identical inputs reproduces the
artifact. Reports are plain JSON/CSV files; plotting is out of scope.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import (
    BoundConfig,
    EMPIRICAL_ENTROPY,
    UNIFORM_PRIOR,
    bound_report,
    empirical_token_entropy,
    estimate_delta,
)
from .corpus import (
    DEFAULT_BUCKET_EDGES,
    Dump,
    bucket_by_length,
    load_dump,
    manifest_path,
    validate_dump,
)
from .metrics import score_corpus
from .oracle import verify_bounds
from .probe import (
    TrainConfig,
    TrainingDiverged,
    load_probe,
    predict_tokens,
    probe_meta_path,
    recoverability,
    save_probe,
    train_probe,
)


class CliError(Exception):
    """User-facing failure; message goes to stderr, exit code 1."""


@dataclasses.dataclass
class RunSpec:
    """Resolved invocation: subcommand, inputs, outputs, and knobs."""

    subcommand: str
    dumps: list
    probe: str | None
    out: str | None
    fmt: str
    seed: int
    bound: BoundConfig
    train: TrainConfig
    buckets: tuple
    trials: int = 0
    p_rec: float | None = None
    vocab_size: int | None = None
    empirical_entropy: float | None = None
    delta_order: str | None = None

    def config_echo(self) -> dict:
        return {
            "format": self.fmt,
            "seed": self.seed,
            "bound": dataclasses.asdict(self.bound),
            "train": self.train.to_dict(),
            "buckets": list(self.buckets),
            "trials": self.trials,
            "p_rec": self.p_rec,
            "vocab_size": self.vocab_size,
            "empirical_entropy": self.empirical_entropy,
            "delta_order": self.delta_order,
        }


def _input_manifests(spec: RunSpec) -> dict:
    out = {}
    for path in spec.dumps:
        mpath = manifest_path(path)
        out[str(path)] = json.loads(mpath.read_text()) if mpath.exists() else None
    if spec.probe:
        meta = probe_meta_path(spec.probe)
        out[str(spec.probe)] = json.loads(meta.read_text()) if meta.exists() else None
    return out


def _envelope(spec: RunSpec, result: dict) -> dict:
    return {
        "tool": "miprobe",
        "tool_version": __version__,
        "subcommand": spec.subcommand,
        "seed": spec.seed,
        "config": spec.config_echo(),
        "inputs": _input_manifests(spec),
        "result": result,
    }


def _table_to_csv(table: list[dict]) -> str:
    buf = io.StringIO()
    if not table:
        return ""
    cols = list(table[0].keys())
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for row in table:
        writer.writerow([_csv_cell(row.get(c)) for c in cols])
    return buf.getvalue()


def _csv_cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)  # repr round-trips float64 exactly
    return value


def _emit(spec: RunSpec, result: dict, table: list[dict] | None = None) -> None:
    """Write the artifact to --out (or stdout): JSON envelope, or the bare
    table as CSV when --format csv."""
    if spec.fmt == "csv" and table is not None:
        text = _table_to_csv(table)
    else:
        text = json.dumps(_envelope(spec, result), indent=2) + "\n"
    if spec.out:
        Path(spec.out).write_text(text)
    else:
        sys.stdout.write(text)


def _load_dump_checked(path) -> Dump:
    path = Path(path)
    if not path.exists():
        raise CliError(f"dump not found: {path}")
    return load_dump(path)


def _load_probe_checked(spec: RunSpec):
    if not spec.probe:
        raise CliError("this subcommand needs --probe")
    path = Path(spec.probe)
    if not path.exists():
        raise CliError(f"probe not found: {path}")
    return load_probe(path)


def _check_shapes(probe, dump: Dump, probe_path, dump_path) -> None:
    if probe.d != dump.header.embedding_dim or probe.vocab_size != dump.header.vocab_size:
        probe_src = probe.trained_on.to_dict() if probe.trained_on else str(probe_path)
        dump_src = dump.manifest.to_dict() if dump.manifest else str(dump_path)
        raise CliError(
            f"probe/dump shape mismatch: probe (|V|={probe.vocab_size}, d={probe.d}) "
            f"from {probe_src} vs dump (|V|={dump.header.vocab_size}, "
            f"d={dump.header.embedding_dim}) from {dump_src}"
        )


def _eval_rows(probe, dump: Dump, spec: RunSpec):
    """Shared evaluation: predictions, metrics, recoverability, MI bound."""
    preds = [predict_tokens(probe, rec.embeddings) for rec in dump.records]
    refs = [rec.tokens for rec in dump.records]
    metric_report = score_corpus(zip(preds, refs))
    recov = recoverability(probe, dump.records)
    h_emp = spec.empirical_entropy
    if spec.bound.variant == EMPIRICAL_ENTROPY and h_emp is None:
        h_emp = empirical_token_entropy(dump.records, spec.bound.log_base)
    delta = None
    extra = []
    if spec.delta_order:
        delta, caveat = estimate_delta(dump.records, spec.delta_order,
                                       spec.bound.log_base)
        extra.append(caveat)
    mi = bound_report(recov, dump.header.vocab_size, spec.bound,
                      delta=delta, empirical_entropy=h_emp, extra_caveats=extra)
    return metric_report, recov, mi


def run_train(spec: RunSpec) -> int:
    """train-probe: fit on one dump, write the probe file and its TrainReport."""
    if len(spec.dumps) != 1:
        raise CliError("train-probe takes exactly one --dump")
    if not spec.out:
        raise CliError("train-probe needs --out for the probe file")
    dump = _load_dump_checked(spec.dumps[0])
    try:
        probe, report = train_probe(dump, spec.train)
    except TrainingDiverged as exc:
        raise CliError(str(exc)) from exc
    save_probe(probe, spec.out, train_config=spec.train, tool_version=__version__)
    report_payload = _envelope(spec, {"train_report": report.to_dict()})
    report_path = Path(str(spec.out) + ".train_report.json")
    report_path.write_text(json.dumps(report_payload, indent=2) + "\n")
    print(f"probe -> {spec.out}; report -> {report_path}")
    return 0


def run_eval(spec: RunSpec) -> int:
    """eval-probe: metrics + recoverability + MI bound on one dump."""
    if len(spec.dumps) != 1:
        raise CliError("eval-probe takes exactly one --dump")
    probe = _load_probe_checked(spec)
    dump = _load_dump_checked(spec.dumps[0])
    _check_shapes(probe, dump, spec.probe, spec.dumps[0])
    metric_report, recov, mi = _eval_rows(probe, dump, spec)
    table = []
    for entry, acc in zip(metric_report.per_sentence, recov.per_sentence):
        table.append({**entry, "accuracy": acc})
    agg = {"sentence": "aggregate", **{k: v for k, v in
           metric_report.metric_values().items()}, "accuracy": recov.p_rec}
    table.append(agg)
    result = {
        "metrics": metric_report.to_dict(include_per_sentence=False),
        "recoverability": recov.to_dict(),
        "mi_bound": mi.to_dict(),
        "table": table,
    }
    _emit(spec, result, table)
    return 0


def run_domain_report(spec: RunSpec) -> int:
    """domain-report: one probe evaluated across domain dumps, one row each,
    with best-per-column flags."""
    if not spec.dumps:
        raise CliError("no inputs: domain-report needs at least one --dump")
    probe = _load_probe_checked(spec)
    table = []
    for dump_path in spec.dumps:
        dump = _load_dump_checked(dump_path)
        _check_shapes(probe, dump, spec.probe, dump_path)
        metric_report, recov, mi = _eval_rows(probe, dump, spec)
        tag = dump.manifest.domain_tag if dump.manifest else Path(dump_path).stem
        table.append({
            "domain": tag,
            "dump": str(dump_path),
            "n_sentences": metric_report.n_sentences,
            **metric_report.metric_values(),
            "p_rec": recov.p_rec,
            "token_mi_bound": mi.token_bound,
        })
    score_cols = [c for c in table[0]
                  if c not in ("domain", "dump", "n_sentences")]
    best = {c: max(row[c] for row in table) for c in score_cols}
    for row in table:
        row["best_in"] = ",".join(c for c in score_cols if row[c] == best[c])
    _emit(spec, {"table": table}, table)
    return 0


def run_layer_sweep(spec: RunSpec) -> int:
    """layer-sweep: retrain one probe per layer dump (same config and seed)
    and chart held-out metrics against normalized depth."""
    if not spec.dumps:
        raise CliError("no inputs: layer-sweep needs at least one --dump")
    dumps = [_load_dump_checked(p) for p in spec.dumps]
    manifests = [d.manifest for d in dumps if d.manifest is not None]
    if manifests:
        models = {m.model_name for m in manifests}
        domains = {m.domain_tag for m in manifests}
        if len(models) > 1 or len(domains) > 1:
            raise CliError(
                f"inconsistent manifests across layer dumps: models={sorted(models)}, "
                f"domains={sorted(domains)}"
            )
    layers = [d.header.layer for d in dumps]
    if len(set(layers)) != len(layers):
        raise CliError(f"duplicate layers in sweep: {layers}")
    order = np.argsort(layers)
    max_layer = max(layers)
    table = []
    for idx in order:
        dump, path = dumps[idx], spec.dumps[idx]
        try:
            probe, report = train_probe(dump, spec.train)
        except TrainingDiverged as exc:
            raise CliError(f"{path}: {exc}") from exc
        # held-out evaluation on the same validation split the trainer used
        rng = np.random.default_rng(spec.train.seed)
        split = rng.permutation(len(dump.records))
        n_val = int(round(spec.train.validation_fraction * len(dump.records)))
        if spec.train.validation_fraction > 0 and n_val == 0 and len(dump.records) > 1:
            n_val = 1
        eval_records = [dump.records[i] for i in split[:n_val]] or dump.records
        eval_dump = Dump(header=dump.header, records=eval_records, manifest=dump.manifest)
        metric_report, recov, mi = _eval_rows(probe, eval_dump, spec)
        table.append({
            "layer": int(dump.header.layer),
            "normalized_depth": dump.header.layer / max_layer if max_layer else 0.0,
            "n_eval_sentences": len(eval_records),
            **metric_report.metric_values(),
            "p_rec": recov.p_rec,
            "token_mi_bound": mi.token_bound,
            "train_epochs_run": len(report.epoch_mean_loss),
        })
    _emit(spec, {"table": table}, table)
    return 0


def run_length_report(spec: RunSpec) -> int:
    """length-report: per-length-bucket metrics for one probe on one dump."""
    if len(spec.dumps) != 1:
        raise CliError("length-report takes exactly one --dump")
    probe = _load_probe_checked(spec)
    dump = _load_dump_checked(spec.dumps[0])
    _check_shapes(probe, dump, spec.probe, spec.dumps[0])
    buckets = bucket_by_length(dump.records, spec.buckets)
    table = []
    for label, records in buckets.items():
        row = {"bucket": label, "n_sentences": len(records)}
        if records:
            sub = Dump(header=dump.header, records=records, manifest=dump.manifest)
            metric_report, recov, mi = _eval_rows(probe, sub, spec)
            row.update(metric_report.metric_values())
            row["p_rec"] = recov.p_rec
            row["token_mi_bound"] = mi.token_bound
        else:
            row["note"] = "empty bucket"
        table.append(row)
    # pad rows to a common column set so the CSV stays rectangular
    cols = {k for row in table for k in row}
    for row in table:
        for c in cols:
            row.setdefault(c, None)
    _emit(spec, {"table": table}, table)
    return 0


def run_mi_bound(spec: RunSpec) -> int:
    """mi-bound: convert recoverability into MI bounds, either from explicit
    --p-rec/--vocab-size or from a probe evaluated on a dump."""
    if spec.p_rec is not None:
        if spec.vocab_size is None:
            raise CliError("--p-rec needs --vocab-size")
        h_emp = spec.empirical_entropy
        delta = None
        extra = []
        if spec.dumps:
            dump = _load_dump_checked(spec.dumps[0])
            if spec.bound.variant == EMPIRICAL_ENTROPY and h_emp is None:
                h_emp = empirical_token_entropy(dump.records, spec.bound.log_base)
            if spec.delta_order:
                delta, caveat = estimate_delta(dump.records, spec.delta_order,
                                               spec.bound.log_base)
                extra.append(caveat)

        @dataclasses.dataclass
        class _Given:
            p_rec: float
            total_positions: int = 1
            n_sentences: int = 1

        mi = bound_report(_Given(p_rec=spec.p_rec), spec.vocab_size, spec.bound,
                          delta=delta, empirical_entropy=h_emp, extra_caveats=extra)
    else:
        if len(spec.dumps) != 1:
            raise CliError("mi-bound needs --p-rec/--vocab-size or --probe with one --dump")
        probe = _load_probe_checked(spec)
        dump = _load_dump_checked(spec.dumps[0])
        _check_shapes(probe, dump, spec.probe, spec.dumps[0])
        _, _, mi = _eval_rows(probe, dump, spec)
    result = {"mi_bound": mi.to_dict()}
    _emit(spec, result, [mi.to_dict()])
    return 0


def run_oracle_verify(spec: RunSpec) -> int:
    """oracle-verify: randomized exact inequality checks; exit 0 iff clean."""
    if spec.trials < 1:
        raise CliError("--trials must be >= 1")
    report = verify_bounds(spec.seed, spec.trials)
    _emit(spec, {"verification": report.to_dict()})
    if not report.passed:
        print(f"{len(report.failures)} failures in {spec.trials} trials",
              file=sys.stderr)
        return 1
    return 0


def run_validate_dump(spec: RunSpec) -> int:
    """validate-dump: invariant scan; exit 0 iff every dump passes."""
    if not spec.dumps:
        raise CliError("validate-dump needs at least one --dump")
    results = {}
    ok = True
    for path in spec.dumps:
        if not Path(path).exists():
            raise CliError(f"dump not found: {path}")
        report = validate_dump(path)
        results[str(path)] = report.to_dict()
        ok = ok and report.passed
    _emit(spec, {"validation": results})
    return 0 if ok else 1


_RUNNERS = {
    "train-probe": run_train,
    "eval-probe": run_eval,
    "domain-report": run_domain_report,
    "layer-sweep": run_layer_sweep,
    "length-report": run_length_report,
    "mi-bound": run_mi_bound,
    "oracle-verify": run_oracle_verify,
    "validate-dump": run_validate_dump,
}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dump", action="append", default=[],
                        help="input dump path (repeatable)")
    parser.add_argument("--probe", help="probe file path")
    parser.add_argument("--out", help="output artifact path (default: stdout)")
    parser.add_argument("--format", choices=["json", "csv"], default="json")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--log-base", choices=["nat", "bit"], default="nat")
    parser.add_argument("--bound-variant", choices=["uniform", "empirical"],
                        default="uniform")
    parser.add_argument("--include-vocab-gap", action="store_true",
                        help="add the exact log|V|-log(|V|-1) remainder to the bound")
    parser.add_argument("--buckets",
                        default=",".join(str(e) for e in DEFAULT_BUCKET_EDGES),
                        help="comma-separated ascending length-bucket edges")
    parser.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    parser.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    parser.add_argument("--batch", type=int, default=TrainConfig.batch_size)
    parser.add_argument("--val-fraction", type=float,
                        default=TrainConfig.validation_fraction)
    parser.add_argument("--optimizer", choices=["adam", "sgd"],
                        default=TrainConfig.optimizer)
    parser.add_argument("--weight-init", choices=["zeros", "scaled_gaussian"],
                        default=TrainConfig.weight_init)
    parser.add_argument("--patience", type=int,
                        default=TrainConfig.early_stop_patience)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="miprobe",
        description="Token-recoverability probing with MI lower bounds",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, runner in _RUNNERS.items():
        p = sub.add_parser(name, help=runner.__doc__)
        _add_common(p)
        if name == "oracle-verify":
            p.add_argument("--trials", type=int, default=1000)
        if name == "mi-bound":
            p.add_argument("--p-rec", type=float)
            p.add_argument("--vocab-size", type=int)
            p.add_argument("--empirical-entropy", type=float,
                           help="corpus token entropy for the empirical variant")
        if name in ("eval-probe", "mi-bound", "domain-report", "length-report"):
            p.add_argument("--estimate-delta", choices=["unigram", "bigram_markov"],
                           help="plug-in delta estimate to enable the sentence bound")
    return parser


def _spec_from_args(args: argparse.Namespace) -> RunSpec:
    try:
        buckets = tuple(int(x) for x in str(args.buckets).split(",") if x != "")
    except ValueError as exc:
        raise CliError(f"bad --buckets value {args.buckets!r}") from exc
    variant = UNIFORM_PRIOR if args.bound_variant == "uniform" else EMPIRICAL_ENTROPY
    bound = BoundConfig(log_base=args.log_base, variant=variant,
                        include_vocab_gap_term=args.include_vocab_gap)
    train = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        optimizer=args.optimizer,
        seed=args.seed,
        weight_init=args.weight_init,
        early_stop_patience=args.patience,
        validation_fraction=args.val_fraction,
    )
    return RunSpec(
        subcommand=args.subcommand,
        dumps=list(args.dump),
        probe=args.probe,
        out=args.out,
        fmt=args.format,
        seed=args.seed,
        bound=bound,
        train=train,
        buckets=buckets,
        trials=getattr(args, "trials", 0),
        p_rec=getattr(args, "p_rec", None),
        vocab_size=getattr(args, "vocab_size", None),
        empirical_entropy=getattr(args, "empirical_entropy", None),
        delta_order=getattr(args, "estimate_delta", None),
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = _spec_from_args(args)
        return _RUNNERS[args.subcommand](spec)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
