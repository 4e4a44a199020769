"""Command-line entry point: ``penguin <command> ...``.

Exit codes: 0 success, 1 numeric failure, 2 data error, 3 config error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, bias, checkpoint
from .attention import weights_to_csv
from .config import RunConfig, config_hash
from .data import (Normalizer, SeriesTable, detect_periods_acf, load_csv, prepare,
                   synth_series, write_csv)
from .errors import ConfigError, DataError, PenguinError
from .gradcheck import check_model, tiny_config
from .model import PenguinModel
from .tensor import no_grad
from .train import (Cell, ablation_sweep, evaluate, summarize, train, write_history,
                    write_sweep_csv)

EXIT = {"numeric": 1, "data": 2, "config": 3}
log = logging.getLogger("penguin")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error[config]: {message}", file=sys.stderr)
        sys.exit(EXIT["config"])


def _int_list(text: str) -> list[int]:
    if text is None or text.strip() == "":
        return []
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ensure_parent(path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create directory for {path}: {exc}") from exc
    return path


def _load_splits(run: RunConfig):
    table = load_csv(run.data.path)
    m = run.model
    if table.n_channels != m.channels:
        raise ConfigError(f"data has {table.n_channels} channels, model expects {m.channels}")
    return prepare(table, m.seq_len, m.horizon, run.data.split, run.data.normalize,
                   run.data.allow_empty_splits)


# commands ------------------------------------------------------------------------


def cmd_synth(args) -> int:
    periods = args.periods
    amps = args.amplitudes or [1.0] * len(periods)
    if len(amps) != len(periods):
        raise ConfigError("--amplitudes must match --periods in length")
    phases = [0.5 * i for i in range(len(periods))]
    table = synth_series(args.length, args.channels, list(zip(periods, amps, phases)),
                         trend=args.trend, noise=args.noise, seed=args.seed,
                         channel_phase=args.channel_phase)
    try:
        write_csv(_ensure_parent(args.out), table)
    except OSError as exc:
        raise DataError(f"cannot write {args.out}: {exc}") from exc
    return 0


def cmd_train(args) -> int:
    run = RunConfig.load(args.config)
    splits = _load_splits(run)
    model = PenguinModel(run.model, seed=run.train.seed)
    result = train(model, splits.train, splits.val, run.train)
    norm = splits.normalizer.to_dict() if splits.normalizer else None
    checkpoint.save(_ensure_parent(run.output.checkpoint), model, norm,
                    extra={"best_epoch": result.best_epoch, "best_val": result.best_val})
    write_history(_ensure_parent(run.output.history), result.history)
    if run.output.manifest:
        doc = run.to_dict()
        manifest = {"config_hash": config_hash(doc), "seed": run.train.seed,
                    "version": f"penguin-{__version__}", "config": doc,
                    "n_parameters": model.n_parameters(), "best_epoch": result.best_epoch}
        _ensure_parent(run.output.manifest).write_text(json.dumps(manifest, indent=2) + "\n")
    print(json.dumps({"checkpoint": run.output.checkpoint, "best_epoch": result.best_epoch,
                      "best_val_mse": result.best_val}))
    return 0


def cmd_eval(args) -> int:
    run = RunConfig.load(args.config)
    model, header = checkpoint.load(args.checkpoint)
    if model.config != run.model:
        log.warning("checkpoint model config differs from --config; using the checkpoint's")
    splits = _load_splits(dataclasses.replace(run, model=model.config))
    ds = getattr(splits, args.split)
    if len(ds) == 0:
        raise DataError(f"{args.split} split is empty; nothing to evaluate")
    if header.get("normalization") and splits.normalizer is not None:
        stored = Normalizer.from_dict(header["normalization"])
        if not (np.allclose(stored.mean, splits.normalizer.mean)
                and np.allclose(stored.std, splits.normalizer.std)):
            log.warning("normalization statistics differ from those stored in the checkpoint")
    report = evaluate(model, ds)
    doc = {"split": args.split, **report.to_dict()}
    text = json.dumps(doc, indent=2)
    if args.out:
        _ensure_parent(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_forecast(args) -> int:
    model, header = checkpoint.load(args.checkpoint)
    cfg = model.config
    table = load_csv(args.input)
    if table.n_channels != cfg.channels:
        raise DataError(f"input has {table.n_channels} channels, model expects {cfg.channels}")
    if len(table) < cfg.seq_len:
        raise DataError(f"input has {len(table)} rows; need at least {cfg.seq_len}")
    window = table.values[-cfg.seq_len:]
    norm = Normalizer.from_dict(header["normalization"]) if header.get("normalization") else None
    if norm is not None:
        window = norm.transform(window)
    weights = [] if args.dump_attention else None
    with no_grad():
        pred = np.asarray(model.forward(window, weights_out=weights).data, dtype=np.float64)
    if norm is not None:
        pred = norm.inverse(pred)
    write_csv(_ensure_parent(args.out), SeriesTable(pred, table.channels))
    if weights is not None:
        out_dir = Path(args.dump_attention)
        out_dir.mkdir(parents=True, exist_ok=True)
        groups = [g for _, g in bias.assemble_bias_stack(cfg)]
        for layer, w in enumerate(weights):
            for c in range(w.shape[0]):
                for h in range(w.shape[1]):
                    name = f"layer{layer}_ch{c}_head{h + 1}_group{groups[h]}.csv"
                    (out_dir / name).write_text(weights_to_csv(w[c, h]))
    return 0


def cmd_dump_bias(args) -> int:
    rows = args.rows or args.n
    heads = bias.assemble(args.regime, args.periods, args.heads, args.n,
                          decoder_offset=args.decoder_offset, n_rows=rows)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for hb in heads:
        stem = out / f"head{hb.head}_group{hb.group}"
        if args.format == "csv":
            stem.with_suffix(".csv").write_text(bias.to_csv(hb.matrix))
        else:
            stem.with_suffix(".pgm").write_bytes(bias.to_pgm(hb.matrix))
    print(json.dumps({"heads": len(heads), "groups": len({h.group for h in heads}),
                      "dir": str(out)}))
    return 0


def cmd_gradcheck(args) -> int:
    overrides = {}
    if args.config:
        m = RunConfig.load(args.config).model
        overrides = dict(regime=m.regime, causal=m.causal)
        # keep the bias layout but shrink everything else
        periods = tuple(p for p in (6, 4) if m.regime in ("periodic", "both"))
        overrides["periods"] = periods[:1]
    cfg = tiny_config(**overrides)
    results = check_model(cfg, tol=args.tol)
    worst = 0.0
    for r in results:
        worst = max(worst, r.max_rel_error)
        print(f"{r.name:28s} {r.size:6d} {r.max_rel_error:.3e} {'PASS' if r.passed else 'FAIL'}")
    ok = all(r.passed for r in results)
    print(f"{'PASS' if ok else 'FAIL'} max relative error {worst:.3e} (tol {args.tol:g})")
    return 0 if ok else EXIT["numeric"]


def cmd_detect(args) -> int:
    table = load_csv(args.input)
    cols = range(table.n_channels) if args.column is None else [args.column]
    report = {}
    for c in cols:
        if not 0 <= c < table.n_channels:
            raise ConfigError(f"column index {c} out of range")
        peaks = detect_periods_acf(table.values[:, c], args.max_lag, args.top_k, args.threshold)
        report[table.channels[c]] = [{"lag": lag, "correlation": r} for lag, r in peaks]
    print(json.dumps(report, indent=2))
    return 0


def cmd_ablate(args) -> int:
    run = RunConfig.load(args.config)
    table = load_csv(run.data.path)
    cells = []
    period_sets = [tuple(_int_list(s)) for s in args.period_sets.split(";")] \
        if args.period_sets else [run.model.periods]
    for regime in args.regimes.split(","):
        for ps in period_sets if regime in ("periodic", "both") else [run.model.periods]:
            over = {"regime": regime}
            label = regime
            if regime in ("periodic", "both"):
                over["periods"] = ps
                label = f"{regime}{list(ps)}"
            if args.no_causal:
                over["causal"] = False
                label += "-nocausal"
            # validate every cell before any training starts
            run.model.replace(**over)
            cells.append(Cell(label, over))
    results = ablation_sweep(table, run.model, run.train, cells, args.seeds, run.data.split)
    write_sweep_csv(_ensure_parent(args.out), results)
    print(json.dumps(summarize(results), indent=2))
    return 0


# parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="penguin", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"penguin {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic multi-period series as CSV")
    s.add_argument("--out", required=True)
    s.add_argument("--length", type=int, default=4000)
    s.add_argument("--channels", type=int, default=1)
    s.add_argument("--periods", type=_int_list, default=[24])
    s.add_argument("--amplitudes", type=_float_list, default=None)
    s.add_argument("--noise", type=float, default=0.3)
    s.add_argument("--trend", type=float, default=0.0)
    s.add_argument("--channel-phase", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train a model from a JSON run config")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    s.add_argument("--config", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--split", choices=["train", "val", "test"], default="test")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("forecast", help="predict the next H steps after a CSV")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--dump-attention", metavar="DIR")
    s.set_defaults(func=cmd_forecast)

    s = sub.add_parser("dump-bias", help="write per-head bias matrices")
    s.add_argument("--n", type=int, required=True, help="number of key tokens")
    s.add_argument("--rows", type=int, help="number of query rows (default: n)")
    s.add_argument("--periods", type=_int_list, default=[], help="periods in patches")
    s.add_argument("--regime", default="both")
    s.add_argument("--heads", type=int, default=12)
    s.add_argument("--format", choices=["csv", "pgm"], default="csv")
    s.add_argument("--decoder-offset", type=int, default=0)
    s.add_argument("--out-dir", default="bias")
    s.set_defaults(func=cmd_dump_bias)

    s = sub.add_parser("gradcheck", help="finite-difference check on a tiny model")
    s.add_argument("--config")
    s.add_argument("--tol", type=float, default=1e-4)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("detect-periods", help="ACF period candidates per column")
    s.add_argument("--input", required=True)
    s.add_argument("--max-lag", type=int, default=200)
    s.add_argument("--top-k", type=int, default=3)
    s.add_argument("--threshold", type=float, default=0.1)
    s.add_argument("--column", type=int)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("ablate", help="train every (regime, period set, seed) cell")
    s.add_argument("--config", required=True)
    s.add_argument("--regimes", default="nobias,nonperiodic,both")
    s.add_argument("--period-sets", help="';'-separated period lists, e.g. '24,56;24'")
    s.add_argument("--seeds", type=_int_list, default=[0, 1, 2, 3, 4])
    s.add_argument("--no-causal", action="store_true")
    s.add_argument("--out", default="sweep.csv")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PenguinError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return EXIT[exc.category]
    except (ValueError, TypeError) as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return EXIT["config"]
    except OSError as exc:
        print(f"error[data]: {exc}", file=sys.stderr)
        return EXIT["data"]


if __name__ == "__main__":
    sys.exit(main())
