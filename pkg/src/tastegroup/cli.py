"""Command-line front end: split | train | inspect | recommend | evaluate | synth."""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import _kernels
from .data import (ConfigError, FormatConfig, ParseError, SplitSpec, build_matrix,
                   parse_interactions, recency_filter, temporal_split, write_interactions)
from .hlta import LearnConfig, learn_hlta
from .ltm import (InvalidModelError, ModelFormatError, check, deserialize, latents_at_level,
                  serialize)
from .metrics import (EvalProtocol, EvaluationError, evaluate, popularity_baseline,
                      user_knn_baseline, write_report)
from .recommend import TasteGroupRecommender, write_recommendations
from .synthetic import SynthConfig, generate

log = logging.getLogger("tastegroup")

EXIT_USAGE = 2


class CLIError(Exception):
    pass


class _Outputs:
    """Stage output files in temporaries; commit all together or remove all."""

    def __init__(self):
        self._pending: list[tuple[str, Path]] = []

    def open(self, path: str | Path, binary: bool = False):
        path = Path(path)
        fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
        self._pending.append((tmp, path))
        if binary:
            return os.fdopen(fd, "wb")
        return os.fdopen(fd, "w", encoding="utf-8", newline="")

    def commit(self):
        for tmp, path in self._pending:
            os.replace(tmp, path)
        self._pending.clear()

    def discard(self):
        for tmp, _ in self._pending:
            with contextlib.suppress(FileNotFoundError):
                os.unlink(tmp)
        self._pending.clear()


@contextlib.contextmanager
def _outputs():
    out = _Outputs()
    try:
        yield out
    except BaseException:
        out.discard()
        raise
    out.commit()


def _require_file(path: str | None, what: str) -> Path:
    if path is None:
        raise CLIError(f"missing required {what} path")
    p = Path(path)
    if not p.is_file():
        raise CLIError(f"{what} file not found: {p}")
    return p


def _require_out_dir(path: str | Path) -> Path:
    p = Path(path)
    parent = p.parent if p.parent != Path("") else Path(".")
    if not parent.is_dir():
        raise CLIError(f"output directory does not exist: {parent}")
    return p


_FORMAT = FormatConfig()


def _read_records(path: Path):
    with open(path, "rb") as fh:
        return parse_interactions(fh, _FORMAT)


def _sniff_delimiter(path: Path) -> str:
    with open(path, encoding="utf-8") as fh:
        head = fh.readline()
    return "\t" if head.count("\t") > head.count(",") else ","


def _read_model(path: Path):
    model = deserialize(path.read_bytes())
    return check(model)


def _ratios(text: str) -> SplitSpec:
    try:
        parts = [float(x) for x in text.split(",")]
    except ValueError:
        raise CLIError(f"bad --ratios {text!r}") from None
    if len(parts) != 3:
        raise CLIError("--ratios needs three comma-separated fractions")
    return SplitSpec(*parts)


def _window(text: str | None) -> int | None:
    if text is None or text.lower() in ("none", "inf", "unbounded"):
        return None
    try:
        w = int(text)
    except ValueError:
        raise CLIError(f"--window must be a number of seconds or 'none', got {text!r}") from None
    if w <= 0:
        raise CLIError("--window must be positive")
    return w


def _cutoffs(text: str) -> tuple[int, ...]:
    try:
        cut = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise CLIError(f"bad --cutoffs {text!r}") from None
    if not cut or min(cut) < 1:
        raise CLIError("--cutoffs must be positive integers")
    return cut


def _history(train_records, train, window, ref=None):
    if window is None:
        return train
    if ref is None:
        ref = max((r.timestamp for r in train_records), default=0)
    hist, _ = build_matrix(recency_filter(train_records, window, ref),
                           train.user_index, train.item_index)
    return hist


# --- subcommands -----------------------------------------------------------

def cmd_split(args) -> int:
    src = _require_file(args.input, "input")
    spec = _ratios(args.ratios)
    out_dir = Path(args.output)
    if not out_dir.is_dir():
        raise CLIError(f"output directory does not exist: {out_dir}")
    records = _read_records(src)
    parts = temporal_split(records, spec)
    delim = _sniff_delimiter(src)
    ext = ".tsv" if delim == "\t" else ".csv"
    with _outputs() as outs:
        for name, part in zip(("train", "valid", "test"), parts):
            with outs.open(out_dir / f"{name}{ext}") as fh:
                write_interactions(part, fh, delim)
    print(" ".join(f"{name}={len(p)}" for name, p in zip(("train", "valid", "test"), parts)))
    return 0


def _learn_config(args) -> LearnConfig:
    return LearnConfig(max_island_size=args.max_island_size, em_max_iters=args.em_iters,
                       em_tol=args.em_tol, em_restarts=args.em_restarts, rng_seed=args.seed,
                       min_top_level_vars=args.min_top_level_vars,
                       island_alpha=args.island_alpha)


def cmd_train(args) -> int:
    src = _require_file(args.input, "input")
    out = _require_out_dir(args.output)
    report_path = Path(args.report) if args.report else out.with_name(out.name + ".report.txt")
    config = _learn_config(args)
    train, _ = build_matrix(_read_records(src))
    model, report = learn_hlta(train, config)
    with _outputs() as outs:
        with outs.open(out, binary=True) as fh:
            fh.write(serialize(model))
        with outs.open(report_path) as fh:
            fh.write(report.to_text())
    if report.degenerate_items:
        log.warning("%d item(s) consumed by nobody; attached with empirical marginals",
                    len(report.degenerate_items))
    print(f"model: {model.num_nodes} nodes, {len(model.latent_ids)} latents, "
          f"{model.max_level} levels -> {out}")
    return 0


def _check_level(model, level):
    try:
        return latents_at_level(model, level)
    except ValueError as exc:
        raise CLIError(str(exc)) from None


def cmd_inspect(args) -> int:
    model = _read_model(_require_file(args.model, "model"))
    groups = _check_level(model, args.level)
    rec = None
    if args.train:
        records = _read_records(_require_file(args.train, "train"))
        train, _ = build_matrix(records)
        rec = TasteGroupRecommender(model, train, args.level,
                                    _history(records, train, _window(args.window), args.ref_time))
    lines = [f"# level {args.level}: {len(groups)} groups"]
    for k, z in enumerate(groups):
        z = int(z)
        desc = [model.labels[v] for v in model.descendants_observed(z)]
        head = f"[group {k}] {model.labels[z]} node={z} observed_descendants={len(desc)}"
        if rec is None:
            lines.append(head)
            lines.append("members = " + ",".join(desc))
            continue
        pref = rec.profile.preferences[k]
        order = np.lexsort((np.arange(len(pref)), -pref))[:args.top_n]
        lines.append(head + f" mass={rec.profile.membership_mass[k]:.9g}")
        for i in order:
            lines.append(f"  {rec.train.item_keys[i]}\t{pref[i]:.9g}")
    text = "\n".join(lines) + "\n"
    if args.output:
        with _outputs() as outs, outs.open(_require_out_dir(args.output)) as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_recommend(args) -> int:
    model = _read_model(_require_file(args.model, "model"))
    _check_level(model, args.level)
    src = _require_file(args.train, "train")
    out = _require_out_dir(args.output) if args.output else None
    records = _read_records(src)
    train, _ = build_matrix(records)
    rec = TasteGroupRecommender(model, train, args.level,
                                _history(records, train, _window(args.window), args.ref_time))
    keys = args.users.split(",") if args.users else list(train.user_keys)

    def rows():
        for key in keys:
            u = train.user_index.get(key)
            flag = "" if u is not None else "cold_start"
            yield key, rec.recommend(u, args.top_n), train.item_keys, flag

    cold = sum(1 for k in keys if k not in train.user_index)
    if cold:
        log.warning("%d unknown user(s) served from prior memberships", cold)
    if out is None:
        write_recommendations(sys.stdout, rows())
    else:
        with _outputs() as outs, outs.open(out) as fh:
            write_recommendations(fh, rows())
    return 0


class _KNNScorer:
    def __init__(self, train, k):
        self.train, self.k = train, k

    def __call__(self, u):
        return user_knn_baseline(self.train, self.k, u)


def cmd_evaluate(args) -> int:
    model = _read_model(_require_file(args.model, "model"))
    _check_level(model, args.level)
    train_path = _require_file(args.train, "train")
    test_path = _require_file(args.test, "test")
    out = _require_out_dir(args.output) if args.output else None
    cutoffs = _cutoffs(args.cutoffs)
    records = _read_records(train_path)
    test_records = _read_records(test_path)
    if not test_records:
        raise CLIError(f"test file has no interactions: {test_path}")
    train, _ = build_matrix(records)
    test, drops = build_matrix(test_records, train.user_index, train.item_index)
    print(f"test records dropped: unknown_user={drops.unknown_user} "
          f"unknown_item={drops.unknown_item}", file=sys.stderr)
    protocol = EvalProtocol(train, test, cutoffs)
    rec = TasteGroupRecommender(model, train, args.level,
                                _history(records, train, _window(args.window), args.ref_time))
    reports = {"tbf": evaluate(rec.scores, protocol)}
    for name in args.baseline or ():
        if name == "popularity":
            pop = popularity_baseline(train)
            reports["popularity"] = evaluate(lambda u: pop, protocol)
        elif name == "user-knn":
            reports["user-knn"] = evaluate(_KNNScorer(train, args.knn_k), protocol)
    if out is None:
        write_report(reports, sys.stdout)
    else:
        with _outputs() as outs, outs.open(out) as fh:
            write_report(reports, fh)
    return 0


def cmd_synth(args) -> int:
    out = _require_out_dir(args.output)
    truth_path = Path(args.truth) if args.truth else out.with_name(out.stem + ".truth.csv")
    config = SynthConfig(num_users=args.num_users, num_items=args.num_items,
                         num_tastes=args.num_tastes, items_per_taste=args.items_per_taste,
                         taste_prob=args.taste_prob, consume_prob_in=args.consume_prob_in,
                         consume_prob_out=args.consume_prob_out, rng_seed=args.seed)
    records, truth = generate(config)
    with _outputs() as outs:
        with outs.open(out) as fh:
            write_interactions(records, fh)
        with outs.open(truth_path) as fh:
            truth.write(fh)
    print(f"{len(records)} interactions -> {out}; truth -> {truth_path}")
    return 0


# --- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="tastegroup",
        description="Taste-group collaborative filtering for implicit feedback.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--threads", type=int, default=None,
                   help="cap on numba worker threads (default: numba's own)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    p.add_argument("--user-col", default="user", help="user column name in input files")
    p.add_argument("--item-col", default="item", help="item column name in input files")
    p.add_argument("--time-col", default="timestamp",
                   help="timestamp column name (integer seconds) in input files")
    sub = p.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    s = sub.add_parser("split", help="temporal train/valid/test split", formatter_class=fmt)
    s.add_argument("--input", required=True, help="interaction file (user,item,timestamp)")
    s.add_argument("--output", required=True, help="directory for train/valid/test files")
    s.add_argument("--ratios", default="0.7,0.15,0.15", help="train,valid,test fractions")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("train", help="learn a latent tree model", formatter_class=fmt)
    s.add_argument("--input", required=True, help="training interaction file")
    s.add_argument("--output", required=True, help="model file to write")
    s.add_argument("--report", default=None, help="learning report (default: <output>.report.txt)")
    s.add_argument("--max-island-size", type=int, default=8)
    s.add_argument("--em-iters", type=int, default=100)
    s.add_argument("--em-tol", type=float, default=1e-4,
                   help="relative log-likelihood improvement to stop EM")
    s.add_argument("--em-restarts", type=int, default=3)
    s.add_argument("--min-top-level-vars", type=int, default=1,
                   help="stop stacking levels once a level has at most this many latents")
    s.add_argument("--island-alpha", type=float, default=0.01,
                   help="significance level a variable's dependence must reach to join an island")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("inspect", help="list the groups of one level", formatter_class=fmt)
    s.add_argument("--model", required=True)
    s.add_argument("--level", type=int, required=True)
    s.add_argument("--train", default=None, help="training file; adds group preferences")
    s.add_argument("--top-n", type=int, default=10, help="items listed per group")
    s.add_argument("--window", default="none", help="history window in seconds, or none")
    s.add_argument("--ref-time", type=int, default=None,
                   help="window end (default: latest training timestamp)")
    s.add_argument("--output", default=None, help="write here instead of stdout")
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("recommend", help="top-N recommendations", formatter_class=fmt)
    s.add_argument("--model", required=True)
    s.add_argument("--train", "--input", dest="train", required=True, help="training file")
    s.add_argument("--level", type=int, required=True,
                   help="hierarchy level whose latents form the taste groups")
    s.add_argument("--top-n", type=int, default=10)
    s.add_argument("--window", default="none", help="history window in seconds, or none")
    s.add_argument("--ref-time", type=int, default=None,
                   help="window end (default: latest training timestamp)")
    s.add_argument("--users", default=None, help="comma-separated user keys (default: all)")
    s.add_argument("--output", default=None, help="write here instead of stdout")
    s.set_defaults(func=cmd_recommend)

    s = sub.add_parser("evaluate", help="AUC and NDCG@R on a test file", formatter_class=fmt)
    s.add_argument("--model", required=True)
    s.add_argument("--train", "--input", dest="train", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--level", type=int, required=True)
    s.add_argument("--cutoffs", default="5,10,20")
    s.add_argument("--window", default="none", help="history window in seconds, or none")
    s.add_argument("--ref-time", type=int, default=None,
                   help="window end (default: latest training timestamp)")
    s.add_argument("--baseline", action="append", choices=["popularity", "user-knn"],
                   help="also evaluate a baseline (repeatable)")
    s.add_argument("--knn-k", type=int, default=50, help="neighbours for user-knn")
    s.add_argument("--output", default=None, help="write here instead of stdout")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("synth", help="generate planted-taste data", formatter_class=fmt)
    s.add_argument("--output", required=True, help="interaction file to write")
    s.add_argument("--truth", default=None, help="truth file (default: <output>.truth.csv)")
    d = SynthConfig()
    s.add_argument("--num-users", type=int, default=d.num_users)
    s.add_argument("--num-items", type=int, default=d.num_items)
    s.add_argument("--num-tastes", type=int, default=d.num_tastes)
    s.add_argument("--items-per-taste", type=int, default=d.items_per_taste)
    s.add_argument("--taste-prob", type=float, default=d.taste_prob)
    s.add_argument("--consume-prob-in", type=float, default=d.consume_prob_in)
    s.add_argument("--consume-prob-out", type=float, default=d.consume_prob_out)
    s.add_argument("--seed", type=int, default=d.rng_seed)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    global _FORMAT
    args = build_parser().parse_args(argv)
    _FORMAT = FormatConfig(args.user_col, args.item_col, args.time_col)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    if args.threads is not None:
        if args.threads < 1:
            print("tastegroup: --threads must be >= 1", file=sys.stderr)
            return EXIT_USAGE
        if _kernels.BACKEND == "numba":
            import numba
            numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
    try:
        return args.func(args)
    except (CLIError, ConfigError, ParseError, ModelFormatError, InvalidModelError,
            EvaluationError, ValueError, KeyError, OSError) as exc:
        print(f"tastegroup {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
