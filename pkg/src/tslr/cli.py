"""``tslr`` command-line front end.

Each subcommand reads plain files, runs one library operation and writes
plain files plus a manifest. It prints a one-line summary on standard
output and echoes the resolved configuration on standard error. Usage
errors exit with status 2; library errors exit with status 1 and print
the error code.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import io as tio
from .analytics import RAW, ForecastTask, detect_outliers, kmeans, run_forecast, trend_stats
from .config import RunConfig, load_config, parse_kv, synth_spec_from_file
from .errors import ConfigError, TslrError
from .ingest import FilterRules, ingest_logs
from .solver import FitOptions, fit, singular_spectrum
from .synth import generate

log = logging.getLogger("tslr")

THREADS_ENV = "TSLR_THREADS"


def _window(text: str) -> tuple[int, int]:
    try:
        a, b = (int(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected START:STOP, got {text!r}") from None
    if not 1 <= a < b:
        raise argparse.ArgumentTypeError(f"need 1 <= START < STOP, got {text!r}")
    return a, b


def _components(text: str):
    if text.strip().lower() == RAW:
        return RAW
    try:
        comps = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated components, got {text!r}") from None
    if not comps or min(comps) < 1:
        raise argparse.ArgumentTypeError("components are 1-based")
    return comps


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=_positive_int, default=argparse.SUPPRESS, help=f"worker cap (fallback: ${THREADS_ENV})")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="key=value file")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="tslr", description=__doc__.splitlines()[0], parents=[common])
    p.add_argument("--version", action="version", version=f"tslr {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("ingest", parents=[common], help="event log CSV -> per-subject matrix CSVs")
    s.add_argument("--events", type=Path, required=True)
    s.add_argument("--sample-minutes", type=float)
    s.add_argument("--rules", type=Path, help="key=value file of filter thresholds")
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("fit", parents=[common], help="fit the factor model")
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--rank", type=_positive_int)
    s.add_argument("--lambda", dest="lam", type=float)
    s.add_argument("--max-outer", type=_positive_int)
    s.add_argument("--rel-tol", type=float)
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("svd", parents=[common], help="leading singular values of the stacked data")
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("-k", dest="top", type=_positive_int, default=50)
    s.add_argument("--out", type=Path)

    s = sub.add_parser("trends", parents=[common], help="per-day coefficient percentiles")
    s.add_argument("--model", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("outliers", parents=[common], help="distance of each subject to the median trajectory")
    s.add_argument("--model", type=Path, required=True)
    s.add_argument("--component", type=_positive_int, required=True, help="1-based")
    s.add_argument("--percentile", type=float)
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("cluster", parents=[common], help="k-means under the masked metric")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--model", type=Path)
    src.add_argument("--data", type=Path, help="cluster raw matrices")
    s.add_argument("-k", type=_positive_int)
    s.add_argument("--components", type=_components, help="1-based list or 'raw'")
    s.add_argument("--restarts", type=_positive_int)
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("forecast", parents=[common], help="score forecasters on held-out subjects")
    s.add_argument("--model", type=Path, required=True)
    s.add_argument("--train", type=Path, required=True)
    s.add_argument("--test", type=Path, required=True)
    s.add_argument("--past", type=_window, required=True)
    s.add_argument("--future", type=_window, required=True)
    s.add_argument("--sigma", type=float, help="fixed bandwidth instead of cross-validation")
    s.add_argument("--metric", choices=("mae", "rmse"))
    s.add_argument("--min-observed", dest="min_observed_fraction", type=float)
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic cohort with ground truth")
    s.add_argument("--spec", type=Path, help="key=value file of generator settings")
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("render", parents=[common], help="matrix CSV -> binary graymap")
    s.add_argument("--matrix", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    return p


_CONFIG_FLAGS = (
    "seed",
    "threads",
    "sample_minutes",
    "rank",
    "lam",
    "max_outer",
    "rel_tol",
    "percentile",
    "k",
    "components",
    "restarts",
    "metric",
    "min_observed_fraction",
    "sigma",
)


def resolve_config(args) -> RunConfig:
    """Flags override the config file, which overrides the defaults."""
    cfg = load_config(getattr(args, "config", None))
    if "threads" not in vars(args) and os.environ.get(THREADS_ENV):
        file_keys = parse_kv(Path(args.config).read_text(encoding="utf-8")) if getattr(args, "config", None) else {}
        if "threads" not in file_keys:
            try:
                cfg = cfg.with_overrides(threads=int(os.environ[THREADS_ENV]))
            except ValueError:
                raise ConfigError(f"{THREADS_ENV} must be an integer") from None
    over = {k: getattr(args, k) for k in _CONFIG_FLAGS if getattr(args, k, None) is not None}
    if over.get("components") == RAW:
        over.pop("components")
    if getattr(args, "rules", None) is not None:
        given = parse_kv(args.rules.read_text(encoding="utf-8"), str(args.rules))
        rules = FilterRules.from_mapping(given)
        over.update({k: getattr(rules, k) for k in given})
    try:
        return cfg.with_overrides(**over)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, TslrError):
            raise
        raise ConfigError(str(exc)) from None


def _echo_config(cfg: RunConfig) -> str:
    return " ".join(f"{k}={tio.format_value(v)}" for k, v in cfg.items())


def _manifest(out: Path, command: str, cfg: RunConfig, inputs, is_dir: bool) -> None:
    # the output location is left out so that reruns elsewhere compare equal
    path = out / "manifest.txt" if is_dir else out.with_name(f"{out.stem}.manifest.txt")
    tio.write_manifest(path, command, __version__, dict(cfg.items()), inputs)


def _fit_options(cfg: RunConfig) -> FitOptions:
    return FitOptions(
        max_outer=cfg.max_outer,
        rel_tol=cfg.rel_tol,
        seed=cfg.seed,
        threads=cfg.threads,
        init_iter=cfg.init_iter,
        smooth_basis_step=cfg.smooth_basis_step,
    )


def _zero_based(components, rank: int, clip: bool = False) -> list[int]:
    if clip:
        components = [c for c in components if c <= rank]
    comps = [c - 1 for c in components]
    bad = [c + 1 for c in comps if c >= rank]
    if bad:
        raise ConfigError(f"component(s) {bad} exceed rank {rank}")
    return comps


def cmd_ingest(args, cfg):
    logs = tio.read_events(args.events)
    d = ingest_logs(logs, cfg.sample_minutes, cfg.rules())
    tio.write_dataset(args.out, d)
    inputs = [args.events] + ([args.rules] if args.rules else [])
    return args.out, True, inputs, f"ingest: {len(d)} of {len(logs)} subjects kept -> {args.out}"


def cmd_fit(args, cfg):
    d = tio.read_dataset(args.data)
    m = fit(d, r=cfg.rank, lam=cfg.lam, opts=_fit_options(cfg))
    tio.write_model(args.out, m)
    final = m.objective_trace[-1]
    return (
        args.out,
        True,
        [args.data],
        f"fit: {len(d)} subjects rank={m.rank} lambda={tio.format_number(m.lam)} "
        f"iterations={m.iterations} objective={final:.6g} converged={str(m.converged).lower()} -> {args.out}",
    )


def cmd_svd(args, cfg):
    d = tio.read_dataset(args.data)
    sv = singular_spectrum(d, args.top)
    text = "index,singular_value\n" + "".join(f"{i + 1},{float(v)!r}\n" for i, v in enumerate(sv))
    if args.out:
        tio.atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return args.out, False, [args.data], f"svd: {sv.size} singular values, largest {sv[0]:.6g}"


def cmd_trends(args, cfg):
    m = tio.read_model(args.model)
    st = trend_stats(m)
    names = [f"p{int(q)}" for q in st.percentiles]
    rows = []
    for j in range(m.rank):
        for k, day in enumerate(st.days):
            rows.append(",".join([str(j + 1), str(int(day))] + [repr(float(v)) for v in st.values[:, k, j]]))
    tio.atomic_write(args.out, ",".join(["component", "day"] + names) + "\n" + "".join(r + "\n" for r in rows))
    return args.out, False, [args.model], f"trends: {m.rank} components over {st.days.size} days -> {args.out}"


def cmd_outliers(args, cfg):
    m = tio.read_model(args.model)
    (j,) = _zero_based([args.component], m.rank)
    rep = detect_outliers(m, j, cfg.percentile)
    flagged = set(rep.flagged)
    lines = ["subject_id,distance,flagged"]
    lines += [f"{s},{float(dv)!r},{int(s in flagged)}" for s, dv in zip(rep.subject_ids, rep.distances)]
    tio.atomic_write(args.out, "\n".join(lines) + "\n")
    return (
        args.out,
        False,
        [args.model],
        f"outliers: component {args.component}, {len(flagged)} of {len(rep.subject_ids)} flagged "
        f"above p{cfg.percentile:g}={rep.threshold:.6g} -> {args.out}",
    )


def cmd_cluster(args, cfg):
    if args.data is not None or args.components == RAW:
        if args.data is None:
            raise ConfigError("raw clustering needs --data")
        source, comps, inputs = tio.read_dataset(args.data), RAW, [args.data]
    else:
        source = tio.read_model(args.model)
        explicit = args.components is not None
        comps, inputs = _zero_based(cfg.components, source.rank, clip=not explicit), [args.model]
    res = kmeans(source, cfg.k, comps, seed=cfg.seed, restarts=cfg.restarts)
    lines = ["subject_id,cluster"] + [f"{s},{int(c) + 1}" for s, c in zip(res.subject_ids, res.labels)]
    tio.atomic_write(args.out, "\n".join(lines) + "\n")
    sizes = np.bincount(res.labels, minlength=res.k)
    return (
        args.out,
        False,
        inputs,
        f"cluster: k={res.k} sizes={','.join(str(int(v)) for v in sizes)} cost={res.cost:.6g} -> {args.out}",
    )


def cmd_forecast(args, cfg):
    m = tio.read_model(args.model)
    train, test = tio.read_dataset(args.train), tio.read_dataset(args.test)
    task = ForecastTask(args.past, args.future, cfg.min_observed_fraction, cfg.sigma)
    rep = run_forecast(
        m, train, test, task, metric=cfg.metric, seed=cfg.seed, folds=cfg.cv_folds, grid_size=cfg.sigma_grid_size
    )
    out = args.out
    summary = ["method,mean,std,subjects,sigma,fallbacks"]
    for name, sc in rep.scores.items():
        sig = "" if sc.sigma is None else repr(float(sc.sigma))
        summary.append(f"{name},{sc.mean!r},{sc.std!r},{len(sc.errors)},{sig},{sc.fallbacks}")
    tio.atomic_write(out / "summary.csv", "\n".join(summary) + "\n")
    errors = ["subject_id," + ",".join(rep.scores)]
    for sid in rep.test_ids:
        errors.append(sid + "," + ",".join(repr(rep.scores[n].errors[sid]) for n in rep.scores))
    tio.atomic_write(out / "errors.csv", "\n".join(errors) + "\n")
    parts = " ".join(f"{n}={sc.mean:.4f}" for n, sc in rep.scores.items())
    return out, True, [args.model, args.train, args.test], f"forecast ({cfg.metric}, {len(rep.test_ids)} test subjects): {parts}"


def cmd_synth(args, cfg):
    seed = getattr(args, "seed", None)
    spec = synth_spec_from_file(args.spec, seed=seed)
    gt = generate(spec)
    tio.write_dataset(args.out, gt.data)
    tio.write_model(args.out / "truth", gt.as_model(cfg.lam))
    labels = ["subject_id,group"] + [f"{s},{int(g) + 1}" for s, g in zip(gt.data.subject_ids, gt.labels)]
    tio.atomic_write(args.out / "truth" / "labels.csv", "\n".join(labels) + "\n")
    inputs = [args.spec] if args.spec else []
    return args.out, True, inputs, f"synth: N={spec.N} T={spec.T} ell={spec.ell} r={spec.r} seed={spec.seed} -> {args.out}"


def cmd_render(args, cfg):
    m = tio.read_matrix(args.matrix)
    px = tio.heatmap(m)
    tio.write_pgm(args.out, px)
    return args.out, False, [args.matrix], f"render: {px.shape[1]}x{px.shape[0]} graymap -> {args.out}"


COMMANDS = {
    "ingest": cmd_ingest,
    "fit": cmd_fit,
    "svd": cmd_svd,
    "trends": cmd_trends,
    "outliers": cmd_outliers,
    "cluster": cmd_cluster,
    "forecast": cmd_forecast,
    "synth": cmd_synth,
    "render": cmd_render,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve_config(args)
        print("config: " + _echo_config(cfg), file=sys.stderr)
        out, is_dir, inputs, summary = COMMANDS[args.command](args, cfg)
        if out is not None:
            _manifest(Path(out), args.command, cfg, inputs, is_dir)
    except TslrError as exc:
        print(f"tslr: error: {exc.code}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"tslr: error: io-error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"tslr: error: invalid-argument: {exc}", file=sys.stderr)
        return 1
    print(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
