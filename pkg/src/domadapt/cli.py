"""Command-line entry point.

Every command is deterministic given its flags. Exit codes: 0 on success,
1 on a computational failure, 2 on bad usage or bad input.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import adapt, backend, embedio, metrics, synth
from .errors import DomainAdaptError, NumericalError, ValidationError

EMBEDDING_FILES = ("source.evb", "adapt.evb", "enroll.evb", "test.evb")
TRIALS_FILE = "trials.tsv"
LAMBDA_GRID = (0.1, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
ALPHA_GRID = (0.1, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
RATIOS = (1.0, 0.5, 0.1)
SCORINGS = ("plda", "cosine")


class UsageError(Exception):
    """Bad flag combination detected after argument parsing."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# argument helpers


def _float_list(text):
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _int_list(text):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _name_list(choices):
    def parse(text):
        names = [v.strip() for v in text.split(",") if v.strip()]
        bad = [n for n in names if n not in choices]
        if bad or not names:
            raise argparse.ArgumentTypeError(f"expected a comma-separated subset of {','.join(choices)}")
        return names

    return parse


def _add_format(p):
    p.add_argument("--format", choices=("tsv", "binary"), default=None,
                   help="embedding file format (default: binary on write, detected on read)")


def _add_method(p, default="coralpp"):
    p.add_argument("--method", choices=synth.ADAPT_METHODS, default=default)
    p.add_argument("--lambda", dest="lambda_", type=float, default=None,
                   help=f"CORAL++ ridge (default {adapt.DEFAULT_LAMBDA})")
    p.add_argument("--alpha", type=float, default=None,
                   help=f"CORAL++ spectrum floor (default {adapt.DEFAULT_ALPHA})")


def _add_dims(p, defaults=(None, None)):
    p.add_argument("--d1", type=int, default=defaults[0], help="PCA dimension")
    p.add_argument("--d2", type=int, default=defaults[1], help="LDA dimension")


def _add_cost(p):
    p.add_argument("--p-target", type=float, action="append", default=None,
                   help="target prior, repeatable (default 0.01 and 0.005)")
    p.add_argument("--c-miss", type=float, default=1.0)
    p.add_argument("--c-fa", type=float, default=1.0)


def _add_spec(p):
    b = synth.BENCHMARK_SPEC
    g = p.add_argument_group("synthetic data")
    g.add_argument("--dim", type=int, default=b.dim)
    g.add_argument("--n-speakers", type=int, default=b.n_speakers)
    g.add_argument("--utts-per-speaker", type=int, default=b.utts_per_speaker)
    g.add_argument("--between-scale", type=float, default=b.between_scale)
    g.add_argument("--within-scale", type=float, default=b.within_scale)
    g.add_argument("--rotation-strength", type=float, default=b.rotation_strength)
    g.add_argument("--anisotropy", type=float, default=b.anisotropy)
    g.add_argument("--mean-shift-norm", type=float, default=b.mean_shift_norm)
    g.add_argument("--n-adapt-speakers", type=int, default=b.n_adapt_speakers)
    g.add_argument("--adapt-utts-per-speaker", type=int, default=b.adapt_utts_per_speaker)
    g.add_argument("--n-eval-speakers", type=int, default=b.n_eval_speakers)
    g.add_argument("--test-utts-per-speaker", type=int, default=b.test_utts_per_speaker)
    g.add_argument("--nuisance-rank", type=int, default=b.nuisance_rank)
    g.add_argument("--nuisance-scale", type=float, default=b.nuisance_scale)


def _spec_from(args, seed):
    return synth.DomainShiftSpec(
        dim=args.dim,
        n_speakers=args.n_speakers,
        utts_per_speaker=args.utts_per_speaker,
        between_scale=args.between_scale,
        within_scale=args.within_scale,
        rotation_strength=args.rotation_strength,
        anisotropy=args.anisotropy,
        mean_shift_norm=args.mean_shift_norm,
        seed=seed,
        n_adapt_speakers=args.n_adapt_speakers,
        adapt_utts_per_speaker=args.adapt_utts_per_speaker,
        n_eval_speakers=args.n_eval_speakers,
        test_utts_per_speaker=args.test_utts_per_speaker,
        nuisance_rank=args.nuisance_rank,
        nuisance_scale=args.nuisance_scale,
    )


def _cost_from(args):
    p_target = tuple(args.p_target) if args.p_target else metrics.CostParams().p_target
    return metrics.CostParams(p_target=p_target, c_miss=args.c_miss, c_fa=args.c_fa)


def _coralpp_cfg(args):
    lam = adapt.DEFAULT_LAMBDA if args.lambda_ is None else args.lambda_
    alpha = adapt.DEFAULT_ALPHA if args.alpha is None else args.alpha
    return adapt.CoralPPConfig(lambda_=lam, alpha=alpha)


def _warn(msg):
    print(f"warning: {msg}", file=sys.stderr)


# ---------------------------------------------------------------------------
# file helpers


def _require(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"input file not found: {path}")
    return path


def _detect_format(path, forced):
    if forced is not None:
        return forced
    with open(path, "rb") as f:
        head = f.read(4)
    if head == embedio.BINARY_MAGIC:
        return "binary"
    if head.startswith(b"#"):
        return "tsv"
    return embedio.infer_format(path)


def _read_emb(path, forced=None):
    path = _require(path)
    return embedio.read_embeddings(path, _detect_format(path, forced))


def _write_emb(emb, path, fmt):
    embedio.write_embeddings(emb, path, fmt or "binary")


def _load_data_dir(directory, fmt=None):
    d = Path(directory)
    source, adapt_set, enroll, test = (_read_emb(d / name, fmt) for name in EMBEDDING_FILES)
    trials = embedio.read_trials(_require(d / TRIALS_FILE))
    if trials.keys is None:
        raise ValidationError(f"{d / TRIALS_FILE} has no target/nontarget keys")
    return synth.SyntheticData(source=source, target_adapt=adapt_set, target_enroll=enroll,
                               target_test=test, trials=trials, distortion=None)


def _cell(res):
    return f"{100 * res.eer:.4f}/{res.min_cost:.4f}"


def _fmt_value(v):
    return f"{v:g}"


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args):
    spec = _spec_from(args, args.seed)
    data = synth.generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sets = (data.source, data.target_adapt, data.target_enroll, data.target_test)
    for emb, name in zip(sets, EMBEDDING_FILES):
        _write_emb(emb, out / name, args.format)
    embedio.write_trials(data.trials, out / TRIALS_FILE)
    return 0


def cmd_adapt(args):
    if args.method in ("coral", "fda", "raw") and (args.lambda_ is not None or args.alpha is not None):
        _warn(f"--lambda/--alpha are ignored by method {args.method}")
    cfg = _coralpp_cfg(args)
    ood = _read_emb(args.ood, args.format)
    ind = _read_emb(args.ind, args.format)
    t = adapt.fit_transform(args.method, ood, ind, cfg)
    out = Path(args.out)
    _write_emb(adapt.apply_transform(t, ood), out, args.format)
    adapt.save_transform(t, args.transform_out or out.with_suffix(".adt"))
    return 0


def cmd_train(args):
    train = _read_emb(args.train, args.format)
    center = _read_emb(args.center, args.format) if args.center else None
    n_spk = len(set(train.labels)) if train.labels is not None else 2
    d1_default, d2_default = synth.default_dims(train.dim, n_spk)
    d1 = d1_default if args.d1 is None else args.d1
    d2 = min(d2_default, d1) if args.d2 is None else args.d2
    model = backend.fit_backend(train, center, d1, d2, cosine_only=args.cosine_only)
    backend.save_model(model, args.out)
    return 0


def cmd_score(args):
    model = backend.load_model(_require(args.model))
    enroll = _read_emb(args.enroll, args.format)
    test = _read_emb(args.test, args.format)
    trials = embedio.read_trials(_require(args.trials))
    scores = backend.score_trials(model, enroll, test, trials, args.scoring)
    if args.out:
        embedio.write_scores(scores, args.out)
    else:
        for (e, t), s in zip(scores.pairs, scores.scores):
            print(f"{e}\t{t}\t{s!r}")
    return 0


def cmd_eval(args):
    cost = _cost_from(args)
    scores = embedio.read_scores(_require(args.scores))
    trials = embedio.read_trials(_require(args.trials))
    curve = metrics.det_curve(scores, trials)
    print(f"EER%\t{100 * metrics.eer(curve):.4f}")
    print(f"minCost\t{metrics.min_cost(curve, cost):.4f}")
    return 0


def _eval_sets(args):
    """(name, loader, subset seed) per evaluation set: data directories or seeds."""
    if args.data_dir:
        for d in args.data_dir:
            _require(Path(d) / TRIALS_FILE)
        return [(Path(d).name or str(d), lambda d=d: _load_data_dir(d, args.format), args.seed)
                for d in args.data_dir]
    _spec_from(args, 0)
    return [(f"seed{s}", lambda s=s: synth.generate(_spec_from(args, s)), s) for s in args.seeds]


def cmd_sweep(args):
    fixed = args.fixed
    if fixed is None:
        fixed = 0.0 if args.param == "lambda" else adapt.DEFAULT_LAMBDA
    grid = args.grid or (LAMBDA_GRID if args.param == "lambda" else ALPHA_GRID)
    # validate every grid point before any run
    if args.param == "lambda":
        cfgs = [adapt.CoralPPConfig(lambda_=v, alpha=fixed) for v in grid]
    else:
        cfgs = [adapt.CoralPPConfig(lambda_=fixed, alpha=v) for v in grid]
    cost = _cost_from(args)
    sets = _eval_sets(args)
    header = [args.param]
    rows = [[_fmt_value(v)] for v in grid]
    for name, load, subset_seed in sets:
        header += [f"{name}:EER%", f"{name}:minCost"]
        data = load()
        for row, cfg in zip(rows, cfgs):
            res = synth.run_on_data(data, "coralpp", cfg, args.scoring, subset_seed=subset_seed,
                                    d1=args.d1, d2=args.d2, cost=cost)
            row += [f"{100 * res.eer:.4f}", f"{res.min_cost:.4f}"]
    print("\t".join(header))
    for row in rows:
        print("\t".join(row))
    return 0


def cmd_experiment(args):
    cfg = _coralpp_cfg(args)
    cost = _cost_from(args)
    for r in args.ratios:
        if not 0 < r <= 1:
            raise ValidationError(f"ratio must lie in (0, 1], got {r}")
    cells = [(sc, m) for sc in args.scoring for m in args.methods]
    if args.data_dir:
        datasets = [_load_data_dir(d, args.format) for d in args.data_dir]
        seeds = [args.seed] * len(datasets)
    else:
        specs = [_spec_from(args, s) for s in args.seeds]
        datasets = [synth.generate(s) for s in specs]
        seeds = list(args.seeds)
    table = {}
    for ratio in args.ratios:
        for sc, m in cells:
            runs = [synth.run_on_data(data, m, cfg, sc, ratio=ratio, subset_seed=seed,
                                      d1=args.d1, d2=args.d2, cost=cost)
                    for data, seed in zip(datasets, seeds)]
            table[ratio, sc, m] = synth.ExperimentResult(
                eer=float(np.median([r.eer for r in runs])),
                min_cost=float(np.median([r.min_cost for r in runs])),
            )
    print("\t".join(["ratio"] + [f"{sc}:{m}" for sc, m in cells]))
    for ratio in args.ratios:
        print("\t".join([_fmt_value(ratio)] + [_cell(table[ratio, sc, m]) for sc, m in cells]))
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = _Parser(prog="domadapt", description="Domain adaptation for speaker embeddings.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic cross-domain data set")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    _add_format(p)
    _add_spec(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("adapt", help="fit an adaptation and adapt out-of-domain embeddings")
    p.add_argument("--ood", required=True, help="labeled out-of-domain embeddings")
    p.add_argument("--ind", required=True, help="unlabeled in-domain embeddings")
    p.add_argument("--out", required=True, help="adapted embeddings")
    p.add_argument("--transform-out", default=None, help="transform file (default: OUT with suffix .adt)")
    _add_method(p)
    _add_format(p)
    p.add_argument("--seed", type=int, default=0, help="unused; accepted for uniformity")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("train", help="train the scoring back-end")
    p.add_argument("--train", required=True, help="labeled (adapted) training embeddings")
    p.add_argument("--center", default=None, help="embeddings whose mean centers the data")
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--cosine-only", action="store_true", help="stop after PCA")
    _add_dims(p)
    _add_format(p)
    p.add_argument("--seed", type=int, default=0, help="unused; accepted for uniformity")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score a trial list")
    p.add_argument("--model", required=True)
    p.add_argument("--enroll", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--trials", required=True)
    p.add_argument("--scoring", choices=SCORINGS, default="plda")
    p.add_argument("--out", default=None, help="score file (default: standard output)")
    _add_format(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="EER and min-Cost of a score file")
    p.add_argument("--scores", required=True)
    p.add_argument("--trials", required=True, help="keyed trial list")
    _add_cost(p)
    p.set_defaults(func=cmd_eval)

    d1, d2 = synth.BENCHMARK_DIMS
    p = sub.add_parser("sweep", help="sweep a CORAL++ hyper-parameter")
    p.add_argument("--param", choices=("lambda", "alpha"), required=True)
    p.add_argument("--grid", type=_float_list, default=None, help="comma-separated values")
    p.add_argument("--fixed", type=float, default=None,
                   help="value of the other parameter (default alpha=0 or lambda=0.1)")
    p.add_argument("--seeds", type=_int_list, default=[0, 1, 2], help="one synthetic evaluation set per seed")
    p.add_argument("--seed", type=int, default=0, help="subset seed when --data-dir is used")
    p.add_argument("--data-dir", action="append", default=None, help="synth output directory, repeatable")
    p.add_argument("--scoring", choices=SCORINGS, default="plda")
    _add_dims(p, (d1, d2))
    _add_cost(p)
    _add_format(p)
    _add_spec(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("experiment", help="compare adaptation methods and scorings")
    p.add_argument("--methods", type=_name_list(synth.ADAPT_METHODS), default=list(synth.ADAPT_METHODS))
    p.add_argument("--scoring", type=_name_list(SCORINGS), default=list(SCORINGS))
    p.add_argument("--ratios", type=_float_list, default=list(RATIOS))
    p.add_argument("--seeds", type=_int_list, default=[0, 1, 2])
    p.add_argument("--seed", type=int, default=0, help="subset seed when --data-dir is used")
    p.add_argument("--data-dir", action="append", default=None, help="synth output directory, repeatable")
    p.add_argument("--lambda", dest="lambda_", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    _add_dims(p, (d1, d2))
    _add_cost(p)
    _add_format(p)
    _add_spec(p)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        msg = str(exc) if exc.filename is None else f"input file not found: {exc.filename}"
        print(f"error: {msg}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (ValidationError, ValueError, LookupError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (DomainAdaptError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
