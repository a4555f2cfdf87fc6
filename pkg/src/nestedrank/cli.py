"""Command-line front end.

Data goes to stdout (or ``--out``), diagnostics to stderr.  Exit status is 0
on success, 2 for invalid input and 1 for failures while running.

Every subcommand accepts ``--config FILE``, a JSON object whose keys are flag
names without the leading dashes (``-`` or ``_`` both work); flags given on
the command line win.
"""

import argparse
import json
import sys

from ._validation import ConfigError
from .choice_model import (
    MNLPreference,
    OAPreference,
    RankingParseError,
    SeparabilityError,
    dumps_model,
    fit_mnl,
    load_model,
    load_rankings,
    loads_model,
    min_separation,
)
from .hardness import (
    DegenerateInstanceError,
    dgbt_to_dot,
    error_bounds,
    i_star_oa,
    j_star_oa,
    lower_bound_samples,
    phi,
    rank_hardness,
    select_hardness,
    verify_lp,
)
from .oracle import ORACLE_POLICIES, OracleTooLargeError, exact_chain, exact_k2
from .policies import (
    POLICIES,
    NonTerminationError,
    m_for_policy,
    run_ne,
    run_ne_one_by_one,
    run_ne_ranking,
    run_np,
    run_repeated_ne,
)
from .rng import RandomStream
from .simulation import (
    DEFAULT_DELTAS,
    DEFAULT_TRIALS,
    ExperimentSpec,
    finite_json,
    run_experiment,
)

# flag name -> default, applied after the config file
DEFAULTS = {
    "trials": DEFAULT_TRIALS,
    "seed": 0,
    "format": None,
    "task": "select",
    "tol": 1e-10,
    "max_iter": 10000,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _dump(obj):
    return json.dumps(finite_json(obj), indent=2) + "\n"


def _float_list(text):
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text):
    vals = _float_list(text)
    if any(v != int(v) for v in vals):
        raise ConfigError(f"expected comma-separated integers, got {text!r}")
    return [int(v) for v in vals]


# --- argument grammar ---------------------------------------------------------


def _add_model(p):
    g = p.add_argument_group("model (choose one source)")
    g.add_argument("--oa", action="store_true", default=None,
                   help="ordinal-attraction instance; needs --k and --p")
    g.add_argument("--k", type=int, help="number of items")
    g.add_argument("--p", type=float,
                   help="separation parameter; the OA dispersion and the p used to derive M")
    g.add_argument("--sigma", help="OA ranking as comma-separated 0-based positions")
    g.add_argument("--mnl", help="MNL weights, comma-separated")
    g.add_argument("--model", help="model JSON file")
    g.add_argument("--model-json", help="model JSON given inline")


def _add_common(p):
    p.add_argument("--config", help="JSON file with default flag values")
    p.add_argument("--out", help="write output here instead of stdout")


def build_parser():
    parser = _Parser(prog="nestedrank", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    h = sub.add_parser("hardness", help="hardness quantities, closed forms and bounds")
    _add_model(h)
    h.add_argument("--delta", type=float, help="also report lower bounds at this delta")
    h.add_argument("--m", type=int, help="also report error bounds at this threshold")
    h.add_argument("--format", choices=("json", "dot"), help="json (default) or dot for the tree")
    h.add_argument("--emit-model", help="write the model JSON to this file")
    _add_common(h)

    s = sub.add_parser("simulate", help="Monte-Carlo stopping times and error rates")
    _add_model(s)
    s.add_argument("--policy", choices=POLICIES, help="policy to run")
    s.add_argument("--delta", help="comma-separated descending delta grid (default 1e-1..1e-6)")
    s.add_argument("--m", help="comma-separated thresholds instead of a delta grid")
    s.add_argument("--trials", type=int, help=f"trials per grid point (default {DEFAULT_TRIALS})")
    s.add_argument("--seed", type=int, help="base seed (default 0)")
    s.add_argument("--threads", type=int, help="worker threads (default: all cores)")
    s.add_argument("--format", choices=("csv", "json"), help="csv (default) or json")
    s.add_argument("--trace", help="write the choice trace of trial 0 at the first grid point (JSONL)")
    _add_common(s)

    o = sub.add_parser("oracle", help="exact error probability and expected stopping time")
    _add_model(o)
    o.add_argument("--policy", choices=ORACLE_POLICIES, help="policy to solve")
    o.add_argument("--m", type=int, help="threshold")
    o.add_argument("--delta", type=float, help="derive the threshold from delta")
    o.add_argument("--max-states", type=int, help="state-space guard (default 200000)")
    _add_common(o)

    lb = sub.add_parser("lowerbound", help="sample-count lower bound")
    _add_model(lb)
    lb.add_argument("--delta", type=float, help="confidence level")
    lb.add_argument("--info", type=float, help="information rate; default from the OA closed form")
    lb.add_argument("--task", choices=("select", "rank"), help="select (default) or rank")
    _add_common(lb)

    v = sub.add_parser("verify-lp", help="check the ranking lower-bound program at OA")
    v.add_argument("--k", type=int, help="number of items (2..14)")
    v.add_argument("--p", type=float, help="OA dispersion")
    _add_common(v)

    c = sub.add_parser("calibrate", help="fit MNL weights to ranking data")
    c.add_argument("--rankings", help="file of '<count>: id,id,...' lines")
    c.add_argument("--k", type=int, help="number of items (default: longest ranking)")
    c.add_argument("--tol", type=float, help="convergence tolerance (default 1e-10)")
    c.add_argument("--max-iter", type=int, help="iteration cap (default 10000)")
    _add_common(c)
    return parser


def _merge_config(args):
    values = vars(args)
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, val in cfg.items():
            name = key.replace("-", "_")
            if name not in values or name in ("command", "config"):
                raise ConfigError(f"unknown config key {key!r}")
            if values[name] is None:
                values[name] = val
    for key, val in DEFAULTS.items():
        if key in values and values[key] is None:
            values[key] = val
    return argparse.Namespace(**values)


def _model(args):
    sources = [s for s in ("oa", "mnl", "model", "model_json") if getattr(args, s, None)]
    if len(sources) != 1:
        raise ConfigError("give exactly one of --oa, --mnl, --model, --model-json")
    src = sources[0]
    if src == "oa":
        if args.p is None:
            raise ConfigError("--oa needs --p")
        sigma = args.sigma
        if isinstance(sigma, str):
            sigma = _int_list(sigma)
        if sigma is None and args.k is None:
            raise ConfigError("--oa needs --k or --sigma")
        return OAPreference(args.p, n_items=args.k, sigma=sigma)
    if src == "mnl":
        w = args.mnl if isinstance(args.mnl, list) else _float_list(args.mnl)
        return MNLPreference(w)
    if src == "model":
        try:
            return load_model(args.model)
        except OSError as exc:
            raise ConfigError(f"cannot read model file: {exc}") from None
    text = args.model_json if isinstance(args.model_json, str) else json.dumps(args.model_json)
    return loads_model(text)


def _separation(args, model):
    return args.p if args.p is not None else min_separation(model)


def _write(args, text):
    if args.out:
        try:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(text)
        except OSError as exc:
            raise ConfigError(f"cannot write {args.out}: {exc}") from None
    else:
        sys.stdout.write(text)


# --- subcommands --------------------------------------------------------------


def cmd_hardness(args):
    model = _model(args)
    K = model.n_items
    p = _separation(args, model)
    sel = select_hardness(model, p)
    rank = rank_hardness(model, p)
    if args.emit_model:
        try:
            with open(args.emit_model, "w", encoding="utf-8") as fh:
                fh.write(dumps_model(model) + "\n")
        except OSError as exc:
            raise ConfigError(f"cannot write {args.emit_model}: {exc}") from None
    if args.format == "dot":
        _write(args, dgbt_to_dot(rank.root))
        return 0
    out = {
        "K": K,
        "p": p,
        "i_n": sel.i_n,
        "d_vector": sel.D.tolist(),
        "j_n": rank.j_n,
        "dgbt": rank.root.to_dict(),
        "closed_forms": {"i_star": i_star_oa(K, p), "j_star": j_star_oa(K, p), "phi": phi(K, p)},
        "bounds": {},
    }
    if args.delta is not None:
        out["bounds"]["lower_bound_select"] = lower_bound_samples(args.delta, i_star_oa(K, p))
        out["bounds"]["lower_bound_rank"] = lower_bound_samples(args.delta, j_star_oa(K, p))
        out["bounds"]["M_select"] = m_for_policy("ne", args.delta, K, p)
        out["bounds"]["M_rank"] = m_for_policy("np", args.delta, K, p)
    if args.m is not None:
        sb, rb = error_bounds(args.m, K, p)
        out["bounds"]["error_select"] = sb
        out["bounds"]["error_rank"] = rb
    _write(args, _dump(out))
    return 0


_TRACE_RUNNERS = {
    "ne": run_ne,
    "ne-one-by-one": run_ne_one_by_one,
    "np": run_np,
    "ne-ranking": run_ne_ranking,
}


def cmd_simulate(args):
    model = _model(args)
    if args.policy is None:
        raise ConfigError("--policy is required")
    if args.delta is not None and args.m is not None:
        raise ConfigError("give either --delta or --m, not both")
    m_values = None
    deltas = DEFAULT_DELTAS
    if args.m is not None:
        m_values = tuple(args.m if isinstance(args.m, list) else _int_list(args.m))
    elif args.delta is not None:
        deltas = tuple(args.delta if isinstance(args.delta, list) else _float_list(args.delta))
    if args.threads is not None:
        import numba

        if not 1 <= args.threads <= numba.config.NUMBA_NUM_THREADS:
            raise ConfigError(f"--threads must be in [1, {numba.config.NUMBA_NUM_THREADS}]")
        numba.set_num_threads(args.threads)
    spec = ExperimentSpec(model, args.policy, deltas, p=args.p, trials=args.trials,
                          base_seed=args.seed, m_values=m_values)
    result = run_experiment(spec)
    if args.trace:
        delta, M, _ = spec.grid()[0]
        rng = RandomStream.for_trial(args.seed, 0, 0)
        if args.policy == "repeated-ne":
            out = run_repeated_ne(model, delta, spec.separation(), rng)
        else:
            out = _TRACE_RUNNERS[args.policy](model, M, rng)
        try:
            with open(args.trace, "w", encoding="utf-8") as fh:
                fh.write(out.trace.to_jsonl())
        except OSError as exc:
            raise ConfigError(f"cannot write {args.trace}: {exc}") from None
    text = result.to_json() + "\n" if args.format == "json" else result.to_csv()
    _write(args, text)
    print(f"{args.policy}: {result.wall_seconds:.3f} s for {spec.trials} trials x "
          f"{len(result.rows)} grid points", file=sys.stderr)
    return 0


def cmd_oracle(args):
    model = _model(args)
    if args.policy is None:
        raise ConfigError("--policy is required")
    if (args.m is None) == (args.delta is None):
        raise ConfigError("give exactly one of --m or --delta")
    M = args.m
    if M is None:
        M = m_for_policy(args.policy, args.delta, model.n_items, _separation(args, model))
    max_states = args.max_states if args.max_states is not None else 200_000
    res = exact_chain(model, args.policy, M, max_states=max_states)
    out = {"policy": args.policy, "M": M} | res.to_dict()
    if model.n_items == 2:
        k2 = exact_k2(model, M)
        out["closed_form"] = {"error_prob": k2.error_prob, "expected_tau": k2.expected_tau}
    _write(args, _dump(out))
    return 0


def cmd_lowerbound(args):
    if args.delta is None:
        raise ConfigError("--delta is required")
    info = args.info
    if info is None:
        model = _model(args)
        K = model.n_items
        p = _separation(args, model)
        info = i_star_oa(K, p) if args.task == "select" else j_star_oa(K, p)
    value = lower_bound_samples(args.delta, info)
    _write(args, _dump({"delta": args.delta, "task": args.task, "info": info, "lower_bound": value}))
    return 0


def cmd_verify_lp(args):
    if args.k is None or args.p is None:
        raise ConfigError("--k and --p are required")
    rep = verify_lp(args.k, args.p)
    out = {
        "K": rep.K,
        "p": rep.p,
        "j_star": rep.j_star,
        "primal": rep.primal,
        "dual_max": rep.dual_max,
        "ok": rep.ok,
        "violations": [{"kind": k, "where": list(w) if isinstance(w, tuple) else w, "slack": s}
                       for k, w, s in rep.violations],
    }
    _write(args, _dump(out))
    if not rep.ok:
        print(f"{len(rep.violations)} violated constraints", file=sys.stderr)
        return 1
    return 0


def cmd_calibrate(args):
    if not args.rankings:
        raise ConfigError("--rankings is required")
    try:
        records = load_rankings(args.rankings, args.k)
    except OSError as exc:
        raise ConfigError(f"cannot read rankings: {exc}") from None
    model = fit_mnl(records, tol=args.tol, max_iter=args.max_iter, n_items=args.k)
    _write(args, dumps_model(model) + "\n")
    if model.metadata.get("degenerate_items"):
        print(f"items never chosen, weights floored: {model.metadata['degenerate_items']}",
              file=sys.stderr)
    return 0


COMMANDS = {
    "hardness": cmd_hardness,
    "simulate": cmd_simulate,
    "oracle": cmd_oracle,
    "lowerbound": cmd_lowerbound,
    "verify-lp": cmd_verify_lp,
    "calibrate": cmd_calibrate,
}

# ValueError covers the remaining validation failures (bad permutations etc.)
_CONFIG_ERRORS = (ConfigError, SeparabilityError, RankingParseError, DegenerateInstanceError,
                  OracleTooLargeError, ValueError)


def dispatch(argv=None):
    """Run one subcommand; returns the exit status."""
    parser = build_parser()
    try:
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # --help
            return int(exc.code or 0)
        args = _merge_config(args)
        return COMMANDS[args.command](args)
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NonTerminationError, RuntimeError, ArithmeticError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
