"""Command-line front end: ``tvem generate | train | compare | eval``.

Exit codes: 0 success, 2 input or configuration error, 3 training stopped at
``max_iter`` without converging, 4 free-energy monotonicity violation.
"""

import argparse
import csv
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__, oracle
from .errors import ConfigError, InvalidInputError, MonotonicityViolation, SpaceTooLargeError, TvemError
from .estep import EStepConfig, run_estep
from .models import BinarySparseCoding, GaussianMixture, make_model, model_from_dict
from .posterior import VariationalCollection, free_energy_terms
from .states import enum_cap
from .synthetic import match_dictionary, match_means, separated_gmm, sparse_coding_truth
from .trainer import TRACE_COLUMNS, Checkpoint, TrainerConfig, init_sets, make_rng, train

EXIT_OK, EXIT_INPUT, EXIT_MAX_ITER, EXIT_MONOTONE = 0, 2, 3, 4

MODEL_KEYS = ("model", "C", "H", "D", "floors")
TRAINER_KEYS = ("S", "estep", "max_iter", "eps_rel", "seed", "monotone", "timing", "checkpoint_every")
GENERATE_KEYS = ("model", "C", "H", "D", "N", "seed", "params", "random", "floors")
COMPARE_KEYS = ("S_list", "truth")
EVAL_KEYS = ("eval_rounds",)


# -- files ------------------------------------------------------------------------------


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def load_json(path, what="config"):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {what} {path}: {exc.strerror}")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}")
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return doc


def write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, allow_nan=False)
        fh.write("\n")


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_data(path, data, integer=False):
    D = data.shape[1]
    rows = data.astype(np.int64) if integer else data
    write_csv(path, [f"d{d + 1}" for d in range(D)], rows.tolist())


def read_data(path):
    """Data CSV with a header row; returns an ``(N, D)`` float array."""
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise InvalidInputError(f"cannot read data {path}: {exc.strerror}")
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or any(not h.strip() for h in header):
            raise InvalidInputError(f"{path}:1: missing or empty header row")
        rows = []
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise InvalidInputError(
                    f"{path}:{reader.line_num}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise InvalidInputError(f"{path}:{reader.line_num}: {exc}")
    if not rows:
        raise InvalidInputError(f"{path}: no data rows")
    return np.array(rows, dtype=float)


# -- config handling --------------------------------------------------------------------


def _require(cfg, key, kind, minimum=None):
    if key not in cfg:
        raise ConfigError(f"field '{key}': required")
    value = cfg[key]
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"field '{key}': must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"field '{key}': must be >= {minimum}, got {value!r}")
    return value


def _check_keys(cfg, allowed, where):
    unknown = sorted(set(cfg) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {unknown}")


def build_model(cfg, D=None):
    kind = cfg.get("model")
    if kind is None:
        raise ConfigError("field 'model': required")
    D_cfg = cfg.get("D")
    if D is not None and D_cfg is not None and int(D_cfg) != D:
        raise InvalidInputError(f"field 'D': config says {D_cfg}, data has {D} columns")
    D = D if D is not None else _require(cfg, "D", int, 1)
    dims = {}
    if kind == "bsc":
        dims["H"] = _require(cfg, "H", int, 1)
    else:
        dims["C"] = _require(cfg, "C", int, 1)
    floors = cfg.get("floors") or {}
    names = {"variance": "var_floor", "pi": "pi_floor", "rate": "rate_floor", "prior": "prior_floor"}
    try:
        kwargs = {names[k]: float(v) for k, v in floors.items()}
    except KeyError as exc:
        raise ConfigError(f"field 'floors': unknown floor {exc}")
    try:
        return make_model(kind, D, **dims, **kwargs)
    except TypeError as exc:
        raise ConfigError(f"field 'floors': {exc}")


def trainer_config(cfg, args):
    tc = {k: cfg[k] for k in TRAINER_KEYS if k in cfg}
    if args.seed is not None:
        tc["seed"] = args.seed
    if args.assert_monotone is not None:
        tc["monotone"] = "assert" if args.assert_monotone == "on" else "warn"
    try:
        return TrainerConfig.from_dict(tc)
    except TypeError as exc:
        raise ConfigError(str(exc))


def _threads(args):
    if args.threads is not None and args.threads < 0:
        raise ConfigError("--threads must be >= 0")
    return 0 if args.threads is None else args.threads


def _out_dir(args):
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


# -- generate ---------------------------------------------------------------------------


def cmd_generate(args):
    cfg = load_json(args.config)
    _check_keys(cfg, GENERATE_KEYS, args.config)
    N = _require(cfg, "N", int, 1)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("field 'seed': must be a non-negative integer")
    model = build_model(cfg)
    rng = make_rng(seed)
    if "params" in cfg:
        try:
            params = model.params_from_dict({"params": cfg["params"]})
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"field 'params': {exc}")
    else:
        opts = dict(cfg.get("random") or {})
        try:
            if isinstance(model, GaussianMixture) and "separation" in opts:
                params = separated_gmm(model.C, model.D, rng, **opts)
            elif isinstance(model, BinarySparseCoding):
                params = sparse_coding_truth(model.D, model.H, rng, **opts)
            else:
                params = model.random_params(rng, **opts)
        except TypeError as exc:
            raise ConfigError(f"field 'random': {exc}")
    model.validate_params(params)
    data, states = model.sample(params, N, rng)
    out = _out_dir(args)
    data_path = os.path.join(out, "data.csv")
    truth_path = os.path.join(out, "truth.json")
    write_data(data_path, data, integer=model.count_data)
    truth = model.params_to_dict(params)
    truth["seed"] = seed
    truth["states"] = np.asarray(states).tolist()
    write_json(truth_path, truth)
    print(json.dumps({"data": data_path, "truth": truth_path, "N": N, "D": model.D}))
    return EXIT_OK


# -- train ------------------------------------------------------------------------------


def _load_inputs(args, extra_keys=()):
    cfg = load_json(args.config) if args.config else {}
    _check_keys(cfg, MODEL_KEYS + TRAINER_KEYS + extra_keys + ("init_params",), args.config or "config")
    data = read_data(args.data)
    model = build_model(cfg, D=data.shape[1])
    data = model.check_data(data)
    return cfg, data, model


def _initial_params(cfg, model, base_dir):
    path = cfg.get("init_params")
    if path is None:
        return None
    path = path if os.path.isabs(path) else os.path.join(base_dir, path)
    m2, params = model_from_dict(load_json(path, "parameters"))
    if (m2.kind, m2.space, m2.D) != (model.kind, model.space, model.D):
        raise InvalidInputError("init_params do not match the configured model")
    return params


def cmd_train(args):
    cfg, data, model = _load_inputs(args)
    out = _out_dir(args)
    config = trainer_config(cfg, args)
    ckpt_path = os.path.join(out, "checkpoint.json")
    if config.checkpoint_every:
        config.checkpoint_path = ckpt_path
    config.validate(model)
    base = os.path.dirname(os.path.abspath(args.config)) if args.config else "."
    params = _initial_params(cfg, model, base)
    resume = None
    if args.resume:
        resume = Checkpoint.load(args.resume)
        if (resume.model.kind, resume.model.space, resume.model.D) != (model.kind, model.space, model.D):
            raise InvalidInputError("checkpoint does not match the configured model")
        resume.K.refresh(model, resume.params, data)

    paths = {
        "params": os.path.join(out, "params.json"),
        "trace": os.path.join(out, "trace.csv"),
        "states": os.path.join(out, "states.json"),
    }
    if config.checkpoint_every:
        paths["checkpoint"] = ckpt_path
    inputs = {"data": {"path": args.data, "sha256": sha256(args.data)}}
    if args.config:
        inputs["config"] = {"path": args.config, "sha256": sha256(args.config)}
    if args.resume:
        inputs["resume"] = {"path": args.resume, "sha256": sha256(args.resume)}
    resolved = {k: cfg[k] for k in MODEL_KEYS if k in cfg}
    resolved["D"] = model.D
    resolved.update(config.to_dict())
    resolved.pop("checkpoint_path", None)
    manifest = {
        "artifact": "tvem",
        "version": __version__,
        "command": "train",
        "config": resolved,
        "seed": config.seed,
        "threads": _threads(args),
        "enum_cap": enum_cap(),
        "digest": "sha256",
        "inputs": inputs,
        "outputs": paths,
    }
    write_json(os.path.join(out, "manifest.json"), manifest)

    try:
        result = train(model, data, config, params=params, resume=resume)
    except MonotonicityViolation as exc:
        dump = os.path.join(out, "monotonicity_violation.json")
        write_json(dump, _jsonable(exc.record))
        print(f"tvem: {exc} (diagnostics in {dump})", file=sys.stderr)
        return EXIT_MONOTONE
    doc = model.params_to_dict(result.params)
    doc["seed"] = config.seed
    write_json(paths["params"], doc)
    rows = [[r.iter, r.F_after_E, r.F_after_M, r.wall_ms, r.replacements] for r in result.trace]
    write_csv(paths["trace"], TRACE_COLUMNS, rows)
    write_json(paths["states"], {"model": model.kind, "S": result.K.S, "states": result.K.to_list()})
    summary = {"converged": result.converged, "iterations": result.iterations, "F": result.F}
    print(json.dumps(summary))
    return EXIT_OK if result.converged else EXIT_MAX_ITER


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else repr(x)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# -- compare ----------------------------------------------------------------------------


def recovery_error(model, params, truth):
    """Distance to ground truth under the best (signed) permutation."""
    if truth is None:
        return None
    if isinstance(model, BinarySparseCoding):
        _, _, cos = match_dictionary(params.W, truth.W)
        return float(1.0 - cos.min())
    field = "means" if isinstance(model, GaussianMixture) else "rates"
    _, dist = match_means(getattr(params, field), getattr(truth, field))
    return float(dist.max())


def _converged(F, F_prev, eps_rel):
    return abs(F - F_prev) <= eps_rel * (1.0 + abs(F))


def _iterate_oracle(step, F_of, params, max_iter, eps_rel):
    """Run an oracle iteration until the same convergence rule as the trainer holds."""
    F_prev, streak, it = F_of(params, None), 0, 0
    state = None
    while it < max_iter and streak < 3:
        state, params = step(params, state)
        F = F_of(params, state)
        streak = streak + 1 if _converged(F, F_prev, eps_rel) else 0
        F_prev, it = F, it + 1
    return params, state, F_prev, it, streak >= 3


def _nan_to_none(x):
    return None if x is None or not np.isfinite(x) else float(x)


def cmd_compare(args):
    cfg, data, model = _load_inputs(args, COMPARE_KEYS)
    config = trainer_config(cfg, args)
    config.validate(model)
    _threads(args)
    truth_path = args.truth or cfg.get("truth")
    truth = None
    if truth_path:
        m2, truth = model_from_dict(load_json(truth_path, "ground truth"))
        if (m2.kind, m2.space, m2.D) != (model.kind, model.space, model.D):
            raise InvalidInputError("ground truth does not match the configured model")
    base = os.path.dirname(os.path.abspath(args.config)) if args.config else "."
    params0 = _initial_params(cfg, model, base)
    if params0 is None:
        params0 = model.init_params(data, make_rng(config.seed, 0, 0))

    card = model.space.cardinality
    try:
        oracle.joint_table(model, params0, data[:1])
        feasible = True
    except SpaceTooLargeError:
        feasible = False
    S_list = cfg.get("S_list")
    if S_list is None:
        S_list = list(range(1, card + 1)) if card <= 16 else [1, 2, 4, 8]
    if not S_list or any(isinstance(S, bool) or not isinstance(S, int) or S < 1 for S in S_list):
        raise ConfigError("field 'S_list': must be a non-empty list of positive integers")

    def L_of(params):
        return oracle.log_likelihood(model, params, data) if feasible else None

    rows = []
    for S in S_list:
        run_cfg = TrainerConfig.from_dict({**config.to_dict(), "S": min(S, card)})
        res = train(model, data, run_cfg, params=params0)
        L = L_of(res.params)
        rows.append({
            "method": "tvem", "S": S, "F": res.F, "log_likelihood": L,
            "gap": None if L is None else L - res.F,
            "iterations": res.iterations, "converged": res.converged,
            "recovery_error": recovery_error(model, res.params, truth),
        })

    null_row = {"F": None, "log_likelihood": None, "gap": None, "iterations": None,
                "converged": None, "recovery_error": None}
    if feasible:
        params, _, L, its, conv = _iterate_oracle(
            lambda p, _: (None, oracle.exact_em_step(model, p, data)),
            lambda p, _: oracle.log_likelihood(model, p, data),
            params0, config.max_iter, config.eps_rel,
        )
        rows.append({"method": "exact-em", "S": card, "F": L, "log_likelihood": L, "gap": 0.0,
                     "iterations": its, "converged": conv,
                     "recovery_error": recovery_error(model, params, truth)})

        def hard_step(p, _):
            return oracle.hard_em_step(model, p, data)

        def hard_F(p, states):
            if states is None:
                states = oracle.hard_em_step(model, p, data)[0]
            return oracle.hard_free_energy(model, p, data, states)

        params, _, F_hard, its, conv = _iterate_oracle(hard_step, hard_F, params0, config.max_iter, config.eps_rel)
        L = L_of(params)
        rows.append({"method": "hard-em", "S": 1, "F": F_hard, "log_likelihood": L, "gap": L - F_hard,
                     "iterations": its, "converged": conv,
                     "recovery_error": recovery_error(model, params, truth)})
    else:
        rows.append({"method": "exact-em", "S": None, **null_row})
        rows.append({"method": "hard-em", "S": 1, **null_row})

    report = {
        "model": model.kind,
        "N": int(data.shape[0]),
        "D": model.D,
        "space_size": card if card < 2**63 else str(card),
        "oracle_available": feasible,
        "seed": config.seed,
        "data_sha256": sha256(args.data),
        "rows": [{k: (_nan_to_none(v) if isinstance(v, float) else v) for k, v in r.items()} for r in rows],
    }
    text = json.dumps(report, indent=2)
    if args.out:
        write_json(os.path.join(_out_dir(args), "report.json"), report)
    print(text)
    return EXIT_OK


# -- eval -------------------------------------------------------------------------------


def cmd_eval(args):
    model, params = model_from_dict(load_json(args.params, "parameters"))
    data = read_data(args.data)
    if data.shape[1] != model.D:
        raise InvalidInputError(f"parameters expect D={model.D}, data has {data.shape[1]} columns")
    data = model.check_data(data)
    cfg = load_json(args.config) if args.config else {}
    _check_keys(cfg, MODEL_KEYS + TRAINER_KEYS + EVAL_KEYS + COMPARE_KEYS + ("init_params",),
                args.config or "config")
    estep = EStepConfig.from_dict(cfg.get("estep"))
    estep.validate(model)
    default_S = model.space.size if not model.space.is_binary else min(model.space.cardinality, 8)
    S = int(cfg.get("S", default_S))
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    rounds = int(cfg.get("eval_rounds", 1 if estep.is_full else 20))

    F_states = None
    if args.states:
        doc = load_json(args.states, "states")
        K = VariationalCollection.from_list(model.space, doc["states"])
        if K.N != data.shape[0]:
            raise InvalidInputError(f"states cover {K.N} datapoints, data has {data.shape[0]}")
        K.refresh(model, params, data)
        F_states = float(np.sum(free_energy_terms(K.log_joints)))
    else:
        K = init_sets(model, params, data, S, make_rng(seed, 0, 1))
        K.refresh(model, params, data)
    for r in range(rounds):
        K, _ = run_estep(model, params, data, K, estep, make_rng(seed, 1, r))
    F = float(np.sum(free_energy_terms(K.log_joints)))
    try:
        L = oracle.log_likelihood(model, params, data)
    except SpaceTooLargeError:
        L = None
    metrics = {
        "model": model.kind,
        "N": int(data.shape[0]),
        "S": K.S,
        "strategy": estep.strategy,
        "F": F,
        "F_states": F_states,
        "log_likelihood": L,
        "gap": None if L is None else L - F,
    }
    if args.out:
        write_json(os.path.join(_out_dir(args), "metrics.json"), metrics)
    print(json.dumps(metrics, indent=2))
    return EXIT_OK


# -- entry point ------------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON configuration file")
    common.add_argument("--seed", type=int, metavar="U64", help="override the configured seed")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--threads", type=int, metavar="N",
                        help="worker count (0 = auto); computation is vectorized in-process")
    common.add_argument("--assert-monotone", choices=("on", "off"),
                        help="raise (on) or warn (off) when the free energy decreases")

    parser = argparse.ArgumentParser(prog="tvem", description="Truncated variational EM.")
    parser.add_argument("--version", action="version", version=f"tvem {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="sample a synthetic dataset")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", parents=[common], help="fit a model with TV-EM")
    p.add_argument("data", help="data CSV")
    p.add_argument("--resume", metavar="PATH", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", parents=[common], help="TV-EM versus exact and hard EM")
    p.add_argument("data", help="data CSV")
    p.add_argument("--truth", metavar="PATH", help="ground-truth parameters JSON")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("eval", parents=[common], help="free energy and likelihood at fixed parameters")
    p.add_argument("data", help="data CSV")
    p.add_argument("params", help="parameters JSON")
    p.add_argument("--states", metavar="PATH", help="variational states JSON to start from")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    if args.command == "generate" and not args.config:
        print("tvem: generate needs --config", file=sys.stderr)
        return EXIT_INPUT
    if args.seed is not None and args.seed < 0:
        print("tvem: --seed must be non-negative", file=sys.stderr)
        return EXIT_INPUT
    try:
        _threads(args)
        return args.func(args)
    except MonotonicityViolation as exc:
        print(f"tvem: {exc}", file=sys.stderr)
        return EXIT_MONOTONE
    except (TvemError, ValueError, KeyError, OSError) as exc:
        print(f"tvem: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
