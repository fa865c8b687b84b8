"""Command line entry point: ``charcirc synth|learn|eval|quad-study``.

Every command checks its arguments and inputs, computes everything in
memory, then writes its files atomically with ``manifest.json`` last.
Exit codes: 0 success, 2 configuration error, 3 data or I/O error,
4 numeric failure.
"""
from __future__ import annotations

import argparse
import hashlib
import os
import sys
import time
import warnings
from importlib import metadata

import numpy as np

from .circuit import canonical_json, load_circuit, to_json, write_text_atomic
from .data import GENERATORS, MAX_DISCRETE_STATES, csv_text, dataset_manifest, file_sha256, load_csv
from .distance import CfdConfig, EcfModel, cfd_profile
from .errors import (
    ConfigError,
    DataError,
    DimensionError,
    IncompatibleCircuitsError,
    InvalidParameterError,
    MomentDoesNotExistError,
    NumericError,
    QuadratureUnderflowWarning,
    StructuralError,
)
from .inference import log_density, marginal_log_density, moment
from .leaves import ALPHA_STABLE, ECF, GAUSSIAN
from .learning import (
    OptimizerConfig,
    StructureConfig,
    build_random_structure,
    fit_parameters,
    learn_structure,
)
from .quadrature import QuadratureConfig

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
METRICS = ("loglik", "cfd-vs-ecf", "moments", "marginal")
MANIFEST = "manifest.json"
_QUAD_FAMILIES = {ALPHA_STABLE, ECF}


class _Usage(ConfigError):
    pass


def sub_seed(seed: int, name: str) -> int:
    """Deterministic 32-bit seed for the named random stream under ``seed``."""
    digest = hashlib.sha256(f"{seed}/{name}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


# argument parsing -------------------------------------------------------------

def _int_list(text: str, what: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{what} must be comma-separated integers, got {text!r}") from None


def _float_list(text: str, what: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{what} must be comma-separated numbers, got {text!r}") from None


def _lr_pair(text: str) -> tuple:
    parts = text.split(":")
    if len(parts) != 2:
        raise ConfigError(f"--lr expects START:END, got {text!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError:
        raise ConfigError(f"--lr expects two numbers, got {text!r}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _Usage(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="root seed for every random stream")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads for density evaluation (default: $CHARCIRC_THREADS or 1)")

    parser = _Parser(prog="charcirc", description="Characteristic circuits for mixed tabular data.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="sample a synthetic benchmark")
    p.add_argument("--gen", choices=sorted(GENERATORS), required=True)
    p.add_argument("--n-train", type=int, default=800)
    p.add_argument("--n-test", type=int, default=800)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("learn", parents=[common], help="learn a circuit from a CSV file")
    p.add_argument("--train", required=True, help="training CSV with a header row")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--mode", choices=("structure", "params", "both"), default="structure")
    p.add_argument("--kinds", default=None, help="comma-separated column kinds (discrete/continuous)")
    p.add_argument("--max-states", type=int, default=MAX_DISCRETE_STATES,
                   help="columns with fewer distinct values are discrete")
    p.add_argument("--min-k", type=int, default=100)
    p.add_argument("--k-sum", type=int, default=2)
    p.add_argument("--k-prod", type=int, default=2)
    p.add_argument("--split", choices=("gtest", "rdc"), default="gtest")
    p.add_argument("--xi", type=float, default=None, help="RDC dependence threshold in (0, 1)")
    p.add_argument("--leaf", choices=(GAUSSIAN, ALPHA_STABLE, ECF), default=GAUSSIAN,
                   help="leaf family for continuous columns")
    p.add_argument("--lr", default="0.5:0.01", help="linear learning-rate schedule START:END")
    p.add_argument("--iters", type=int, default=300)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--freqs", type=int, default=100)
    p.add_argument("--batches", type=int, default=1)

    p = sub.add_parser("eval", parents=[common], help="evaluate a model on a CSV file")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--metrics", default="loglik", help=f"comma-separated subset of {','.join(METRICS)}")
    p.add_argument("--order", default=None, help="moment order vector, e.g. 1,0")
    p.add_argument("--keep", default=None, help="marginal variable indices, e.g. 0")
    p.add_argument("--point", default=None, help="marginal evaluation point, one value per kept index")
    p.add_argument("--degree", type=int, default=50, help="Gauss-Hermite degree for numeric inversion")
    p.add_argument("--freqs", type=int, default=100, help="Monte-Carlo frequencies per eta")
    p.add_argument("--out-dir", default=None, help="where report.json and cfd.csv go")

    p = sub.add_parser("quad-study", parents=[common], help="test log-likelihood across quadrature degrees")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--degrees", default="50,100,200,300")
    p.add_argument("--out-dir", required=True)
    return parser


# output staging -----------------------------------------------------------------

def _check_out_dir(path: str) -> None:
    """Fail before any compute when ``path`` cannot be created or written."""
    probe = os.path.abspath(path)
    if os.path.exists(probe) and not os.path.isdir(probe):
        raise OSError(f"output path {path} exists and is not a directory")
    while not os.path.exists(probe):
        parent = os.path.dirname(probe)
        if parent == probe:
            break
        probe = parent
    if not os.path.isdir(probe) or not os.access(probe, os.W_OK | os.X_OK):
        raise OSError(f"output directory {path} is not writable")


def _commit(out_dir: str, files: dict, manifest: dict) -> list:
    """Write ``files`` then the manifest; remove everything written if any write fails."""
    written = []
    created = not os.path.isdir(out_dir)
    try:
        os.makedirs(out_dir, exist_ok=True)
        for name, text in files.items():
            path = os.path.join(out_dir, name)
            write_text_atomic(path, text)
            written.append(path)
        manifest = dict(manifest, outputs=sorted(files) + [MANIFEST])
        path = os.path.join(out_dir, MANIFEST)
        write_text_atomic(path, canonical_json(manifest) + "\n")
        written.append(path)
    except OSError as exc:
        for path in written:
            try:
                os.remove(path)
            except OSError:
                pass
        if created:
            try:
                os.rmdir(out_dir)
            except OSError:
                pass
        raise OSError(f"cannot write outputs to {out_dir}: {exc.strerror or exc}") from None
    return written


def _manifest(args, seeds: dict, inputs: list, started: float) -> dict:
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}
    try:
        version = metadata.version("charcirc")
    except metadata.PackageNotFoundError:
        version = "unknown"
    return {
        "command": args.command,
        "config": config,
        "seeds": seeds,
        "inputs": {p: file_sha256(p) for p in inputs},
        "version": version,
        "wall_clock_ms": int(round(1000 * (time.perf_counter() - started))),
    }


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _csv(header, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(v if isinstance(v, str) else _fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def _notice(msg: str) -> None:
    print(f"notice: {msg}", file=sys.stderr)


# shared loading -----------------------------------------------------------------

def _load_model(path: str):
    try:
        return load_circuit(path)
    except OSError as exc:
        raise DataError(f"cannot read model {path}: {exc.strerror or exc}") from None


def _load_eval_data(path: str, circuit):
    data = load_csv(path)
    if data.dim != circuit.dim:
        raise DimensionError(f"{path} has {data.dim} columns but the model expects {circuit.dim}")
    if data.dropped_rows:
        _notice(f"dropped {data.dropped_rows} incomplete row(s) from {path}")
    return data


def _mean_loglik(circuit, X, degree: int, threads) -> tuple:
    """Mean log-density and the number of floored quadrature values."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", QuadratureUnderflowWarning)
        ll = log_density(circuit, X, QuadratureConfig(degree), on_underflow="floor", threads=threads)
    floored = sum(getattr(w.message, "count", 0) for w in caught
                  if issubclass(w.category, QuadratureUnderflowWarning))
    outside = int(np.sum(np.isneginf(ll)))
    if outside:
        _notice(f"{outside} row(s) hold discrete values outside the model's states (log-density -inf)")
    return float(np.mean(ll)), floored


def _families(circuit) -> set:
    return {circuit.nodes[i].leaf.family for i in circuit.leaf_ids}


# commands -----------------------------------------------------------------------

def cmd_synth(args, started: float) -> int:
    if args.n_train < 1 or args.n_test < 1:
        raise ConfigError("--n-train and --n-test must be positive")
    _check_out_dir(args.out_dir)
    seeds = {"data": sub_seed(args.seed, "data")}
    synth = GENERATORS[args.gen](args.n_train, args.n_test, seeds["data"])
    files = {
        "train.csv": csv_text(synth.train),
        "test.csv": csv_text(synth.test),
        "truth.json": to_json(synth.truth),
    }
    manifest = _manifest(args, seeds, [], started)
    manifest["dataset"] = dataset_manifest(synth.train, n_train=args.n_train, n_test=args.n_test)
    _commit(args.out_dir, files, manifest)
    print(f"wrote {len(files) + 1} files to {args.out_dir}")
    return EXIT_OK


def cmd_learn(args, started: float) -> int:
    seeds = {name: sub_seed(args.seed, name) for name in ("structure", "init", "optimizer")}
    policy = {"discrete": "categorical", "continuous": args.leaf}
    lr_start, lr_end = _lr_pair(args.lr)
    if args.xi is not None and args.split != "rdc":
        raise ConfigError("--xi only applies with --split rdc")
    if args.max_states < 2:
        raise ConfigError("--max-states must be at least 2")
    structure_cfg = StructureConfig(
        min_k=args.min_k, k_sum=args.k_sum, k_prod=args.k_prod, split_method=args.split,
        rdc_threshold=args.xi, leaf_policy=policy, seed=seeds["structure"],
    )
    optim_cfg = None
    if args.mode in ("params", "both"):
        optim_cfg = OptimizerConfig(
            lr_start=lr_start, lr_end=lr_end, iters=args.iters, eta=args.eta,
            num_freqs=args.freqs, batch_count=args.batches, seed=seeds["optimizer"],
        )
    schema = None
    if args.kinds is not None:
        schema = [k.strip() for k in args.kinds.split(",")]
        if any(k not in ("discrete", "continuous") for k in schema):
            raise ConfigError(f"--kinds entries must be discrete or continuous, got {args.kinds!r}")
    _check_out_dir(args.out_dir)

    data = load_csv(args.train, schema, args.max_states)
    if data.dropped_rows:
        _notice(f"dropped {data.dropped_rows} incomplete row(s) from {args.train}")
    if args.mode == "params":
        circuit = build_random_structure(
            data.dim, data.kinds, data.values, seed=seeds["init"], leaf_policy=policy
        )
        info = None
    else:
        circuit, info = learn_structure(data.values, structure_cfg, kinds=data.kinds, return_info=True)
    files = {}
    summary = {"mode": args.mode, "columns": dataset_manifest(data)["columns"], "rows": data.n_rows}
    if info is not None:
        summary["structure"] = {
            "max_depth": info.max_depth,
            "naive_factorizations": info.naive_factorizations,
            "forced_splits": info.forced_splits,
        }
    if optim_cfg is not None:
        fit = fit_parameters(circuit, data.values, optim_cfg)
        circuit = fit.circuit
        files["loss.csv"] = _csv(("iter", "loss", "lr"), [(str(i), loss, lr) for i, loss, lr in fit.trace])
        summary["params"] = {
            "best_iter": fit.best_iter,
            "first_loss": fit.trace[0][1],
            "last_loss": fit.trace[-1][1],
        }
    summary["circuit"] = circuit.summary()
    files["model.json"] = to_json(circuit)
    files["summary.json"] = canonical_json(summary) + "\n"
    _commit(args.out_dir, files, _manifest(args, seeds, [args.train], started))
    s = summary["circuit"]
    print(f"learned circuit: {s['nodes']['sum']} sum, {s['nodes']['product']} product, "
          f"{s['nodes']['leaf']} leaf nodes, depth {s['depth']}")
    if optim_cfg is not None:
        print(f"CFD loss {summary['params']['first_loss']:.6g} -> {summary['params']['last_loss']:.6g}")
    return EXIT_OK


def cmd_eval(args, started: float) -> int:
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = [m for m in metrics if m not in METRICS]
    if not metrics or unknown:
        raise ConfigError(f"--metrics must be a non-empty subset of {','.join(METRICS)}, got {args.metrics!r}")
    order = keep = point = None
    if "moments" in metrics:
        if args.order is None:
            raise ConfigError("the moments metric needs --order")
        order = _int_list(args.order, "--order")
        if any(k < 0 for k in order) or not any(order):
            raise ConfigError("--order needs non-negative integers with at least one positive entry")
    if "marginal" in metrics:
        if args.keep is None or args.point is None:
            raise ConfigError("the marginal metric needs --keep and --point")
        keep = _int_list(args.keep, "--keep")
        point = _float_list(args.point, "--point")
        if len(keep) != len(point):
            raise ConfigError(f"--keep has {len(keep)} indices but --point has {len(point)} values")
    if "cfd-vs-ecf" in metrics and args.out_dir is None:
        raise ConfigError("the cfd-vs-ecf metric writes cfd.csv and needs --out-dir")
    QuadratureConfig(args.degree)
    CfdConfig(num_freqs=args.freqs)
    if args.out_dir is not None:
        _check_out_dir(args.out_dir)

    circuit = _load_model(args.model)
    if order is not None and len(order) != circuit.dim:
        raise DimensionError(f"--order has {len(order)} entries but the model has {circuit.dim} variables")
    if keep is not None and any(not 0 <= k < circuit.dim for k in keep):
        raise DimensionError(f"--keep indices must lie in [0, {circuit.dim})")
    data = _load_eval_data(args.test, circuit)

    seeds = {"cfd": sub_seed(args.seed, "cfd")}
    report, files = {}, {}
    if "loglik" in metrics:
        ll, floored = _mean_loglik(circuit, data.values, args.degree, args.threads)
        report["loglik"] = ll
        print(f"loglik: {ll:.6f}")
        if floored:
            _notice(f"{floored} quadrature densities were non-positive and floored at 1e-300")
    if "cfd-vs-ecf" in metrics:
        exotic = _families(circuit) & _QUAD_FAMILIES
        if exotic:
            _notice(f"no closed form for {', '.join(sorted(exotic))} leaves; using Monte-Carlo CFD")
        profile = cfd_profile(circuit, EcfModel(data.values), cfg=CfdConfig(num_freqs=args.freqs, seed=seeds["cfd"]))
        files["cfd.csv"] = profile.to_csv()
        eta, value, stderr = profile.argmax
        report["cfd_vs_ecf"] = {"max_cfd": value, "argmax_eta": eta, "stderr": stderr}
        print(f"cfd-vs-ecf: max {value:.6g} (stderr {stderr:.2g}) at eta {eta:.6g}")
    if "moments" in metrics:
        label = ",".join(map(str, order))
        try:
            value = moment(circuit, order)
        except MomentDoesNotExistError as exc:
            report["moments"] = {"order": order, "value": None, "reason": str(exc)}
            _notice(f"moment {label} is undefined: {exc}")
        else:
            report["moments"] = {"order": order, "value": value}
            print(f"moment[{label}]: {value:.17g}")
    if "marginal" in metrics:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", QuadratureUnderflowWarning)
            value = marginal_log_density(circuit, keep, point, QuadratureConfig(args.degree), on_underflow="floor")
        report["marginal"] = {"keep": keep, "point": point, "log_density": value}
        print(f"marginal log-density at {point} over {keep}: {value:.6f}")
    if args.out_dir is not None:
        files["report.json"] = canonical_json(report) + "\n"
        _commit(args.out_dir, files, _manifest(args, seeds, [args.model, args.test], started))
    return EXIT_OK


def cmd_quad_study(args, started: float) -> int:
    degrees = _int_list(args.degrees, "--degrees")
    if not degrees:
        raise ConfigError("--degrees is empty")
    for d in degrees:
        QuadratureConfig(d)
    _check_out_dir(args.out_dir)
    circuit = _load_model(args.model)
    data = _load_eval_data(args.test, circuit)
    if not _families(circuit) & _QUAD_FAMILIES:
        _notice("model has no quadrature-dependent leaves; log-likelihood is degree-independent")
    rows = []
    for d in degrees:
        ll, floored = _mean_loglik(circuit, data.values, d, args.threads)
        rows.append((str(d), ll, str(floored)))
        print(f"degree {d}: loglik {ll:.6f}" + (f" ({floored} leaf evaluations floored)" if floored else ""))
    files = {"quad_study.csv": _csv(("degree", "loglik", "floored"), rows)}
    _commit(args.out_dir, files, _manifest(args, {}, [args.model, args.test], started))
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "learn": cmd_learn, "eval": cmd_eval, "quad-study": cmd_quad_study}


def main(argv=None) -> int:
    started = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        return COMMANDS[args.command](args, started)
    except _Usage as exc:
        print(f"charcirc: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"charcirc: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DimensionError, StructuralError, InvalidParameterError, IncompatibleCircuitsError) as exc:
        print(f"charcirc: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"charcirc: I/O error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"charcirc: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
