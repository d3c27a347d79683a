"""Command line front end: ``stacksvd {predict,simulate,estimate,generate}``.

Settings are resolved as flags > ``--config`` file (TOML) > defaults, and
the resolved values are written into every manifest. Errors print
``error[CODE]: message`` on stderr and exit with status 1 (2 for usage
errors).
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import os
import sys

import numpy as np

from . import __version__, linalg, theory
from . import estimators as est
from . import simulate as sim
from .errors import ConfigError, StackSVDError
from .io import read_matrix, write_matrix
from .model import GroundTruth, ProblemSpec, TableSet, alignment

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

DEFAULTS = {
    "theta": None,
    "c": None,
    "spec": None,
    "format": None,
    "output": None,
    "bisection_tol": theory.BISECTION_TOL,
    "subset_cap": theory.SUBSET_CAP,
    "svd_fallback": linalg.DENSE_THRESHOLD,
    # simulate / generate
    "d": 1000,
    "m_grid": None,
    "replicates": 10,
    "seed": 0,
    "noise": "gaussian",
    "methods": ",".join(sim.DEFAULT_METHODS),
    "weights": "oracle",
    "threads": None,
    # estimate
    "tables": None,
    "truth": None,
    "method": "both",
    "rank": 1,
    "center": False,
    "output_dir": ".",
    # generate from counts
    "counts": None,
    "ambient": "0",
    "splits": 1,
    "no_center": False,
}


# ---------------------------------------------------------------------------
# parsing helpers


def _floats(v):
    if v is None:
        return None
    if isinstance(v, (list, tuple)):
        return [float(x) for x in v]
    if isinstance(v, (int, float)):
        return [float(v)]
    return [float(x) for x in str(v).split(",") if x.strip()]


def _theta(v):
    """``"a,b"`` for rank 1; ``"a:b,c:d"`` gives one row per table."""
    if v is None:
        return None
    if isinstance(v, (list, tuple)):
        return np.array(v, dtype=float)
    rows = [r for r in str(v).split(",") if r.strip()]
    if any(":" in r for r in rows):
        return np.array([[float(x) for x in r.split(":")] for r in rows])
    return np.array([float(r) for r in rows])


def _ints(v):
    """``"500,1000"`` or ``"2..12"`` (inclusive range)."""
    if v is None:
        return None
    if isinstance(v, (list, tuple)):
        return [int(x) for x in v]
    if isinstance(v, int):
        return [v]
    s = str(v)
    if ".." in s:
        a, b = s.split("..")
        return list(range(int(a), int(b) + 1))
    return [int(x) for x in s.split(",") if x.strip()]


def _load_config(path):
    if not path:
        return {}
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = {k.replace("-", "_"): v for k, v in raw.items()}
    unknown = set(cfg) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def _resolve(args) -> dict:
    cfg = dict(DEFAULTS)
    cfg.update(_load_config(getattr(args, "config", None)))
    for k, v in vars(args).items():
        if k in ("cmd", "config", "func") or v is None:
            continue
        cfg[k] = v
    return cfg


def _spec(cfg) -> ProblemSpec:
    if cfg.get("spec"):
        file_cfg = _load_spec_file(cfg["spec"])
        theta, c = file_cfg.get("theta"), file_cfg.get("c")
    else:
        theta, c = cfg.get("theta"), cfg.get("c")
    if theta is None or c is None:
        raise ConfigError("a spec needs both theta and c (flags, config or --spec file)")
    return ProblemSpec(_theta(theta), _floats(c))


def _load_spec_file(path):
    try:
        if str(path).endswith(".json"):
            with open(path) as fh:
                return json.load(fh)
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read spec file {path}: {exc}") from exc


def _apply_tolerances(cfg):
    linalg.DENSE_THRESHOLD = int(cfg["svd_fallback"])


def _jsonable(cfg):
    out = {}
    for k, v in cfg.items():
        if isinstance(v, np.ndarray):
            v = v.tolist()
        out[k] = v
    return out


def _emit(text, path):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


# ---------------------------------------------------------------------------
# predict


def _predict_rank1(spec, cfg):
    tol = float(cfg["bisection_tol"])
    reports = {
        "svdstack": theory.predict_unweighted_svdstack(spec),
        "svdstack_binary": theory.predict_binary_svdstack(spec),
        "svdstack_weighted": theory.predict_weighted_svdstack(spec),
        "stacksvd": theory.predict_unweighted_stacksvd(spec),
        "stacksvd_binary": theory.predict_binary_stacksvd(spec),
        "stacksvd_weighted": theory.predict_weighted_stacksvd(spec, tol=tol),
    }
    out = {
        "predictions": {k: r.to_dict() for k, r in reports.items()},
        "thresholds": theory.detection_thresholds(spec).to_dict(),
        "optimal_weights": {
            "stacksvd": reports["stacksvd_weighted"].weights.tolist(),
            "svdstack": reports["svdstack_weighted"].weights.tolist(),
        },
    }
    if spec.m <= int(cfg["subset_cap"]):
        best = theory.predict_binary_stacksvd(spec, "best", max_tables=int(cfg["subset_cap"]))
        out["predictions"]["stacksvd_binary_best"] = best.to_dict()
    return out


def cmd_predict(cfg) -> int:
    spec = _spec(cfg)
    body = {"spec": spec.to_dict()}
    if spec.rank == 1:
        body.update(_predict_rank1(spec, cfg))
    else:
        body["components"] = [_predict_rank1(spec.column(j), cfg) for j in range(spec.rank)]
    body["rank_r"] = theory.predict_rank_r(spec, tol=float(cfg["bisection_tol"])).to_dict()

    fmt = cfg["format"] or "json"
    if fmt == "json":
        text = json.dumps(body, indent=2, default=float) + "\n"
    elif fmt == "csv":
        text = _predict_csv(body)
    else:
        raise ConfigError(f"predict supports json or csv output, not {fmt!r}")
    _emit(text, cfg["output"])
    return 0


def _predict_csv(body) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["component", "quantity", "method", "value"])
    parts = [body] if "components" not in body else body["components"]
    for j, part in enumerate(parts):
        for m, rep in part["predictions"].items():
            w.writerow([j, "overlap", m, repr(rep["overlap"])])
            w.writerow([j, "detectable", m, int(rep["detectable"])])
        for m, flag in part["thresholds"]["flags"].items():
            w.writerow([j, "threshold_flag", m, int(flag)])
            w.writerow([j, "threshold_margin", m, repr(part["thresholds"]["margins"][m])])
        for m, ws in part["optimal_weights"].items():
            for i, x in enumerate(ws):
                w.writerow([j, f"weight_{i}", m, repr(x)])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(cfg) -> int:
    spec = _spec(cfg)
    ds = _ints(cfg["d"])
    m_grid = _ints(cfg["m_grid"])
    methods = tuple(x.strip() for x in str(cfg["methods"]).split(",") if x.strip())
    plan = sim.ExperimentPlan(
        spec=spec,
        d=ds[0] if (len(ds) == 1 or m_grid) else tuple(ds),
        replicates=int(cfg["replicates"]),
        seed=int(cfg["seed"]),
        methods=methods,
        noise=cfg["noise"],
        m_grid=tuple(m_grid) if m_grid else None,
        weights=cfg["weights"],
        threads=int(cfg["threads"]) if cfg["threads"] else None,
    )
    res = sim.run_experiment(plan)
    out = cfg["output"]
    _emit(res.to_csv(), out)
    if out not in (None, "-"):
        side = {"plan": plan.to_dict(), "config": _jsonable(cfg), "version": __version__}
        with open(out + ".json", "w") as fh:
            json.dump(side, fh, indent=2, sort_keys=True, default=str)
    return 0


# ---------------------------------------------------------------------------
# estimate


def _read_tables(paths, fmt):
    if not paths:
        raise ConfigError("estimate needs --tables")
    if isinstance(paths, str):
        paths = [p for p in paths.split(",") if p]
    return TableSet([read_matrix(p, fmt) for p in paths])


def cmd_estimate(cfg) -> int:
    fmt = cfg["format"]
    ts = _read_tables(cfg["tables"], fmt)
    c = _floats(cfg["c"])
    c = np.asarray(c) if c is not None else ts.c
    rank = int(cfg["rank"])
    if cfg["center"]:
        ts = TableSet([est.center_columns(X) for X in ts.tables], ts.d)

    if cfg["theta"] is not None or cfg["spec"]:
        spec = _spec({**cfg, "c": c.tolist()})
        th_rows = spec.theta
        theta_info = [
            {"table": i, "theta": th_rows[i].tolist() if rank > 1 else float(th_rows[i, 0]), "method": "supplied"}
            for i in range(ts.m)
        ]
    else:
        if rank > 1:
            raise ConfigError("rank > 1 needs theta supplied via --theta or --spec")
        ests = est.estimate_thetas(ts, c)
        spec = ProblemSpec([e.theta for e in ests], c)
        theta_info = [{"table": i, **e.to_dict()} for i, e in enumerate(ests)]
    if spec.rank != rank:
        raise ConfigError(f"theta has rank {spec.rank} but --rank is {rank}")

    which = cfg["method"]
    if which not in ("stack", "svdstack", "both"):
        raise ConfigError("--method must be stack, svdstack or both")
    outdir = cfg["output_dir"]
    os.makedirs(outdir, exist_ok=True)
    ext = "csv" if fmt == "csv" else "bin"
    results = {}
    if which in ("stack", "both"):
        e = est.stack_svd_rank_r(ts, spec)
        results["stacksvd_weighted"] = e
    if which in ("svdstack", "both"):
        e = est.svd_stack_rank_r(ts, spec)
        results["svdstack_weighted"] = e

    w_stack = theory._stack_weights(spec.theta, spec.c)
    w_svd = theory._svdstack_weights(spec.theta, spec.c)
    with open(os.path.join(outdir, "theta.csv"), "w") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["table", "component", "theta", "beta_sq", "method", "reference", "weight_stacksvd", "weight_svdstack"])
        b2 = theory.beta_squared(spec.theta, spec.c)
        for i in range(ts.m):
            for j in range(rank):
                info = theta_info[i]
                wr.writerow([
                    i, j, repr(float(spec.theta[i, j])), repr(float(b2[i, j])),
                    info.get("method"), info.get("reference"),
                    repr(float(w_stack[i, j])), repr(float(w_svd[i, j])),
                ])

    summary = {"config": _jsonable(cfg), "theta": theta_info, "outputs": {}}
    truth = GroundTruth(read_matrix(cfg["truth"], fmt)) if cfg["truth"] else None
    for name, e in results.items():
        path = os.path.join(outdir, f"{name}.{ext}")
        write_matrix(path, e.vectors, ext)
        entry = {"file": path, "singular_values": e.singular_values.tolist(), "method": e.method}
        if truth is not None:
            entry["alignment"] = alignment(e, truth).to_dict()
        summary["outputs"][name] = entry
    with open(os.path.join(outdir, "estimate.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=str)
    return 0


# ---------------------------------------------------------------------------
# generate


def cmd_generate(cfg) -> int:
    outdir = cfg["output_dir"]
    os.makedirs(outdir, exist_ok=True)
    ext = cfg["format"] or "bin"
    if ext not in ("csv", "bin"):
        raise ConfigError("generate writes csv or bin")
    seed = int(cfg["seed"])
    files = []
    manifest = {"config": _jsonable(cfg), "seed": seed, "noise": cfg["noise"], "version": __version__}

    if cfg["counts"]:
        Y = read_matrix(cfg["counts"])
        lam = _floats(cfg["ambient"])
        ts = sim.count_pipeline(Y, lam if len(lam) > 1 else lam[0], int(cfg["splits"]), seed, center=not cfg["no_center"])
        truth = None
        manifest["source"] = "counts"
    else:
        spec = _spec(cfg)
        ds = _ints(cfg["d"])
        if len(ds) != 1:
            raise ConfigError("generate takes a single d")
        ts, truth = sim.generate_tables(spec, ds[0], cfg["noise"], seed)
        manifest["spec"] = spec.to_dict()
        manifest["d"] = ds[0]
        manifest["source"] = "model"

    for i, X in enumerate(ts.tables):
        p = os.path.join(outdir, f"table_{i}.{ext}")
        write_matrix(p, X, ext)
        files.append(p)
    manifest["tables"] = files
    if truth is not None:
        p = os.path.join(outdir, f"truth.{ext}")
        write_matrix(p, truth.v, ext)
        manifest["truth"] = p
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
    return 0


# ---------------------------------------------------------------------------


def _common(p):
    p.add_argument("--config", help="TOML file with default settings")
    p.add_argument("--theta", help="signal strengths, e.g. 2,1.3 or 2:1.5,2:1.5 for rank r")
    p.add_argument("--c", help="aspect ratios, e.g. 1,1")
    p.add_argument("--spec", help="TOML or JSON file with theta and c")
    p.add_argument("--format", help="output/input format (json|csv for predict; csv|bin for matrices)")
    p.add_argument("--bisection-tol", type=float, help=f"root-finding tolerance (default {theory.BISECTION_TOL})")
    p.add_argument("--subset-cap", type=int, help=f"max tables for subset enumeration (default {theory.SUBSET_CAP})")
    p.add_argument("--svd-fallback", type=int, help=f"dense SVD below this size (default {linalg.DENSE_THRESHOLD})")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stacksvd", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("predict", help="asymptotic overlaps, thresholds and weights")
    _common(p)
    p.add_argument("--output", "-o", help="output file (default stdout)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("simulate", help="Monte Carlo experiment")
    _common(p)
    p.add_argument("--d", help="column dimension or comma-separated grid")
    p.add_argument("--m-grid", help="table counts, e.g. 2..12")
    p.add_argument("--replicates", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--noise", choices=sim.NOISE_FAMILIES)
    p.add_argument("--methods", help=f"comma list from {','.join(sim.METHODS)}")
    p.add_argument("--weights", choices=("oracle", "estimated"))
    p.add_argument("--threads", type=int, help="worker threads (capped by SSVD_THREADS)")
    p.add_argument("--output", "-o", help="results CSV; a .json sidecar is written next to it")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate the shared subspace from data files")
    _common(p)
    p.add_argument("--tables", nargs="+", help="matrix files, one per table")
    p.add_argument("--truth", help="ground-truth V matrix file for alignment metrics")
    p.add_argument("--method", choices=("stack", "svdstack", "both"))
    p.add_argument("--rank", type=int)
    p.add_argument("--center", action="store_true", default=None, help="center table columns first")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("generate", help="write synthetic tables to disk")
    _common(p)
    p.add_argument("--d")
    p.add_argument("--seed", type=int)
    p.add_argument("--noise", choices=sim.NOISE_FAMILIES)
    p.add_argument("--counts", help="count matrix file; runs the count pipeline instead of the model")
    p.add_argument("--ambient", help="Poisson rate per split, comma-separated")
    p.add_argument("--splits", type=int)
    p.add_argument("--no-center", action="store_true", default=None)
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_generate)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    saved = linalg.DENSE_THRESHOLD
    try:
        cfg = _resolve(args)
        _apply_tolerances(cfg)
        return args.func(cfg)
    except StackSVDError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error[IO]: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error[INVALID_VALUE]: {exc}", file=sys.stderr)
        return 1
    finally:
        linalg.DENSE_THRESHOLD = saved


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
