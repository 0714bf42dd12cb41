"""Command-line entry point: ``thermix <subcommand> config.json [--seed S] [--out DIR]``.

Each run validates its JSON config, writes CSV outputs with round-trip float
formatting and a ``manifest.json`` that echoes the resolved configuration.
Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .dense import (DimensionError, RegionSplit, correlation_decay_profile, embed_operator,
                    gibbs_state, log_partition_function, partial_trace, von_neumann_entropy)
from .hamiltonian import (PAULI_X, PAULI_Z, HamiltonianError, assemble_dense,
                          build_hamiltonian, spec_from_json)
from .metts import (ChainConfig, CollapseError, estimate_observable, run_walkers,
                    verify_metts_identity)
from .mixture import PlanError, build_mixture, plan_blocks
from .mps import MPSError, save_mps
from .recovery import (RecoveryError, bridge_operator, max_bridge_window, recovery_profile,
                       truncate_bridge)
from .tangent import TangentError, dense_quench_reference, quench_protocol
from .trotter import EvolutionError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

_HAM = {
    "type": "object",
    "required": ["preset", "n"],
    "properties": {
        "preset": {"enum": ["tfim", "heisenberg", "custom"]},
        "n": {"type": "integer", "minimum": 1},
        "J": {"type": "number"}, "g": {"type": "number"},
        "boundary": {"enum": ["open", "periodic"]},
        "normalize": {"type": "boolean"},
        "terms": {"type": "array"},
    },
}
_COMMON = {"hamiltonian": _HAM, "seed": {"type": "integer", "minimum": 0},
           "out": {"type": "string"}}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_INT1 = {"type": "integer", "minimum": 1}
_INT0 = {"type": "integer", "minimum": 0}

SCHEMAS = {
    "gibbs": ({"temperature": _POS}, ["hamiltonian", "temperature"], {}),
    "metts": ({"beta": _NONNEG, "steps": _INT1, "burn_in": _INT0, "walkers": _INT1,
               "dmax": _INT1, "tol": _NONNEG, "dtau": _POS,
               "schedule": {"enum": ["alternating", "fixed-z"]},
               "verify": {"type": "boolean"}, "save_states": {"type": "boolean"}},
              ["hamiltonian", "beta", "steps"],
              {"burn_in": 0, "walkers": 1, "dmax": 64, "tol": 0.0, "dtau": 0.05,
               "schedule": "alternating", "verify": False, "save_states": True, "seed": 0}),
    "recovery": ({"temperature": _POS,
                  "buffer_sizes": {"type": "array", "items": _INT1, "minItems": 3},
                  "kmap": {"type": "boolean"},
                  "bridge_windows": {"type": "array", "items": _INT0}},
                 ["hamiltonian", "temperature", "buffer_sizes"],
                 {"kmap": True, "bridge_windows": []}),
    "mixture": ({"temperature": _POS, "l": _INT1, "c_width": _INT0,
                 "eps": {"type": "number", "exclusiveMinimum": 0}, "xi": _POS},
                ["hamiltonian", "temperature", "l", "c_width"], {}),
    "quench": ({"beta": _NONNEG, "steps": _INT1, "burn_in": _INT0, "walkers": _INT1,
                "dmax": _INT1, "dtau": _POS, "flip_site": _INT0,
                "operator": {"enum": ["X", "Y", "Z"]},
                "times": {"type": "array", "items": _NONNEG, "minItems": 1},
                "dt": _POS, "method": {"enum": ["tebd", "tdvp"]},
                "observables": {"type": "array", "items": {"enum": ["Z", "X"]}, "minItems": 1},
                "reference": {"type": "boolean"}},
               ["hamiltonian", "beta", "steps", "flip_site", "times"],
               {"burn_in": 0, "walkers": 1, "dmax": 32, "dtau": 0.05, "operator": "X",
                "dt": 0.05, "method": "tebd", "observables": ["Z"], "reference": True,
                "seed": 0}),
}

_UNITARIES = {"X": PAULI_X, "Z": PAULI_Z, "Y": np.array([[0, -1j], [1j, 0]])}


class ConfigError(ValueError):
    pass


def schema_for(command: str) -> dict:
    props, required, _ = SCHEMAS[command]
    return {"type": "object", "properties": {**_COMMON, **props}, "required": required,
            "additionalProperties": False}


def resolve_config(command: str, raw: dict, seed=None, out=None) -> dict:
    """Validate ``raw`` and fill defaults and command-line overrides."""
    cfg = copy.deepcopy(raw)
    if seed is not None:
        cfg["seed"] = seed
    if out is not None:
        cfg["out"] = str(out)
    try:
        jsonschema.validate(cfg, schema_for(command))
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {exc.message}") from None
    for key, val in SCHEMAS[command][2].items():
        cfg.setdefault(key, val)
    if "out" not in cfg:
        raise ConfigError("no output directory: give 'out' in the config or --out")
    return cfg


# ------------------------------------------------------------------ writers

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: Path, header, rows) -> None:
    """Header row, ``.`` decimal separator, shortest round-trip floats.
    Complex cells must already be split into re/im columns."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj) if np.isfinite(obj) else str(float(obj))
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_json(path: Path, data) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ------------------------------------------------------------------ commands

def _hamiltonian(cfg):
    try:
        return build_hamiltonian(spec_from_json(cfg["hamiltonian"]))
    except (HamiltonianError, KeyError, TypeError) as exc:
        raise ConfigError(f"hamiltonian: {exc}") from None


def cmd_gibbs(cfg: dict, out: Path) -> list:
    h = _hamiltonian(cfg)
    T = cfg["temperature"]
    rho = gibbs_state(h, T)
    n = h.n
    hmat = assemble_dense(h)
    rows = [("energy", "", float(np.trace(hmat @ rho).real)),
            ("entropy", "", von_neumann_entropy(rho)),
            ("log_partition", "", log_partition_function(h, 1.0 / T))]
    for c in range(1, n):
        rows.append(("cut_entropy", c, von_neumann_entropy(partial_trace(rho, range(c), n))))
    for name, op in (("Z", PAULI_Z), ("X", PAULI_X)):
        for k in range(n):
            rows.append((name, k, float(np.trace(embed_operator(op, [k], n) @ rho).real)))
    write_csv(out / "gibbs.csv", ["quantity", "site", "value"], rows)
    files = ["gibbs.csv"]
    if n >= 4:
        prof = correlation_decay_profile(rho)
        write_csv(out / "correlations.csv", ["distance", "correlation"],
                  zip(prof.distances, prof.correlations))
        files.append("correlations.csv")
    return files


def _chain_config(cfg, beta):
    return ChainConfig(beta=beta, steps=cfg["steps"], burn_in=cfg["burn_in"], dmax=cfg["dmax"],
                       tol=cfg.get("tol", 0.0), schedule=cfg.get("schedule", "alternating"),
                       seed=cfg["seed"], dtau=cfg["dtau"])


def cmd_metts(cfg: dict, out: Path) -> list:
    h = _hamiltonian(cfg)
    chain = _chain_config(cfg, cfg["beta"])
    try:
        chain.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    ens = run_walkers(chain, h, cfg["walkers"])
    files = []
    header = ["step", "basis_string", "energy", "log_weight", "bond_max"]
    for w, recs in sorted(ens.metadata["records"].items()):
        name = f"chain_{w}.csv"
        write_csv(out / name, header, ([r[k] for k in header] for r in recs))
        files.append(name)
    est = estimate_observable(ens, h)
    write_csv(out / "summary.csv", ["observable", "mean", "stderr", "tau", "samples"],
              [("energy", est.mean, est.stderr if est.stderr is not None else float("nan"),
                est.tau if est.tau is not None else float("nan"), est.samples)])
    files.append("summary.csv")
    samples = []
    if cfg["save_states"]:
        (out / "samples").mkdir(exist_ok=True)
        for j, (w, s) in enumerate(zip(ens.metadata["walkers"], ens.states)):
            name = f"samples/w{int(w)}_{j:05d}.mps"
            save_mps(s, out / name)
            samples.append(name)
    extra = {"ensemble": {"samples": samples, "weights": ens.weights,
                          "caveat": ens.metadata["caveat"]}}
    if cfg["verify"]:
        dist = verify_metts_identity(h, cfg["beta"])
        write_csv(out / "identity_check.csv", ["n", "beta", "trace_distance"],
                  [(h.n, cfg["beta"], dist)])
        files.append("identity_check.csv")
    return files + samples, extra


def cmd_recovery(cfg: dict, out: Path):
    h = _hamiltonian(cfg)
    T = cfg["temperature"]
    prof = recovery_profile(h, T, cfg["buffer_sizes"], with_kmap=cfg["kmap"])
    cols = ["buffer_width", "trace_error_petz", "trace_error_kmap", "cmi", "bridge_defect"]
    write_csv(out / "profile.csv", cols, ([r[c] for c in cols] for r in prof.rows()))
    write_json(out / "profile_fit.json", {"exp_linear": prof.fit_linear,
                                          "exp_sqrt": prof.fit_sqrt,
                                          "monotone": prof.monotone})
    files = ["profile.csv", "profile_fit.json"]
    if cfg["bridge_windows"]:
        split = RegionSplit.centered(h.n, max(cfg["buffer_sizes"]))
        bridge = bridge_operator(h, split, T)
        rows = [("full", bridge.defect, bridge.condition_number)]
        for t in cfg["bridge_windows"]:
            tb, d = truncate_bridge(bridge, t)
            rows.append((t, d, tb.condition_number))
        write_csv(out / "bridge.csv", ["window", "defect", "condition_number"], rows)
        files.append("bridge.csv")
    return files


def cmd_mixture(cfg: dict, out: Path):
    h = _hamiltonian(cfg)
    try:
        plan = plan_blocks(h.n, cfg["l"], cfg["c_width"], cfg.get("eps"), cfg.get("xi"))
    except PlanError as exc:
        raise ConfigError(str(exc)) from None
    ens, audit = build_mixture(h, cfg["temperature"], plan)
    (out / "terms").mkdir(exist_ok=True)
    terms = []
    for j, s in enumerate(ens.states):
        name = f"terms/term_{j:05d}.mps"
        save_mps(s, out / name)
        terms.append({"p": float(ens.weights[j]), "file": name})
    write_csv(out / "audit.csv", ["term_id", "cut", "rank", "bound"],
              ((r.term, r.cut, r.rank, r.bound) for r in audit.records))
    write_json(out / "mixture.json", {"terms": terms, "audit": audit.summary(),
                                      "plan": {"ranges": plan.ranges(),
                                               "registers": plan.registers,
                                               "metadata": plan.metadata}})
    return ["audit.csv", "mixture.json"] + [t["file"] for t in terms]


def cmd_quench(cfg: dict, out: Path):
    h = _hamiltonian(cfg)
    if cfg["flip_site"] >= h.n:
        raise ConfigError("flip_site outside the chain")
    chain = _chain_config(cfg, cfg["beta"])
    ens = run_walkers(chain, h, cfg["walkers"])
    u = _UNITARIES[cfg["operator"]]
    rows = quench_protocol(ens, u, [cfg["flip_site"]], h, cfg["times"], cfg["method"],
                           cfg["dmax"], cfg["dt"], tuple(cfg["observables"]))
    header = ["time", "site", "observable", "mean", "stderr", "method", "Dmax"]

    def table(rs):
        return ((r.time, r.site, r.observable, r.mean, r.stderr, r.method,
                 "" if r.dmax is None else r.dmax) for r in rs)

    write_csv(out / "trajectory.csv", header, table(rows))
    files = ["trajectory.csv"]
    if cfg["reference"] and h.n <= 12:
        ref = dense_quench_reference(gibbs_state(h, 1.0 / cfg["beta"]) if cfg["beta"] > 0
                                     else np.eye(2 ** h.n) / 2 ** h.n,
                                     u, [cfg["flip_site"]], h, cfg["times"],
                                     tuple(cfg["observables"]))
        write_csv(out / "reference.csv", header, table(ref))
        files.append("reference.csv")
    return files


COMMANDS = {"gibbs": cmd_gibbs, "metts": cmd_metts, "recovery": cmd_recovery,
            "mixture": cmd_mixture, "quench": cmd_quench}

_NUMERICAL = (np.linalg.LinAlgError, EvolutionError, RecoveryError, TangentError,
              CollapseError, MPSError, FloatingPointError)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="thermix", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"thermix {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=f"run the {name} workflow")
        sp.add_argument("config", type=Path, help="JSON configuration file")
        sp.add_argument("--seed", type=int, default=None, help="override the master seed")
        sp.add_argument("--out", type=Path, default=None, help="override the output directory")
    return p


def run(command: str, raw: dict, seed=None, out=None) -> dict:
    """Execute one subcommand programmatically; returns the manifest."""
    cfg = resolve_config(command, raw, seed, out)
    outdir = Path(cfg["out"])
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        result = COMMANDS[command](cfg, outdir)
    except (DimensionError, PlanError) as exc:
        raise ConfigError(str(exc)) from None
    files, extra = (result if isinstance(result, tuple) else (result, {}))
    manifest = {"artifact": "artifact", "package": "thermix", "version": __version__,
                "command": command, "config": cfg, "outputs": sorted(files),
                "numpy": np.__version__, **extra}
    write_json(outdir / "manifest.json", manifest)
    return manifest


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"thermix: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not isinstance(raw, dict):
        print("thermix: config must be a JSON object", file=sys.stderr)
        return EXIT_CONFIG
    try:
        run(args.command, raw, args.seed, args.out)
    except ConfigError as exc:
        print(f"thermix: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERICAL as exc:
        print(f"thermix: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
