"""Command-line front end.

Exit codes: 0 success, 2 validation failure, 3 parse error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import io
from .beyond import controlled_process, quantum_switch, switch_probabilities
from .classical import (
    IDLE,
    classical_statistics,
    embed_classical_model,
    extract_cpts,
    intervention_tables,
    pointer_families,
)
from .discovery import discovery_report
from .process import TERM_TOL, check_process, outcome_distribution
from .tensor import PSD_TOL
from .tomography import tomographic_discovery

EXIT_OK, EXIT_INVALID, EXIT_PARSE, EXIT_NUMERIC = 0, 2, 3, 4

_H = np.array([[1, 1], [1, -1]]) / math.sqrt(2)
GATES = {
    "I": np.eye(2), "X": np.array([[0, 1], [1, 0]]), "Y": np.array([[0, -1j], [1j, 0]]),
    "Z": np.diag([1, -1]), "H": _H, "S": np.diag([1, 1j]), "T": np.diag([1, np.exp(1j * math.pi / 4)]),
}
STATES = {
    "0": np.array([1, 0]), "1": np.array([0, 1]),
    "+": np.array([1, 1]) / math.sqrt(2), "-": np.array([1, -1]) / math.sqrt(2),
    "plus": np.array([1, 1]) / math.sqrt(2), "minus": np.array([1, -1]) / math.sqrt(2),
}


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("tolerance must be positive")
    return v


def _seed(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("seed must be non-negative")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="write the report here instead of stdout")
    common.add_argument("--format", choices=["json", "csv", "dot"], default="json")
    common.add_argument("--seed", type=_seed, default=0)
    common.add_argument("--shots", type=int, default=None)
    common.add_argument("--tol-psd", type=_positive, default=PSD_TOL)
    common.add_argument("--tol-term", type=_positive, default=TERM_TOL)

    p = argparse.ArgumentParser(prog="qcausal", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", parents=[common], help="check process-matrix invariants")
    v.add_argument("--input", required=True, help="process matrix JSON")

    b = sub.add_parser("born", parents=[common], help="outcome table from the Born rule")
    b.add_argument("--input", required=True, help="process matrix JSON")
    b.add_argument("--instruments", required=True, help="instruments JSON, one per lab")

    d = sub.add_parser("discover", parents=[common], help="causal discovery by term analysis")
    d.add_argument("--input", required=True, help="process matrix JSON")
    d.add_argument("--dag", help="declared DAG JSON to assess")
    d.add_argument("--tomography", action="store_true",
                   help="reconstruct from simulated tomography first")

    c = sub.add_parser("classical", parents=[common], help="classical model through its embedding")
    c.add_argument("--input", required=True, help="classical model JSON")
    c.add_argument("--interventions", default="",
                   help="comma-separated VAR=INTERVENTION, e.g. Z=do(1)")

    s = sub.add_parser("switch", parents=[common], help="quantum switch demonstration")
    s.add_argument("--ua", default="X", help=f"unitary at A: one of {sorted(GATES)} or a JSON matrix")
    s.add_argument("--ub", default="Z", help="unitary at B")
    s.add_argument("--control", default="+", help=f"control state: one of {sorted(STATES)}")
    s.add_argument("--input", default="0", help="target input state")
    s.add_argument("--structure", help="controlled-structure JSON to analyse instead of the switch")
    return p


def _unitary(name: str) -> np.ndarray:
    if name in GATES:
        return GATES[name]
    return io.cmatrix_from_json(io.load_json(name), name).data


def _state(name: str) -> np.ndarray:
    if name in STATES:
        return STATES[name]
    raise io.ParseError(f"unknown state {name!r}; choose from {sorted(STATES)}")


def _parse_interventions(text: str) -> dict[str, str]:
    out = {}
    for item in filter(None, (t.strip() for t in text.split(","))):
        if "=" not in item:
            raise io.ParseError(f"bad intervention {item!r}; expected VAR=idle or VAR=do(x)")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _table_csv(labs, probs) -> str:
    lines = [",".join(list(labs) + ["probability"])]
    for idx, p in np.ndenumerate(probs):
        lines.append(",".join([str(i) for i in idx] + [repr(float(p))]))
    return "\n".join(lines) + "\n"


def cmd_validate(args):
    w = io.process_from_json(io.load_json(args.input))
    r = check_process(w, args.tol_psd)
    residuals = {"hermitian": r.hermitian_residual, "psd": r.min_eigenvalue,
                 "trace": r.trace_residual, "normalization": r.normalization_residual}
    if args.format == "json":
        text = io.dumps({"ok": r.ok, "checks": {k: {"pass": r.checks[k], "residual": residuals[k]}
                                                  for k in r.checks}})
    else:
        lines = ["check,result,residual"]
        lines += [f"{k},{'PASS' if r.checks[k] else 'FAIL'},{residuals[k]!r}" for k in r.checks]
        text = "\n".join(lines) + "\n"
    return text, EXIT_OK if r.ok else EXIT_INVALID


def cmd_born(args):
    w = io.process_from_json(io.load_json(args.input))
    insts = io.instruments_from_json(io.load_json(args.instruments))
    table = outcome_distribution(w, insts)
    if args.format == "json":
        text = io.dumps({"labs": list(table.labs),
                         "table": [{"outcome": list(k), "probability": v}
                                   for k, v in table.as_dict().items()]})
    else:
        text = table.to_csv()
    return text, EXIT_OK


def cmd_discover(args):
    w = io.process_from_json(io.load_json(args.input))
    declared = io.dag_from_json(io.load_json(args.dag)) if args.dag else None
    extra = {}
    if args.tomography:
        res = tomographic_discovery(w, args.shots, args.seed)
        if args.shots is None:
            w = res.estimate
        else:
            extra = {"tomography": {
                "shots": args.shots, "seed": args.seed, "faithful": res.faithful,
                "low_confidence": res.low_confidence, "edge_z": res.edge_z,
                "min_eigenvalue": res.min_eigenvalue,
                "edges": (sorted(f"{a}->{b}" for a, b in res.dag.pairs())
                          if res.dag is not None else None),
                "present_types": res.present_types, "diagnostics": res.diagnostics}}
            if args.format == "dot":
                text = res.dag.to_dot() if res.dag is not None else "// no DAG recovered\n"
                return text, EXIT_OK if res.dag is not None else EXIT_INVALID
            return io.dumps(extra), EXIT_OK if res.dag is not None else EXIT_INVALID
    report = discovery_report(w, args.tol_term, declared)
    report.update(extra)
    code = EXIT_OK if report["faithful"] else EXIT_INVALID
    if args.format == "dot":
        return report["dot"] or "// not faithful to any DAG\n", code
    return io.dumps(report), code


def cmd_classical(args):
    model = io.classical_model_from_json(io.load_json(args.input))
    inter = _parse_interventions(args.interventions)
    unknown = set(inter) - set(model.variables)
    if unknown:
        raise io.ParseError(f"unknown variables {sorted(unknown)}")
    m = embed_classical_model(model)
    fams = pointer_families(m)
    for v, i in inter.items():
        if i not in fams[v].respond:
            raise io.ParseError(f"unknown intervention {i!r} for {v}")
    table = classical_statistics(m, fams, inter)
    if args.format == "csv":
        return table.to_csv(), EXIT_OK
    cpts = extract_cpts(intervention_tables(m, fams), model.dag)
    idle = {v: {IDLE: cpts[v][IDLE]} for v in model.variables}
    report = {"labs": list(table.labs), "interventions": {v: inter.get(v, IDLE) for v in model.variables},
              "table": [{"outcome": list(k), "probability": p} for k, p in table.as_dict().items()],
              "extracted": io.cpts_to_json(model.cards, model.dag, idle)}
    return io.dumps(report), EXIT_OK


def cmd_structure(args):
    w = controlled_process(io.controlled_structure_from_json(io.load_json(args.structure)))
    r = check_process(w, args.tol_psd)
    report = discovery_report(w, args.tol_term)
    out = {"labs": list(w.ids), "valid": r.ok, "has_compatible_dag": report["has_compatible_dag"],
           "present_types": report["present_types"]}
    if args.format == "csv":
        return f"valid,has_compatible_dag\n{r.ok},{report['has_compatible_dag']}\n", EXIT_OK
    return io.dumps(out), EXIT_OK if r.ok else EXIT_INVALID


def cmd_switch(args):
    if args.structure:
        return cmd_structure(args)
    ua, ub = _unitary(args.ua), _unitary(args.ub)
    psi = _state(args.input)
    ctrl = _state(args.control)
    probs = switch_probabilities(ua, ub, psi, ctrl)
    w = quantum_switch(psi)
    r = check_process(w, args.tol_psd)
    report = discovery_report(w, args.tol_term)
    out = {"p_plus": probs["+"], "p_minus": probs["-"], "valid": r.ok,
           "has_compatible_dag": report["has_compatible_dag"],
           "present_types": report["present_types"]}
    if args.format == "csv":
        return f"outcome,probability\n+,{probs['+']!r}\n-,{probs['-']!r}\n", EXIT_OK
    return io.dumps(out), EXIT_OK


COMMANDS = {"validate": cmd_validate, "born": cmd_born, "discover": cmd_discover,
            "classical": cmd_classical, "switch": cmd_switch}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text, code = COMMANDS[args.command](args)
    except io.ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ValueError, KeyError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
