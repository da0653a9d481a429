"""JSON (de)serialisation of matrices, processes, instruments, DAGs, classical models
and controlled structures."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .beyond import Branch, ControlledStructure
from .classical import ClassicalCausalModel
from .events import ChannelMatrix, Instrument
from .mqcm import CausalDag, Edge
from .process import LocalLab, ProcessMatrix
from .tensor import CMatrix


class ParseError(ValueError):
    """Malformed input file; the message carries the location when known."""


def load_json(path) -> Any:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: cannot read file ({exc.strerror})") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def dumps(obj) -> str:
    """Canonical JSON text: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _get(d: Mapping, key: str, where: str):
    if not isinstance(d, Mapping) or key not in d:
        raise ParseError(f"{where}: missing field {key!r}")
    return d[key]


def cmatrix_to_json(m: CMatrix) -> dict:
    return {"dims": list(m.dims), "re": m.data.real.tolist(), "im": m.data.imag.tolist()}


def cmatrix_from_json(d: Mapping, where: str = "matrix") -> CMatrix:
    re = np.asarray(_get(d, "re", where), dtype=float)
    im = np.asarray(d.get("im", np.zeros_like(re)), dtype=float)
    if re.shape != im.shape:
        raise ParseError(f"{where}: 're' and 'im' have different shapes")
    try:
        return CMatrix(re + 1j * im, d.get("dims"))
    except ValueError as exc:
        raise ParseError(f"{where}: {exc}") from None


def process_to_json(w: ProcessMatrix) -> dict:
    return {
        "labs": [{"id": l.id, "d_in": l.d_in, "d_out": l.d_out,
                  "out_factors": {e: d for e, d in l.out_factors}} for l in w.labs],
        "matrix": cmatrix_to_json(w.matrix),
    }


def process_from_json(d: Mapping, where: str = "process") -> ProcessMatrix:
    labs = []
    for k, l in enumerate(_get(d, "labs", where)):
        at = f"{where}.labs[{k}]"
        try:
            labs.append(LocalLab(str(_get(l, "id", at)), int(_get(l, "d_in", at)),
                                 int(_get(l, "d_out", at)), dict(l.get("out_factors") or {})))
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{at}: {exc}") from None
    m = cmatrix_from_json(_get(d, "matrix", where), f"{where}.matrix")
    try:
        return ProcessMatrix(labs, m)
    except ValueError as exc:
        raise ParseError(f"{where}: {exc}") from None


def instrument_to_json(j: Instrument) -> dict:
    return {"lab": j.lab, "maps": [cmatrix_to_json(m.matrix) for m in j.maps]}


def instrument_from_json(d: Mapping, where: str = "instrument") -> Instrument:
    lab = _get(d, "lab", where)
    maps = [cmatrix_from_json(m, f"{where}.maps[{k}]") for k, m in enumerate(_get(d, "maps", where))]
    return Instrument(maps, str(lab))


def instruments_from_json(d) -> dict[str, Instrument]:
    items = d.get("instruments") if isinstance(d, Mapping) else d
    if not isinstance(items, list):
        raise ParseError("instruments: expected a list or an object with 'instruments'")
    out = {}
    for k, item in enumerate(items):
        j = instrument_from_json(item, f"instruments[{k}]")
        out[j.lab] = j
    return out


def channel_to_json(t: ChannelMatrix) -> dict:
    return {**cmatrix_to_json(t.matrix), "source_dims": list(t.source_dims),
            "target_dims": list(t.target_dims)}


def channel_from_json(d: Mapping, where: str = "channel") -> ChannelMatrix:
    m = cmatrix_from_json(d, where)
    return ChannelMatrix(_get(d, "source_dims", where), _get(d, "target_dims", where), m)


def dag_from_json(d: Mapping) -> CausalDag:
    try:
        return CausalDag.from_dict(d)
    except (KeyError, TypeError) as exc:
        raise ParseError(f"dag: missing or malformed field {exc}") from None


def classical_model_from_json(d: Mapping) -> ClassicalCausalModel:
    try:
        cards = {str(v["name"]): int(v["card"]) for v in _get(d, "variables", "model")}
        edges = [Edge(str(e["from"]), str(e["to"]), f"{e['from']}->{e['to']}",
                      cards[str(e["from"])]) for e in d.get("edges", [])]
        cpts = {}
        for v, entry in _get(d, "cpts", "model").items():
            table = entry["interventions"]["idle"] if isinstance(entry, Mapping) else entry
            cpts[str(v)] = np.asarray(table, dtype=float)
    except (KeyError, TypeError) as exc:
        raise ParseError(f"model: missing or malformed field {exc}") from None
    return ClassicalCausalModel(cards, CausalDag(tuple(cards), tuple(edges)), cpts)


def cpts_to_json(cards: Mapping[str, int], dag: CausalDag, cpts: Mapping) -> dict:
    return {
        "variables": [{"name": v, "card": int(cards[v])} for v in dag.vertices],
        "edges": [{"from": e.source, "to": e.target} for e in dag.edges],
        "cpts": {v: {"interventions": {i: np.asarray(t).tolist() for i, t in sorted(cpts[v].items())}}
                 for v in dag.vertices},
    }


def _vector_to_json(v: np.ndarray) -> dict:
    return {"re": v.real.tolist(), "im": v.imag.tolist()}


def controlled_structure_to_json(cs: ControlledStructure) -> dict:
    return {
        "labs": [{"id": l.id, "d_in": l.d_in, "d_out": l.d_out} for l in cs.labs],
        "register_dim": cs.register_dim, "control": cs.control, "readout": cs.readout,
        "branches": [{"name": b.name, "vector": _vector_to_json(b.vector),
                      "dag": b.dag.to_dict() if b.dag is not None else None}
                     for b in cs.branches],
    }


def controlled_structure_from_json(d: Mapping) -> ControlledStructure:
    where = "structure"
    try:
        labs = [LocalLab(str(l["id"]), int(l["d_in"]), int(l["d_out"])) for l in _get(d, "labs", where)]
        branches = []
        for k, b in enumerate(_get(d, "branches", where)):
            v = _get(b, "vector", f"{where}.branches[{k}]")
            vec = np.asarray(v["re"], dtype=float) + 1j * np.asarray(v.get("im", 0.0), dtype=float)
            dag = dag_from_json(b["dag"]) if b.get("dag") is not None else None
            branches.append(Branch(str(b.get("name", k)), vec, dag))
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{where}: missing or malformed field {exc}") from None
    return ControlledStructure(tuple(labs), tuple(branches), int(d.get("register_dim", 1)),
                               str(d.get("control", "C")), str(d.get("readout", "D")))


def design_to_json(design) -> dict:
    """Tomography design: lab profiles and the instrument measured at each lab."""
    return {
        "labs": [{"id": l.id, "d_in": l.d_in, "d_out": l.d_out} for l in design.labs],
        "instruments": [instrument_to_json(j) for j in design.instruments],
    }
