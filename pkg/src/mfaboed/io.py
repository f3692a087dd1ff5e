"""Model-spec and observation files (YAML), result export (CSV/JSON).

Model spec schema::

    name: steel-2012
    units: Mt/yr
    nodes: [A, B, C]                 # file order fixes the dense indices
    edges: [[A, B], [B, C]]          # present in every candidate structure
    uncertain_edges: [[A, C]]        # ordered; bit l of the structure code
    model_prior: uniform             # or {per_edge: [0.7]}
    allocation_priors:               # Dirichlet hyper-parameters, maximal structure
      A: {B: 3.0, C: 1.0}
    inputs:                          # truncated-normal external inflows (>= 0)
      A: {mean: 10.0, sd: 1.0}
    design_targets:                  # measurable flows; sigma defaults to 0.1
      - {id: "1", from: A, to: B}
      - {id: "2", from: A}           # no "to": the external inflow at A

Observation file schema::

    observations:
      - {id: "19", from: Basic Oxygen Furnace, to: Continuous Casting Slabs,
         value: 36.281, sigma: 0.1, source: WSA}
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import yaml

from .errors import SpecError
from .network import CandidateSet, NetworkStructure, Target, enumerate_candidates
from .stochastics import DEFAULT_SIGMA, AllocationPrior, Design, InputPrior, Observation, ParameterPriors


@dataclass(frozen=True)
class DesignTarget:
    id: str
    target: Target
    sigma: float = DEFAULT_SIGMA


@dataclass(eq=False)
class ModelSpec:
    name: str
    units: str
    nodes: tuple[str, ...]
    base: NetworkStructure
    uncertain_edges: tuple[tuple[int, int], ...]
    prior_kind: str
    edge_probabilities: tuple[float, ...] | None
    priors: ParameterPriors
    design_targets: tuple[DesignTarget, ...]
    candidates: CandidateSet = field(repr=False)
    path: str | None = None
    notes: str = ""

    def __eq__(self, other):
        if not isinstance(other, ModelSpec):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def index(self, label: str) -> int:
        return self.base.index_of(label)

    def target(self, upstream: str, downstream: str | None) -> Target:
        return Target(self.index(upstream), None if downstream is None else self.index(downstream))

    def target_by_id(self, tid: str) -> DesignTarget:
        for dt in self.design_targets:
            if dt.id == str(tid):
                return dt
        raise SpecError(f"no design target with id '{tid}'", path=self.path)

    def target_name(self, t: Target) -> str:
        for dt in self.design_targets:
            if dt.target == t:
                return f"#{dt.id}"
        return t.label(self.nodes)

    def design_name(self, design: Design) -> str:
        return "+".join(self.target_name(t) for t in design.targets)

    def design(self, *ids: str) -> Design:
        dts = [self.target_by_id(i) for i in ids]
        return Design(tuple(d.target for d in dts), tuple(d.sigma for d in dts))

    def validation_report(self) -> dict[str, Any]:
        edge_universe = set(self.base.edges) | set(self.uncertain_edges)
        return {
            "name": self.name,
            "units": self.units,
            "nodes": len(self.nodes),
            "base_edges": len(self.base.edges - set(self.uncertain_edges)),
            "edge_universe": len(edge_universe),
            "uncertain_edges": len(self.uncertain_edges),
            "structures": len(self.candidates),
            "expected_structures": 2 ** len(self.uncertain_edges),
            "external_inputs": len(self.base.external_input_nodes),
            "design_targets": len(self.design_targets),
            "parameters_maximal_structure": self.priors.for_structure(self.candidates.structures[-1]).n_parameters,
        }

    def to_dict(self) -> dict[str, Any]:
        n = self.nodes
        uncertain = set(self.uncertain_edges)
        out: dict[str, Any] = {"name": self.name, "units": self.units}
        if self.notes:
            out["notes"] = self.notes
        out["nodes"] = list(n)
        out["edges"] = [[n[i], n[j]] for i, j in sorted(self.base.edges) if (i, j) not in uncertain]
        out["uncertain_edges"] = [[n[i], n[j]] for i, j in self.uncertain_edges]
        if self.prior_kind == "uniform":
            out["model_prior"] = "uniform"
        else:
            out["model_prior"] = {"per_edge": list(self.edge_probabilities)}
        out["allocation_priors"] = {
            n[i]: {n[j]: a for j, a in entries} for i, entries in self.priors.allocation.alphas.items()
        }
        out["inputs"] = {n[i]: {"mean": mu, "sd": sd} for i, (mu, sd) in sorted(self.priors.inputs.params.items())}
        out["design_targets"] = []
        for dt in self.design_targets:
            row = {"id": dt.id, "from": n[dt.target.source]}
            if dt.target.dest is not None:
                row["to"] = n[dt.target.dest]
            row["sigma"] = dt.sigma
            out["design_targets"].append(row)
        return out


def dump_model_spec(spec: ModelSpec) -> str:
    return yaml.safe_dump(spec.to_dict(), sort_keys=False, allow_unicode=True, width=120)


class _Doc:
    """Parsed YAML plus the node tree, for line-numbered diagnostics."""

    def __init__(self, text: str, path):
        self.path = str(path) if path is not None else None
        try:
            self.node = yaml.compose(text, Loader=yaml.SafeLoader)
            self.data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            raise SpecError(f"invalid YAML: {exc}", path=self.path, line=mark.line + 1 if mark else None) from None
        if not isinstance(self.data, dict):
            raise SpecError("top level must be a mapping", path=self.path)

    def line(self, *keys) -> int | None:
        node = self.node
        for key in keys:
            if isinstance(node, yaml.MappingNode):
                nxt = None
                for k, v in node.value:
                    if k.value == key:
                        nxt = v
                        break
                if nxt is None:
                    return node.start_mark.line + 1
                node = nxt
            elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
                node = node.value[key]
            else:
                break
        return node.start_mark.line + 1 if node is not None else None

    def fail(self, message, *keys):
        field_name = ".".join(str(k) for k in keys) if keys else None
        raise SpecError(message, path=self.path, field=field_name, line=self.line(*keys))


def _positive(doc: _Doc, value, *keys) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        doc.fail(f"expected a number, got {value!r}", *keys)
    if not (math.isfinite(v) and v > 0):
        doc.fail(f"must be a positive number, got {value!r}", *keys)
    return v


def parse_model_spec(text: str, path=None) -> ModelSpec:
    doc = _Doc(text, path)
    d = doc.data
    for key in ("nodes", "edges", "allocation_priors"):
        if key not in d:
            doc.fail(f"missing required section '{key}'")
    nodes = d["nodes"]
    if not isinstance(nodes, list) or not all(isinstance(x, str) for x in nodes):
        doc.fail("must be a list of node labels", "nodes")
    if len(set(nodes)) != len(nodes):
        dup = next(x for x in nodes if nodes.count(x) > 1)
        doc.fail(f"duplicate node label '{dup}'", "nodes")
    index = {lab: i for i, lab in enumerate(nodes)}

    def node_ref(label, *keys) -> int:
        if label not in index:
            doc.fail(f"unknown node label '{label}'", *keys)
        return index[label]

    def edge_list(section):
        raw = d.get(section) or []
        if not isinstance(raw, list):
            doc.fail("must be a list of [from, to] pairs", section)
        out = []
        for k, e in enumerate(raw):
            if not (isinstance(e, (list, tuple)) and len(e) == 2):
                doc.fail("edge must be a [from, to] pair", section, k)
            i, j = node_ref(e[0], section, k), node_ref(e[1], section, k)
            if i == j:
                doc.fail(f"self-loop on '{e[0]}'", section, k)
            out.append((i, j))
        if len(set(out)) != len(out):
            doc.fail("duplicate edge", section)
        return out

    edges = edge_list("edges")
    uncertain = edge_list("uncertain_edges")
    overlap = set(edges) & set(uncertain)
    if overlap:
        i, j = sorted(overlap)[0]
        doc.fail(f"edge {nodes[i]} -> {nodes[j]} listed as both certain and uncertain", "uncertain_edges")

    inputs_raw = d.get("inputs") or {}
    if not isinstance(inputs_raw, dict):
        doc.fail("must map node labels to {mean, sd}", "inputs")
    inputs = {}
    for lab, p in inputs_raw.items():
        i = node_ref(lab, "inputs", lab)
        if not isinstance(p, dict) or "mean" not in p or "sd" not in p:
            doc.fail("input prior needs 'mean' and 'sd'", "inputs", lab)
        mu = float(p["mean"])
        if mu < 0:
            doc.fail("input prior mean must be >= 0", "inputs", lab)
        inputs[i] = (mu, _positive(doc, p["sd"], "inputs", lab, "sd"))

    alloc_raw = d["allocation_priors"] or {}
    if not isinstance(alloc_raw, dict):
        doc.fail("must map node labels to {target: alpha}", "allocation_priors")
    universe = set(edges) | set(uncertain)
    alphas = {}
    for lab, entries in alloc_raw.items():
        i = node_ref(lab, "allocation_priors", lab)
        if not isinstance(entries, dict) or not entries:
            doc.fail("needs a non-empty {target: alpha} mapping", "allocation_priors", lab)
        row = []
        for tgt, a in entries.items():
            j = node_ref(tgt, "allocation_priors", lab, tgt)
            if (i, j) not in universe:
                doc.fail(f"edge {lab} -> {tgt} is not declared", "allocation_priors", lab, tgt)
            row.append((j, _positive(doc, a, "allocation_priors", lab, tgt)))
        alphas[i] = tuple(row)
    for i, j in universe:
        if j not in {t for t, _ in alphas.get(i, ())}:
            doc.fail(f"edge {nodes[i]} -> {nodes[j]} has no Dirichlet hyper-parameter", "allocation_priors")

    mp = d.get("model_prior", "uniform")
    if mp == "uniform":
        kind, probs = "uniform", None
    elif isinstance(mp, dict) and "per_edge" in mp:
        kind = "per-edge"
        probs = tuple(float(p) for p in mp["per_edge"])
        if len(probs) != len(uncertain) or not all(0 < p < 1 for p in probs):
            doc.fail("per_edge needs one probability in (0, 1) per uncertain edge", "model_prior")
    else:
        doc.fail("must be 'uniform' or {per_edge: [...]}", "model_prior")

    dts = []
    seen = set()
    for k, row in enumerate(d.get("design_targets") or []):
        if not isinstance(row, dict) or "from" not in row:
            doc.fail("design target needs at least 'from'", "design_targets", k)
        tid = str(row.get("id", k + 1))
        if tid in seen:
            doc.fail(f"duplicate design target id '{tid}'", "design_targets", k)
        seen.add(tid)
        src = node_ref(row["from"], "design_targets", k)
        dst = row.get("to")
        tgt = Target(src, None if dst is None else node_ref(dst, "design_targets", k))
        if tgt.dest is not None and (src, tgt.dest) not in universe:
            doc.fail(f"design target {row['from']} -> {dst} is not a declared edge", "design_targets", k)
        if tgt.dest is None and src not in inputs:
            doc.fail(f"design target on external input at '{row['from']}' which has none", "design_targets", k)
        sigma = _positive(doc, row.get("sigma", DEFAULT_SIGMA), "design_targets", k, "sigma")
        dts.append(DesignTarget(tid, tgt, sigma))

    try:
        base = NetworkStructure(tuple(nodes), frozenset(edges), frozenset(inputs))
        candidates = enumerate_candidates(base, uncertain, kind, probs)
        priors = ParameterPriors(AllocationPrior(alphas), InputPrior(inputs))
        for s in candidates.structures:
            priors.for_structure(s)
    except SpecError:
        raise
    except ValueError as exc:
        raise SpecError(str(exc), path=doc.path) from None
    return ModelSpec(
        name=str(d.get("name", "")),
        units=str(d.get("units", "")),
        nodes=tuple(nodes),
        base=base,
        uncertain_edges=tuple(uncertain),
        prior_kind=kind,
        edge_probabilities=probs,
        priors=priors,
        design_targets=tuple(dts),
        candidates=candidates,
        path=doc.path,
        notes=str(d.get("notes", "") or ""),
    )


def load_model_spec(path) -> ModelSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SpecError(f"cannot read: {exc.strerror}", path=path) from None
    return parse_model_spec(text, path)


def parse_observations(text: str, spec: ModelSpec, path=None) -> list[Observation]:
    doc = _Doc(text, path)
    rows = doc.data.get("observations")
    if not isinstance(rows, list):
        doc.fail("missing 'observations' list")
    out = []
    for k, row in enumerate(rows):
        if not isinstance(row, dict):
            doc.fail("observation must be a mapping", "observations", k)
        for key in ("from", "value"):
            if key not in row:
                doc.fail(f"missing '{key}'", "observations", k)
        up, down = row["from"], row.get("to")
        if up not in spec.nodes or (down is not None and down not in spec.nodes):
            doc.fail(f"cannot resolve flow {up} -> {down}", "observations", k)
        target = spec.target(up, down)
        declared = target.is_input or (target.source, target.dest) in set(spec.base.edges) | set(spec.uncertain_edges)
        if not declared:
            doc.fail(f"flow {up} -> {down} is not a declared edge", "observations", k)
        value = _positive(doc, row["value"], "observations", k, "value")
        sigma = _positive(doc, row.get("sigma", DEFAULT_SIGMA), "observations", k, "sigma")
        out.append(
            Observation(
                Design((target,), (sigma,)),
                (value,),
                source=str(row.get("source", "")),
                obs_id=str(row.get("id", k + 1)),
            )
        )
    return out


def load_observations(path, spec: ModelSpec) -> list[Observation]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SpecError(f"cannot read: {exc.strerror}", path=path) from None
    return parse_observations(text, spec, path)


def dump_observations(observations: Sequence[Observation], spec: ModelSpec) -> str:
    rows = []
    for ob in observations:
        for t, s, v in zip(ob.design.targets, ob.design.sigmas, ob.values):
            row = {"id": ob.obs_id, "from": spec.nodes[t.source]}
            if t.dest is not None:
                row["to"] = spec.nodes[t.dest]
            row.update({"value": v, "sigma": s, "source": ob.source})
            rows.append(row)
    return yaml.safe_dump({"observations": rows}, sort_keys=False, allow_unicode=True, width=120)


FIXTURES = ("steel", "toy")


def fixture_path(name: str) -> Path:
    """Path of a bundled fixture: ``steel``, ``steel-observations``, ``toy``..."""
    p = resources.files("mfaboed") / "data" / f"{name.replace('-', '_')}.yaml"
    return Path(str(p))


def load_fixture(name: str) -> ModelSpec:
    return load_model_spec(fixture_path(name))


def resolve_spec(arg: str) -> ModelSpec:
    """A spec path, or ``builtin:<name>`` for a bundled fixture."""
    if arg.startswith("builtin:"):
        return load_fixture(arg.split(":", 1)[1])
    return load_model_spec(arg)


def resolve_observations(arg: str, spec: ModelSpec) -> list[Observation]:
    if arg.startswith("builtin:"):
        return load_observations(fixture_path(arg.split(":", 1)[1]), spec)
    return load_observations(arg, spec)


def write_table(rows: Sequence[dict], fmt: str, header: dict | None = None) -> str:
    """Render rows as CSV (header as ``# key: value`` comment lines) or JSON."""
    if fmt == "json":
        payload = {"meta": header or {}, "rows": list(rows)}
        return json.dumps(payload, indent=2, default=_json_default) + "\n"
    buf = io.StringIO()
    for k, v in (header or {}).items():
        buf.write(f"# {k}: {v}\n")
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: _csv_cell(v) for k, v in r.items()})
    return buf.getvalue()


def _csv_cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _json_default(o):
    if hasattr(o, "item"):
        return o.item()
    if hasattr(o, "tolist"):
        return o.tolist()
    raise TypeError(f"not serialisable: {type(o)!r}")
