"""Command-line entry point: ``mfaboed {validate,solve,utility,infer,benchmark}``.

Exit codes: 0 success, 2 bad input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .boed import (
    ReferenceSpec,
    benchmark_estimators,
    build_reuse_batch,
    enumerate_designs,
    evaluate_all,
    get_estimator,
    prior_entropy,
)
from .errors import InputError, MFAError, NumericalError
from .inference import model_posterior
from .io import ModelSpec, resolve_observations, resolve_spec, write_table
from .network import edge_flows, mass_balance_residual, phi_matrix, solve_nodal_flows
from .stochastics import Design, rng_stream

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 2, 3


def _emit(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _estimators(arg: str) -> list[str]:
    names = ["u1", "u2", "u3"] if arg == "all" else [a.strip().lower() for a in arg.split(",") if a.strip()]
    for n in names:
        get_estimator(n)
    return names


def _designs(spec: ModelSpec, arg: str | None, batch_size: int) -> list[Design]:
    """Menu from ``--designs``: omitted/``all`` for every target, a comma list of
    target ids, or a file with one design per line (ids joined by ``+``)."""
    if arg and Path(arg).is_file():
        lines = [ln.split("#", 1)[0].strip() for ln in Path(arg).read_text().splitlines()]
        return [spec.design(*ln.split("+")) for ln in lines if ln]
    if arg is None or arg == "all":
        chosen = list(spec.design_targets)
    else:
        chosen = [spec.target_by_id(i.strip()) for i in arg.split(",") if i.strip()]
    if not chosen:
        raise InputError("no design targets selected")
    return enumerate_designs([d.target for d in chosen], batch_size, [d.sigma for d in chosen])


def _structure(spec: ModelSpec, code: str | None):
    if code is None:
        return spec.candidates.structures[-1]
    return spec.candidates.by_code(code)


def cmd_validate(args) -> int:
    spec = resolve_spec(args.spec)
    rows = [{"item": k, "value": v} for k, v in spec.validation_report().items()]
    if args.obs:
        obs = resolve_observations(args.obs, spec)
        rows.append({"item": "observations", "value": len(obs)})
    _emit(write_table(rows, args.format), args.out)
    return EXIT_OK


def cmd_solve(args) -> int:
    spec = resolve_spec(args.spec)
    structure = _structure(spec, args.structure)
    sp = spec.priors.for_structure(structure)
    if args.params == "prior-mean":
        phi_e, q = sp.mean()
    else:
        phi_e, q = sp.sample(1, rng_stream(args.seed, "solve", structure.model_index))
        phi_e, q = phi_e[0], q[0]
    phi = phi_matrix(structure, phi_e)
    x = solve_nodal_flows(structure, phi, q)
    nodes = spec.nodes
    header = {
        "spec": spec.name,
        "structure": structure.code,
        "params": args.params,
        "units": spec.units,
        "max_mass_balance_residual": float(mass_balance_residual(structure, phi, q, x).max()),
    }
    if args.params == "seed-draw":
        header["seed"] = args.seed
    if args.sankey:
        rows = [{"source": nodes[i], "target": nodes[j], "value": v} for i, j, v in edge_flows(structure, phi, x)]
    else:
        rows = [{"kind": "node", "source": nodes[i], "target": "", "value": float(x[i])} for i in range(len(nodes))]
        rows += [{"kind": "input", "source": "", "target": nodes[i], "value": float(q[i])} for i in np.flatnonzero(q)]
        rows += [
            {"kind": "edge", "source": nodes[i], "target": nodes[j], "value": v} for i, j, v in edge_flows(structure, phi, x)
        ]
    _emit(write_table(rows, args.format, header), args.out)
    return EXIT_OK


def cmd_utility(args) -> int:
    spec = resolve_spec(args.spec)
    designs = _designs(spec, args.designs, args.batch_size)
    names = _estimators(args.estimator)
    targets = list(dict.fromkeys(t for d in designs for t in d.targets))
    batch = build_reuse_batch(spec.candidates, spec.priors, targets, args.samples, args.seed)
    rankings = evaluate_all(designs, names, batch, seed=args.seed, method=args.evidence)
    rows = []
    for name in names:
        r = rankings[name]
        for pos, i in enumerate(r.order, start=1):
            e = r.estimates[i]
            rows.append(
                {
                    "estimator": name,
                    "rank": pos,
                    "design": spec.design_name(e.design),
                    "utility_nats": e.value,
                    "std_error": e.std_error,
                    "degenerate": e.degenerate_count,
                    "negative": e.negative,
                    "wall_s": 0.0 if args.no_timing else round(e.wall_time, 4),
                }
            )
    header = {
        "spec": spec.name,
        "units": spec.units,
        "samples": args.samples,
        "seed": args.seed,
        "unique_solves": batch.n_solves,
        "prior_entropy_nats": prior_entropy(spec.candidates.model_prior),
    }
    _emit(write_table(rows, args.format, header), args.out)
    return EXIT_OK


def cmd_infer(args) -> int:
    spec = resolve_spec(args.spec)
    obs = resolve_observations(args.obs, spec) if args.obs else []
    if args.ids:
        wanted = [i.strip() for i in args.ids.split(",") if i.strip()]
        by_id = {o.obs_id: o for o in obs}
        missing = [i for i in wanted if i not in by_id]
        if missing:
            raise InputError(f"observation ids not found: {', '.join(missing)}")
        obs = [by_id[i] for i in wanted]
    post = model_posterior(obs, spec.candidates, spec.priors, args.samples, args.seed)
    rows = [
        {
            "structure": s.code,
            "prior": float(post.prior[m]),
            "log_evidence": float(post.log_evidences[m]),
            "std_error": float(post.std_errors[m]),
            "posterior": float(post.probabilities[m]),
            "degenerate": post.degenerate[m],
        }
        for m, s in enumerate(spec.candidates.structures)
    ]
    header = {
        "spec": spec.name,
        "observations": ",".join(o.obs_id for o in obs) or "none",
        "samples": args.samples,
        "seed": args.seed,
        "kl_nats": post.kl,
        "map_structure": spec.candidates.structures[post.map_index].code,
    }
    _emit(write_table(rows, args.format, header), args.out)
    return EXIT_OK


def cmd_benchmark(args) -> int:
    spec = resolve_spec(args.spec)
    designs = _designs(spec, args.designs, args.batch_size)
    if len(designs) != 1:
        raise InputError(f"benchmark needs exactly one design, got {len(designs)}")
    names = _estimators(args.estimator)
    ref = ReferenceSpec(args.ref_estimator, args.ref_samples, args.ref_seed)
    rep = benchmark_estimators(
        spec.candidates, spec.priors, designs[0], names, args.samples, args.trials, ref, seed=args.seed, method=args.evidence
    )
    rows = [
        {"estimator": r.estimator, "mean": r.mean, "std": r.std, "rmse": r.rmse, "bias": r.bias} for r in rep.rows
    ]
    header = {
        "spec": spec.name,
        "design": spec.design_name(rep.design),
        "samples": rep.n,
        "trials": rep.trials,
        "seed": args.seed,
        "reference_estimator": ref.estimator,
        "reference_samples": ref.n,
        "reference_seed": ref.seed,
        "reference_value": rep.reference_value,
    }
    _emit(write_table(rows, args.format, header), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mfaboed",
        description="Rank measurements of a material flow network by how well they separate candidate structures.",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--spec", required=True, help="model spec YAML, or builtin:steel / builtin:toy")
        sp.add_argument("--out", help="output path (default stdout)")
        sp.add_argument("--format", choices=("csv", "json"), default="csv")
        if seed:
            sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("validate", help="load a spec (and observations) and print a summary")
    common(sp, seed=False)
    sp.add_argument("--obs", help="observation YAML, or builtin:steel-observations")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("solve", help="nodal and edge flows for one structure")
    common(sp)
    sp.add_argument("--structure", help="binary structure code (default: all uncertain edges present)")
    sp.add_argument("--params", choices=("prior-mean", "seed-draw"), default="prior-mean")
    sp.add_argument("--sankey", action="store_true", help="emit only the (source, target, value) edge table")
    sp.set_defaults(func=cmd_solve)

    def estimation(sp, default_estimator):
        sp.add_argument("--designs", help="'all', comma-separated target ids, or a file of '+'-joined ids")
        sp.add_argument("--batch-size", type=int, default=1)
        sp.add_argument("--estimator", default=default_estimator, help="u1, u2, u3, a comma list, or 'all'")
        sp.add_argument("--samples", type=int, default=10_000, help="N (outer = inner under sample reuse)")
        sp.add_argument("--evidence", choices=("auto", "exact", "grid"), default="auto", help=argparse.SUPPRESS)

    sp = sub.add_parser("utility", help="rank designs by expected information gain")
    common(sp)
    estimation(sp, "u2")
    sp.add_argument("--no-timing", action="store_true", help="write 0 for wall-clock so files are byte-stable")
    sp.set_defaults(func=cmd_utility)

    sp = sub.add_parser("infer", help="posterior over structures given observations")
    common(sp)
    sp.add_argument("--obs", help="observation YAML, or builtin:steel-observations")
    sp.add_argument("--ids", help="comma-separated observation ids to use jointly (default: all)")
    sp.add_argument("--samples", type=int, default=10_000)
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("benchmark", help="repeated-seed error statistics against a reference run")
    common(sp)
    estimation(sp, "all")
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument("--ref-samples", type=int, default=100_000)
    sp.add_argument("--ref-estimator", default="u2")
    sp.add_argument("--ref-seed", type=int, default=ReferenceSpec().seed)
    sp.set_defaults(func=cmd_benchmark)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except MFAError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
