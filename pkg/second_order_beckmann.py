#!/usr/bin/env python3
"""
Second-order Beckmann toolkit - command line front end.

Subcommands:
  check-order  convex order (Strassen) or convex-concave order via bimartingale couplings
  solve        three-marginal primal LP with the quadratic dual bound
  decompose    leaf decomposition and per-leaf bimartingale solve
  grillage     planar grillage of an optimal plan, div^2 verification, SVG/CSV export
  selftest     built-in worked examples with a pass/fail table

JSON reports go to standard output with sorted keys; summaries and log lines
go to standard error.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple
import argparse
import json
import logging
import sys

import numpy as np

from beckmann_solver import (build_z_grid, quadratic_dual_bound, solve_primal, solve_variance,
                             variance_identity_gap)
from config import DEFAULT_CONFIG_PATH, Config, setup_logging
from core_measures import (DiscreteMeasure, NumericMode, Scalar, covariance_difference, format_scalar,
                           is_zero, max_abs, require_common_barycenter, resolve_mode, to_scalar, vector)
from errors import BeckmannError, InstanceFormatError
from grillage import bars_from_plan, export, total_variation_report, verify_div2
from leaf_decomposition import decompose, reconstruct, solve_decomposed, to_dot
from linalg_spectral import SubspacePair, spectral_gap
from order_checks import (Coupling, bimartingale_cost, check_convex_order, convex_concave_spot_check,
                          find_bimartingale, marginal_martingale_pushforwards,
                          projected_convex_order_precheck, verify_bimartingale)
import reference_instances as ref

logger = logging.getLogger(__name__)


@dataclass
class InstanceFile:
    """Parsed instance JSON"""
    dim: int
    mode: NumericMode
    mu: DiscreteMeasure
    nu: DiscreteMeasure
    grid: List[np.ndarray] = field(default_factory=list)
    pair: Optional[SubspacePair] = None
    coupling: Optional[Coupling] = None
    load_scale: Optional[Scalar] = None
    name: str = "instance"


def _atom_list(raw: Any, field_name: str) -> List[Tuple[Any, Any]]:
    """Accept [{"x": [...], "w": ...}] or [[[...], w]]"""
    if not isinstance(raw, list) or not raw:
        raise InstanceFormatError("expected a non-empty list of atoms", field_name)
    atoms = []
    for k, item in enumerate(raw):
        if isinstance(item, dict):
            weight_key = "w" if "w" in item else "f"
            if "x" not in item or weight_key not in item:
                raise InstanceFormatError(f"atom {k} needs 'x' and 'w'", field_name)
            atoms.append((item["x"], item[weight_key]))
        elif isinstance(item, list) and len(item) == 2:
            atoms.append((item[0], item[1]))
        else:
            raise InstanceFormatError(f"atom {k} is neither {{'x', 'w'}} nor [point, weight]", field_name)
    return atoms


def _check_points(atoms: Sequence[Tuple[Any, Any]], dim: int, field_name: str) -> None:
    for k, (point, _) in enumerate(atoms):
        if not isinstance(point, list) or len(point) != dim:
            raise InstanceFormatError(f"atom {k} is not a point of R^{dim}", field_name)


def _build_measure(atoms, mode: NumericMode, dim: int, field_name: str, config: Config) -> DiscreteMeasure:
    try:
        return DiscreteMeasure.from_atoms(atoms, mode, dim=dim, dedup_tol=config.dedup_tol)
    except (ValueError, TypeError, ZeroDivisionError) as e:
        raise InstanceFormatError(str(e), field_name)


def _split_load(atoms, mode: NumericMode, dim: int, config: Config) -> Tuple[DiscreteMeasure, DiscreteMeasure, Scalar]:
    """nu = f+ / |f+|, mu = f- / |f-| for a signed load with zero mass and zero first moment"""
    try:
        values = [(vector(p, mode), to_scalar(f, mode)) for p, f in atoms]
    except (ValueError, TypeError, ZeroDivisionError) as e:
        raise InstanceFormatError(str(e), "load")
    positive = [(p, f) for p, f in values if f > 0]
    negative = [(p, -f) for p, f in values if f < 0]
    if not positive or not negative:
        raise InstanceFormatError("load needs both positive and negative parts", "load")
    mass = sum((f for _, f in values), to_scalar(0, mode))
    moment = sum((f * p for p, f in values), vector([0] * dim, mode))
    if not is_zero(mass, mode, config.float_tol) or not is_zero(max_abs(moment), mode, config.float_tol):
        raise InstanceFormatError("load must have zero total mass and zero first moment", "load")
    nu = _build_measure(positive, mode, dim, "load", config)
    mu = _build_measure(negative, mode, dim, "load", config)
    return mu, nu, nu.original_mass


def parse_instance(data: Dict[str, Any], config: Config, mode_override: Optional[str] = None,
                   name: str = "instance") -> InstanceFile:
    """Validate instance JSON and build measures in the resolved numeric mode"""
    if not isinstance(data, dict):
        raise InstanceFormatError("instance must be a JSON object", "<root>")
    dim = data.get("dim")
    if not isinstance(dim, int) or isinstance(dim, bool) or dim < 1:
        raise InstanceFormatError(f"expected a positive integer, got {dim!r}", "dim")

    if "load" in data:
        load_atoms = _atom_list(data["load"], "load")
        _check_points(load_atoms, dim, "load")
        count = len(load_atoms)
    else:
        mu_atoms, nu_atoms = _atom_list(data.get("mu"), "mu"), _atom_list(data.get("nu"), "nu")
        _check_points(mu_atoms, dim, "mu")
        _check_points(nu_atoms, dim, "nu")
        count = len(mu_atoms) + len(nu_atoms)

    requested = mode_override or data.get("mode") or config.default_mode
    if requested not in ("auto", "rational", "float"):
        raise InstanceFormatError(f"unknown numeric mode {requested!r}", "mode")
    mode = resolve_mode(requested, count, config.auto_rational_max_atoms)

    load_scale = None
    if "load" in data:
        mu, nu, load_scale = _split_load(load_atoms, mode, dim, config)
    else:
        mu = _build_measure(mu_atoms, mode, dim, "mu", config)
        nu = _build_measure(nu_atoms, mode, dim, "nu", config)

    grid = []
    for k, point in enumerate(data.get("grid") or []):
        if not isinstance(point, list) or len(point) != dim:
            raise InstanceFormatError(f"grid point {k} is not a point of R^{dim}", "grid")
        try:
            grid.append(vector(point, mode))
        except (ValueError, TypeError, ZeroDivisionError) as e:
            raise InstanceFormatError(f"grid point {k}: {e}", "grid")

    pair = None
    if data.get("subspaces") is not None:
        spec = data["subspaces"]
        if not isinstance(spec, dict):
            raise InstanceFormatError("expected {'v1': [...], 'v2': [...]}", "subspaces")
        for key in ("v1", "v2"):
            for vec in spec.get(key, []):
                if not isinstance(vec, list) or len(vec) != dim:
                    raise InstanceFormatError(f"basis vector {vec!r} is not in R^{dim}", f"subspaces.{key}")
                try:
                    vector(vec, mode)
                except (ValueError, TypeError, ZeroDivisionError) as e:
                    raise InstanceFormatError(f"basis vector {vec!r}: {e}", f"subspaces.{key}")
        pair = SubspacePair.from_spanning(spec.get("v1", []), spec.get("v2", []), dim, mode)

    coupling = None
    if data.get("coupling") is not None:
        try:
            coupling = Coupling.from_atoms([((item["x"], item["y"]), item["w"]) for item in data["coupling"]], mode)
        except (KeyError, TypeError, ValueError) as e:
            raise InstanceFormatError(f"expected [{{'x', 'y', 'w'}}]: {e}", "coupling")

    return InstanceFile(dim=dim, mode=mode, mu=mu, nu=nu, grid=grid, pair=pair, coupling=coupling,
                        load_scale=load_scale, name=str(data.get("name", name)))


def load_instance(path: str, config: Config, mode_override: Optional[str] = None) -> InstanceFile:
    instance_path = Path(path)
    if not instance_path.exists():
        raise InstanceFormatError(f"file not found: {path}", "--instance")
    try:
        with open(instance_path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise InstanceFormatError(f"malformed JSON: {e}", "--instance")
    return parse_instance(data, config, mode_override, name=instance_path.stem)


def load_grid(path: str, dim: int, mode: NumericMode) -> List[np.ndarray]:
    """Extra z candidates from a JSON list of points (or {"grid": [...]})"""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise InstanceFormatError(f"cannot read grid file: {e}", "--grid")
    points = data.get("grid", []) if isinstance(data, dict) else data
    out = []
    for k, point in enumerate(points):
        if not isinstance(point, list) or len(point) != dim:
            raise InstanceFormatError(f"grid point {k} is not a point of R^{dim}", "--grid")
        try:
            out.append(vector(point, mode))
        except (ValueError, TypeError, ZeroDivisionError) as e:
            raise InstanceFormatError(f"grid point {k}: {e}", "--grid")
    return out


def describe_subspace(basis: np.ndarray) -> str:
    """'span e1, e2' for coordinate axes, '{0}' when empty"""
    if len(basis) == 0:
        return "{0}"
    axes = []
    for row in basis:
        nonzero = [i for i, v in enumerate(row) if abs(v) > 1e-12]
        if len(nonzero) != 1:
            return f"{len(basis)}-dimensional subspace"
        axes.append(f"e{nonzero[0] + 1}")
    return "span " + ", ".join(sorted(axes))


def solver_options(config: Config, lp_dump: Optional[str]) -> Dict[str, Any]:
    return {
        "max_rational_nonzeros": config.max_rational_nonzeros,
        "max_iterations": config.max_iterations,
        "degenerate_pivot_limit": config.degenerate_pivot_limit,
        "perturbation": config.perturbation,
        "float_tol": config.float_tol,
        "dump_dir": lp_dump,
    }


def split_options(config: Config) -> Dict[str, Any]:
    return {
        "relative_tol": config.relative_split_tol,
        "max_denominator": config.max_denominator,
        "jacobi_tol": config.jacobi_tol,
        "max_sweeps": config.max_sweeps,
    }


def _base_report(command: str, inst: Optional[InstanceFile], config: Config,
                 grid: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    report: Dict[str, Any] = {
        "command": command,
        "mode": inst.mode.value if inst else config.default_mode,
        "tolerances": config.tolerances(),
        "grid": grid or {"size": 0, "sources": {}},
    }
    if inst is not None:
        report["instance"] = inst.name
        report["dim"] = inst.dim
        if inst.load_scale is not None:
            report["load_scale"] = format_scalar(inst.load_scale)
    return report


def _scaled(value: Scalar, inst: InstanceFile) -> Scalar:
    return value * inst.load_scale if inst.load_scale is not None else value


def cmd_check_order(args: argparse.Namespace, config: Config) -> Dict[str, Any]:
    inst = load_instance(args.instance, config, args.mode)
    opts = solver_options(config, args.lp_dump)
    report = _base_report("check-order", inst, config)

    if inst.pair is None:
        require_common_barycenter(inst.mu, inst.nu, config.float_tol)
        witness = check_convex_order(inst.mu, inst.nu, tol=config.float_tol, **opts)
        report["order"] = "convex"
        report["holds"] = witness is not None
        report["verdict"] = "convex order holds" if witness is not None else "not in convex order"
        report["witness"] = witness.to_records() if witness is not None else None
        if witness is not None:
            report["residual"] = format_scalar(witness.martingale_violation())
    else:
        pair = inst.pair
        label = f"({describe_subspace(pair.basis1)}, {describe_subspace(pair.basis2)})"
        witness = find_bimartingale(inst.mu, inst.nu, pair, tol=config.float_tol, **opts)
        report["order"] = "convex-concave"
        report["holds"] = witness is not None
        report["verdict"] = (f"bimartingale coupling for {label}" if witness is not None
                             else f"no bimartingale coupling for {label}")
        report["precheck"] = projected_convex_order_precheck(inst.mu, inst.nu, pair,
                                                             tol=config.float_tol, **opts)
        checks = convex_concave_spot_check(inst.mu, inst.nu, pair, count=args.spot_checks)
        report["spot_checks"] = {"count": len(checks), "separating": sum(1 for c in checks if not c.holds)}
        if witness is not None:
            report["witness"] = witness.to_records()
            report["residuals"] = verify_bimartingale(witness, pair).to_dict()
            report["witness_cost"] = format_scalar(_scaled(bimartingale_cost(witness), inst))
        else:
            report["witness"] = None

    if inst.coupling is not None and inst.pair is not None:
        first, second = marginal_martingale_pushforwards(inst.coupling, inst.pair)
        report["given_coupling"] = {
            "residuals": verify_bimartingale(inst.coupling, inst.pair).to_dict(),
            "pushforwards_martingale": [first.is_martingale(config.float_tol),
                                        second.is_martingale(config.float_tol)],
        }
    print(f"check-order: {report['verdict']}", file=sys.stderr)
    return report


def cmd_solve(args: argparse.Namespace, config: Config) -> Dict[str, Any]:
    inst = load_instance(args.instance, config, args.mode)
    opts = solver_options(config, args.lp_dump)
    extra = list(inst.grid)
    if args.grid:
        extra.extend(load_grid(args.grid, inst.dim, inst.mode))
    _, _, pair = quadratic_dual_bound(inst.mu, inst.nu, **split_options(config))
    grid = build_z_grid(inst.mu, inst.nu, inst.pair or pair, extra=extra,
                        product_points=config.product_points or args.product_points,
                        kernel_completions=config.kernel_completions)
    result = solve_primal(inst.mu, inst.nu, grid, split_options=split_options(config), **opts)
    report = _base_report("solve", inst, config, grid.provenance())
    report.update(result.to_dict())
    if inst.load_scale is not None:
        report["scaled_primal_cost"] = format_scalar(_scaled(result.primal_cost, inst))
    report["spectral"] = spectral_gap(covariance_difference(inst.mu, inst.nu),
                                      relative_tol=config.relative_split_tol)
    if args.variance:
        value, rho = solve_variance(inst.mu, inst.nu, grid, **opts)
        report["variance"] = {"value": format_scalar(value), "rho": rho.to_records(),
                              "identity_gap": format_scalar(variance_identity_gap(result.primal_cost, value,
                                                                                  inst.mu, inst.nu))}
    if args.csv:
        _write_text(args.csv, result.plan.to_frame().to_csv(index=False))
    print(f"solve: primal {format_scalar(result.primal_cost)}, dual {format_scalar(result.dual_bound)}, "
          f"gap {format_scalar(result.gap)}", file=sys.stderr)
    return report


def cmd_decompose(args: argparse.Namespace, config: Config) -> Dict[str, Any]:
    inst = load_instance(args.instance, config, args.mode)
    opts = solver_options(config, args.lp_dump)
    report = _base_report("decompose", inst, config)
    if args.no_solve:
        root = decompose(inst.mu, inst.nu, key_tol=config.float_tol, **split_options(config))
        report["tree"] = root.to_dict()
    else:
        plan, result = solve_decomposed(inst.mu, inst.nu, key_tol=config.float_tol,
                                        split_options=split_options(config), **opts)
        root = result.root
        report.update(result.to_dict())
        report["plan"] = plan.to_records()
        if inst.load_scale is not None:
            report["scaled_total_cost"] = format_scalar(_scaled(result.total_cost, inst))
        if args.ledger:
            _write_text(args.ledger, result.ledger().to_csv(index=False))
    mu_rec, nu_rec = reconstruct(root)
    report["reconstruction"] = {"mu": mu_rec.same_as(inst.mu, config.float_tol),
                                "nu": nu_rec.same_as(inst.nu, config.float_tol)}
    if args.dot:
        _write_text(args.dot, to_dot(root))
    leaves = list(root.leaves())
    print(f"decompose: {len(leaves)} terminal leaves", file=sys.stderr)
    return report


def cmd_grillage(args: argparse.Namespace, config: Config) -> Dict[str, Any]:
    inst = load_instance(args.instance, config, args.mode)
    opts = solver_options(config, args.lp_dump)
    degree = args.verify_degree or config.verify_degree
    _, _, pair = quadratic_dual_bound(inst.mu, inst.nu, **split_options(config))
    grid = build_z_grid(inst.mu, inst.nu, inst.pair or pair, extra=inst.grid,
                        product_points=config.product_points, kernel_completions=config.kernel_completions)
    result = solve_primal(inst.mu, inst.nu, grid, split_options=split_options(config), **opts)
    g = bars_from_plan(result.plan)
    tv = total_variation_report(g)
    div2 = verify_div2(g, inst.mu, inst.nu, degree)

    report = _base_report("grillage", inst, config, grid.provenance())
    report["bars"] = len(g)
    report["plan_cost"] = format_scalar(_scaled(result.primal_cost, inst))
    report["total_variation"] = tv.to_dict()
    if inst.load_scale is not None:
        report["scaled_total_variation"] = format_scalar(_scaled(tv.total, inst))
    report["div2"] = div2.to_dict()
    svg_options = {"size": config.svg_size, "margin": config.svg_margin, "max_stroke": config.max_stroke,
                   "segments": config.svg_segments}
    if args.out:
        _write_text(args.out, export(g, "svg", **svg_options))
    if args.csv:
        _write_text(args.csv, export(g, "csv"))
    print(f"grillage: {len(g)} bars, TV {format_scalar(tv.total)}, "
          f"div2 residual {format_scalar(div2.max_residual)}", file=sys.stderr)
    return report


def _selftest_cases(mode: NumericMode, config: Config) -> List[Tuple[str, Callable[[], bool]]]:
    opts = solver_options(config, None)

    def counterexample_not_bimartingale():
        mu, nu = ref.counterexample_measures(mode)
        return find_bimartingale(mu, nu, ref.axis_pair(mode), **opts) is None

    def counterexample_residual():
        pi, pair = ref.counterexample_coupling(mode), ref.axis_pair(mode)
        report = verify_bimartingale(pi, pair)
        first, second = marginal_martingale_pushforwards(pi, pair)
        at_source = report.source_residuals[[tuple(p) for p in report.source_points].index(
            (to_scalar(0, mode), to_scalar(1, mode)))]
        return at_source[0] == to_scalar("-1/2", mode) and first.is_martingale() and second.is_martingale()

    def degenerate_leaves():
        mu, nu = ref.degenerate_covariance(mode)
        root = decompose(mu, nu, **split_options(config))
        return len(root.children) == 2 and all(c.theta == to_scalar("1/2", mode) for c in root.children)

    def degenerate_cost():
        mu, nu = ref.degenerate_covariance(mode)
        _, result = solve_decomposed(mu, nu, split_options=split_options(config), **opts)
        return is_zero(result.total_cost - to_scalar("1/4", mode), mode, config.float_tol)

    def degenerate_primal():
        mu, nu = ref.degenerate_covariance(mode)
        _, _, pair = quadratic_dual_bound(mu, nu)
        report = solve_primal(mu, nu, build_z_grid(mu, nu, pair, product_points=True), **opts)
        return report.tight and is_zero(report.primal_cost - to_scalar("1/4", mode), mode, config.float_tol)

    def spread_primal():
        mu, nu = ref.spread_on_line(mode)
        report = solve_primal(mu, nu, build_z_grid(mu, nu), **opts)
        return is_zero(report.primal_cost - to_scalar("1/2", mode), mode, config.float_tol) and report.tight

    return [
        ("counterexample: no bimartingale coupling", counterexample_not_bimartingale),
        ("counterexample: residual -1/2, martingale pushforwards", counterexample_residual),
        ("degenerate covariance: two leaves, theta 1/2", degenerate_leaves),
        ("degenerate covariance: decomposed cost 1/4", degenerate_cost),
        ("degenerate covariance: primal = dual = 1/4", degenerate_primal),
        ("spread on a line: primal = dual = 1/2", spread_primal),
    ]


def cmd_selftest(args: argparse.Namespace, config: Config) -> Dict[str, Any]:
    mode = NumericMode(args.mode) if args.mode in ("rational", "float") else NumericMode.RATIONAL
    results = []
    for name, case in _selftest_cases(mode, config):
        try:
            passed = bool(case())
        except BeckmannError as e:
            logger.error(f"Selftest '{name}' raised {type(e).__name__}: {e}")
            passed = False
        results.append({"case": name, "passed": passed})
        print(f"  [{'PASS' if passed else 'FAIL'}] {name}", file=sys.stderr)
    report = _base_report("selftest", None, config)
    report["mode"] = mode.value
    report["cases"] = results
    report["passed"] = all(r["passed"] for r in results)
    return report


def _write_text(path: str, text: str) -> None:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text, encoding="utf-8")
    logger.info(f"Wrote {out}")


def build_parser() -> argparse.ArgumentParser:
    """Parser with one subcommand per operation"""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, default=str(DEFAULT_CONFIG_PATH),
                        help='Configuration file path (default: config.yaml next to this script)')
    common.add_argument('--mode', choices=['auto', 'rational', 'float'], default=None,
                        help='Numeric mode (default: from instance, then config)')
    common.add_argument('--tol', type=float, default=None,
                        help='Float-mode feasibility tolerance (default: from config)')
    common.add_argument('--split-tol', type=float, default=None,
                        help='Kernel threshold of the spectral split, relative to the Schatten-1 norm (default: from config)')
    common.add_argument('--log', type=str, default=None, help='Log file path (e.g., logs/solve.log)')
    common.add_argument('--verbose', action='store_true', help='Log progress to standard error')
    common.add_argument('--lp-dump', type=str, default=None, metavar='DIR',
                        help='Write every linear program solved to DIR in LP text format')

    parser = argparse.ArgumentParser(
        prog='second_order_beckmann.py',
        description='Second-order Beckmann toolkit: convex-concave order, transport plans, leaf decomposition, grillages',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  Order checks:
    python %(prog)s check-order --instance instances/counterexample.json
  Primal and dual bounds:
    python %(prog)s solve --instance instances/degenerate_covariance.json --csv output/plan.csv
  Leaf decomposition:
    python %(prog)s decompose --instance instances/degenerate_covariance.json --dot output/leaves.dot
  Grillage export:
    python %(prog)s grillage --instance instances/degenerate_covariance.json --out output/bars.svg
  Built-in examples:
    python %(prog)s selftest
        """
    )
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('check-order', parents=[common], help='Convex or convex-concave order check')
    p.add_argument('--instance', required=True, help='Instance JSON file')
    p.add_argument('--spot-checks', type=int, default=50,
                   help='Random convex-concave test functions to integrate (default: 50)')
    p.set_defaults(handler=cmd_check_order)

    p = sub.add_parser('solve', parents=[common], help='Primal LP with quadratic dual bound')
    p.add_argument('--instance', required=True, help='Instance JSON file')
    p.add_argument('--grid', type=str, default=None, help='JSON file with extra z candidates')
    p.add_argument('--product-points', action='store_true', help='Add x + y - b candidates')
    p.add_argument('--variance', action='store_true', help='Also solve the variance problem on the same grid')
    p.add_argument('--csv', type=str, default=None, help='Write the plan as CSV')
    p.set_defaults(handler=cmd_solve)

    p = sub.add_parser('decompose', parents=[common], help='Leaf decomposition and per-leaf solve')
    p.add_argument('--instance', required=True, help='Instance JSON file')
    p.add_argument('--no-solve', action='store_true', help='Only build the partition tree')
    p.add_argument('--dot', type=str, default=None, help='Write the partition tree as Graphviz DOT')
    p.add_argument('--ledger', type=str, default=None, help='Write the per-leaf cost ledger as CSV')
    p.set_defaults(handler=cmd_decompose)

    p = sub.add_parser('grillage', parents=[common], help='Planar grillage of an optimal plan')
    p.add_argument('--instance', required=True, help='Instance JSON file')
    p.add_argument('--out', type=str, default=None, help='SVG output path')
    p.add_argument('--csv', type=str, default=None, help='CSV output path')
    p.add_argument('--verify-degree', type=int, default=None,
                   help='Highest monomial degree for the div^2 check (default: from config)')
    p.set_defaults(handler=cmd_grillage)

    p = sub.add_parser('selftest', parents=[common], help='Run the built-in worked examples')
    p.set_defaults(handler=cmd_selftest)
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse, dispatch and print; returns the process exit code"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    setup_logging(args.log, args.verbose)
    try:
        config = Config.from_yaml(args.config)
        if args.tol is not None:
            config.float_tol = args.tol
        if args.split_tol is not None:
            config.relative_split_tol = args.split_tol
        if getattr(args, 'verify_degree', None) is not None:
            config.verify_degree = args.verify_degree
        config.validate()
    except (FileNotFoundError, ValueError, OSError) as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e), "field": "--config"}, sort_keys=True))
        print(f"Error loading configuration: {e}", file=sys.stderr)
        return 2

    try:
        report = args.handler(args, config)
    except BeckmannError as e:
        print(json.dumps(e.details(), sort_keys=True, indent=config.json_indent))
        print(f"Error: {e}", file=sys.stderr)
        return 2 if e.user_error else 1
    except Exception as e:
        logger.exception("Internal error")
        print(json.dumps({"error": type(e).__name__, "message": str(e)}, sort_keys=True))
        return 1

    print(json.dumps(report, sort_keys=True, indent=config.json_indent))
    if args.command == 'selftest' and not report["passed"]:
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
