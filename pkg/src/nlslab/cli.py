from __future__ import annotations

import argparse
import asyncio
import sys
import warnings
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any, Iterable, NoReturn, Sequence

import arrow
from rich import box
from rich.console import Console
from rich.table import Table

from .archive import RunArchive, config_hash
from .classifier import (
    check_trapping,
    classify,
    resolve_datum,
    run_experiment,
    sweep,
    thresholds_for,
)
from .config import (
    LabConfig,
    config_file_path,
    load_config,
    load_config_from_path,
    load_sweep_config,
    resolve_profile,
    write_config_file,
)
from .data_source import parse_data_source
from .errors import LabError, UnconvergedWarning
from .evolution import evolve
from .ground_state import (
    coercivity_windows,
    gradient_flow_optimizer,
    solve_ground_state,
    thresholds_from,
)
from .logs import configure_logging
from .models import Flavor, PotentialParam, Prediction, RadialField, RadialGrid
from .operator import functionals_of
from .serialization import (
    write_json,
    write_profile_csv,
    write_sweep_csv,
    write_trajectory_csv,
)
from .spectral import spectral_battery
from .virial import (
    VirialWeight,
    blowup_time_bound,
    d2V_full_formula,
    dV_formula,
    moment,
    radial_tail_bound,
)


EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FLAGGED = 2


def _get_version() -> str:
    try:
        return version("nlslab")
    except PackageNotFoundError:
        return "dev"


def _exit_with_message(message: str) -> NoReturn:
    print(message)
    raise SystemExit(EXIT_ERROR)


def _format_value(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def _print_table(title: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    console = Console(file=sys.stdout, color_system="auto")
    table = Table(
        title=title,
        title_style="bold",
        box=box.SIMPLE_HEAVY,
        show_header=True,
        header_style="bold cyan",
        row_styles=["", "on grey23"],
        padding=(0, 1),
    )
    for column in columns:
        table.add_column(column, no_wrap=True)
    for row in rows:
        table.add_row(*(_format_value(value) for value in row))
    console.print(table)


def _resolve_settings(args: argparse.Namespace) -> LabConfig:
    """Profile file and environment first, explicit flags on top."""
    path = getattr(args, "config_file", None)
    if path is None:
        config = load_config(args.profile)
    else:
        try:
            config = load_config_from_path(path, args.profile)
        except FileNotFoundError as exc:
            _exit_with_message(f"error: {exc}")
    overrides = {
        ("grid", "r_max"): getattr(args, "rmax", None),
        ("grid", "n"): getattr(args, "n", None),
        ("ground_state", "tol"): getattr(args, "tol", None),
        ("evolve", "dt"): getattr(args, "dt", None),
        ("evolve", "t_final"): getattr(args, "tfinal", None),
        ("evolve", "scatter_window"): getattr(args, "scatter_window", None),
        ("classify", "threshold_tol"): getattr(args, "threshold_tol", None),
    }
    for (section, name), value in overrides.items():
        if value is not None:
            setattr(getattr(config, section), name, tuple(value) if name == "scatter_window" else value)
    return config


def _handle_ground_state(args: argparse.Namespace) -> int:
    settings = _resolve_settings(args)
    p = PotentialParam(args.a)
    g = settings.grid.build()
    flavor = Flavor.RADIAL if args.radial else Flavor.GENERAL
    # the unrestricted optimizer is not attained for a > 0; its constant is C_0
    solved = PotentialParam(0.0) if flavor is Flavor.GENERAL and p.a > 0 else p
    tol = settings.ground_state.tol
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", UnconvergedWarning)
        if args.method == "gradient-flow":
            result = gradient_flow_optimizer(solved, g, tol, flavor)
        else:
            result = solve_ground_state(solved, g, tol, flavor)
    for warning in caught:
        print(f"warning: {warning.message}")
    th = thresholds_from(result)
    record = result.to_record(th)
    record["a"] = p.a
    record["constant_from_a"] = solved.a
    record["sigma"] = p.sigma
    record["peak"] = result.peak
    title = f"ground state a={p.a:g} ({flavor.value})"
    if solved is not p:
        title = f"ground state a={p.a:g} ({flavor.value}, constant of a=0)"
    _print_table(
        title,
        ("quantity", "value"),
        [
            ("C", result.c_constant),
            ("E threshold", th.energy_threshold),
            ("K threshold", th.k_threshold),
            ("mass", result.f.mass),
            ("Q(0+)", result.peak),
            ("rho1", result.pohozaev_rho1),
            ("rho2", result.pohozaev_rho2),
            ("converged", result.converged),
        ],
    )
    if args.out is not None:
        write_profile_csv(args.out / "profile.csv", result.profile)
        write_json(args.out / "ground_state.json", {"ground_state": record}, settings.to_dict())
        print(f"wrote {args.out / 'profile.csv'} and {args.out / 'ground_state.json'}")
    return EXIT_OK if result.converged else EXIT_FLAGGED


def _handle_evolve(args: argparse.Namespace) -> int:
    settings = _resolve_settings(args)
    p = PotentialParam(args.a)
    cfg = settings.evolve.build()
    source = parse_data_source(args.data)
    u0, _ = resolve_datum(source, p, settings.grid.build(), settings.ground_state.tol)
    traj = evolve(u0, p, cfg)
    outcome = traj.outcome
    stationarity = {
        "mass_drift": traj.max_relative_drift("mass"),
        "energy_drift": traj.max_relative_drift("energy_a"),
        "modulus_deviation": max(sample.modulus_deviation for sample in traj.samples),
    }
    _print_table(
        f"evolution a={p.a:g} from {source.describe()}",
        ("quantity", "value"),
        [
            ("outcome", outcome.kind.value),
            ("t*", outcome.t_star),
            ("scatter distance", outcome.distance),
            ("dt refinements", traj.refinements),
            ("final dt", traj.final_dt),
            ("mass drift", stationarity["mass_drift"]),
            ("energy drift", stationarity["energy_drift"]),
            ("modulus deviation", stationarity["modulus_deviation"]),
        ],
    )
    if args.out is not None:
        write_trajectory_csv(args.out / "trajectory.csv", traj)
        payload = {
            "data": source.describe(),
            "a": p.a,
            "outcome": outcome.to_dict(),
            "refinements": traj.refinements,
            "final_dt": traj.final_dt,
            "stationarity": stationarity,
        }
        write_json(args.out / "outcome.json", payload, settings.to_dict())
        print(f"wrote {args.out / 'trajectory.csv'} and {args.out / 'outcome.json'}")
    return EXIT_OK


def _virial_block(
    u0: RadialField, p: PotentialParam, g: RadialGrid, concavity: float | None
) -> dict[str, Any]:
    """Initial virial data, the radial L⁴ tail bound and, given V'' ≤ -c, the lifespan bound."""
    weight = VirialWeight.full()
    V0, dV0 = moment(u0, weight), dV_formula(u0, p, weight)
    radius = g.r_max / 4.0
    tail, tail_bound = radial_tail_bound(u0, p, radius)
    block: dict[str, Any] = {
        "V0": V0,
        "dV0": dV0,
        "d2V0": d2V_full_formula(u0, p),
        "tail_radius": radius,
        "l4_tail": tail,
        "l4_tail_bound": tail_bound,
    }
    if concavity is not None and concavity > 0:
        block["concavity"] = concavity
        block["lifespan_bound"] = blowup_time_bound(V0, dV0, concavity)
    return block


def _handle_classify(args: argparse.Namespace) -> int:
    settings = _resolve_settings(args)
    p = PotentialParam(args.a)
    g = settings.grid.build()
    source = parse_data_source(args.data)
    u0, cell = resolve_datum(source, p, g, settings.ground_state.tol)
    if cell is None:
        cell = thresholds_for(p, g, settings.ground_state.tol)
    threshold_tol = settings.classify.threshold_tol
    if args.run:
        result = run_experiment(
            u0,
            p,
            cell.general,
            settings.evolve.build(),
            threshold_tol=threshold_tol,
            radial_th=cell.radial,
        )
    else:
        result = classify(u0, p, cell.general, threshold_tol=threshold_tol, radial_th=cell.radial)
    payload: dict[str, Any] = {"data": source.describe(), "a": p.a, "classification": result.to_dict()}
    rows = [
        ("predicted", result.predicted.value),
        ("radial predicted", result.radial_predicted.value if result.radial_predicted else None),
        ("ME / E threshold", result.me_ratio),
        ("MK / K threshold", result.mk_ratio),
        ("artifact", result.artifact),
    ]
    f0 = functionals_of(u0, p)
    me_ratio = f0.mass * f0.energy_a / cell.decisive.energy_threshold
    concavity = -24.0 * f0.energy_a if f0.energy_a < 0 else None
    if result.decisive in (Prediction.SCATTER, Prediction.BLOWUP) and 0.0 < me_ratio < 1.0:
        report = coercivity_windows(f0, cell.decisive, 1.0 - me_ratio)
        payload["coercivity"] = report.to_dict()
        if report.branch == "b" and report.holds and concavity is None:
            # (1+ε)K - ¾L4 ≤ -c bounds the virial acceleration by -8c
            concavity = 8.0 * report.c
    virial = _virial_block(u0, p, g, concavity if result.decisive is Prediction.BLOWUP else None)
    payload["virial"] = virial
    rows.append(("lifespan bound", virial.get("lifespan_bound")))
    if result.trajectory is not None:
        extreme, trapped = check_trapping(result.trajectory, cell.decisive, result.decisive)
        payload["trapping"] = {"extreme_ratio": extreme, "trapped": trapped}
        rows += [
            ("observed", result.observed.value),
            ("agreement", result.agreement),
            ("t blowup", result.t_blowup),
            ("scatter distance", result.scatter_distance),
            ("trapped", trapped),
        ]
    _print_table(f"classification a={p.a:g} of {source.describe()}", ("quantity", "value"), rows)
    if args.out is not None:
        write_json(args.out / "classification.json", payload, settings.to_dict())
        print(f"wrote {args.out / 'classification.json'}")
    if args.run and result.agreement is not True:
        return EXIT_FLAGGED
    return EXIT_OK


async def _handle_sweep(args: argparse.Namespace) -> int:
    config = load_sweep_config(args.config)
    payload = config.model_dump(by_alias=True)
    key = config_hash(payload)
    archive = await RunArchive.create(profile=args.profile or "default") if config.archive else None
    try:
        rows = await sweep(
            config.a,
            config.lam,
            config.grid.build(),
            config.evolve.build(),
            tol=config.tol,
            threshold_tol=config.threshold_tol,
            jobs=args.jobs,
            archive=archive,
            config_key=key,
        )
    finally:
        if archive is not None:
            await archive.close()
    records = [row.to_row() for row in rows]
    _print_table(
        f"sweep {key}",
        ("a", "lambda", "ME ratio", "MK ratio", "predicted", "observed", "agree", "error"),
        [
            (
                row.a,
                row.lam,
                row.me_ratio,
                row.mk_ratio,
                row.predicted.value if row.predicted else None,
                row.observed.value if row.observed else None,
                row.agreement,
                row.error,
            )
            for row in rows
        ],
    )
    if args.out is not None:
        write_sweep_csv(args.out / "sweep.csv", records)
        write_json(args.out / "sweep.json", {"config_hash": key, "rows": records}, payload)
        print(f"wrote {args.out / 'sweep.csv'} and {args.out / 'sweep.json'}")
    flagged = [
        row
        for row in rows
        if row.error is not None
        or (row.predicted in (Prediction.SCATTER, Prediction.BLOWUP) and not row.settled)
    ]
    return EXIT_FLAGGED if flagged else EXIT_OK


def _handle_spectral_check(args: argparse.Namespace) -> int:
    p = PotentialParam(args.a)
    settings = _resolve_settings(args)
    g = RadialGrid(r_max=args.rmax or 20.0, n=args.n or 800)
    checks = spectral_battery(p, g)
    _print_table(
        f"spectral checks a={p.a:g}",
        ("property", "value", "bound", "result"),
        [(check.name, check.value, check.bound, "pass" if check.passed else "FAIL") for check in checks],
    )
    if args.out is not None:
        write_json(
            args.out / "spectral.json",
            {"a": p.a, "grid": g.to_dict(), "checks": [check.to_dict() for check in checks]},
            settings.to_dict(),
        )
        print(f"wrote {args.out / 'spectral.json'}")
    return EXIT_OK if all(check.passed for check in checks) else EXIT_FLAGGED


def _parse_since(value: str) -> arrow.Arrow:
    try:
        return arrow.get(value)
    except (ValueError, TypeError):
        _exit_with_message(f"error: --since expects an ISO 8601 time, got {value!r}")


async def _handle_archive_cells(args: argparse.Namespace) -> int:
    since = _parse_since(args.since) if args.since else None
    archive = await RunArchive.create(profile=args.profile or "default")
    try:
        if args.config_key is not None:
            cells = await archive.cells(args.config_key)
            if since is not None:
                cells = [cell for cell in cells if cell.created_at >= since]
        else:
            cells = await archive.cells_since(since or arrow.get(0))
    finally:
        await archive.close()
    _print_table(
        f"archived cells ({len(cells)})",
        ("a", "lambda", "config", "predicted", "observed", "agree"),
        [
            (
                cell.a,
                cell.lam,
                cell.config_key,
                cell.row.get("predicted"),
                cell.row.get("observed"),
                cell.row.get("agreement"),
            )
            for cell in cells
        ],
    )
    return EXIT_OK


async def _handle_archive_ground_state(args: argparse.Namespace) -> int:
    settings = _resolve_settings(args)
    g = settings.grid.build()
    grid_key = f"{g.r_max:g}x{g.n}"
    archive = await RunArchive.create(profile=args.profile or "default")
    try:
        stored = await archive.ground_state(args.a, args.flavor, grid_key)
    finally:
        await archive.close()
    if stored is None:
        print(f"no archived {args.flavor} ground state for a={args.a:g} on {grid_key}")
        return EXIT_FLAGGED
    _print_table(
        f"archived ground state a={stored.a:g} ({stored.flavor}, {stored.grid_key})",
        ("quantity", "value"),
        [(key, value) for key, value in sorted(stored.record.items()) if not isinstance(value, dict)]
        + [("stored", stored.created_at.isoformat())],
    )
    return EXIT_OK


def _handle_config_init(args: argparse.Namespace) -> int:
    target = config_file_path(args.profile, args.config_home)
    config = LabConfig(profile=resolve_profile(args.profile))
    try:
        path = write_config_file(target, config, force=args.force)
    except FileExistsError:
        _exit_with_message(f"{target} already exists; use --force to overwrite")
    print(f"created config file at {path}")
    return EXIT_OK


def _handle_group_help(args: argparse.Namespace) -> int:
    parser = getattr(args, "parser", None)
    if parser:
        parser.print_help()
        return EXIT_OK
    _exit_with_message(f"{args.command} command requires a subcommand")


def _add_grid_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--rmax", dest="rmax", type=float, help="outer radius of the grid")
    parser.add_argument("--n", dest="n", type=int, help="number of radial nodes")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nlslab")
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {_get_version()}"
    )
    parser.add_argument("--profile", dest="profile", help="configuration profile name")
    parser.add_argument(
        "--config-file", dest="config_file", type=Path, help="read settings from this TOML file"
    )
    parser.add_argument(
        "-v", "--verbose", dest="verbose", action="count", default=0, help="more logging (-vv for debug)"
    )
    subparsers = parser.add_subparsers(dest="command")

    ground_parser = subparsers.add_parser("ground-state", help="solve for the ground state and thresholds")
    ground_parser.add_argument("--a", dest="a", type=float, required=True, help="inverse-square coupling")
    ground_parser.add_argument("--radial", dest="radial", action="store_true", help="radial optimizer")
    _add_grid_flags(ground_parser)
    ground_parser.add_argument("--tol", dest="tol", type=float, help="bisection tolerance")
    ground_parser.add_argument(
        "--method", dest="method", choices=["shooting", "gradient-flow"], default="shooting"
    )
    ground_parser.add_argument("--out", dest="out", type=Path, help="output directory")
    ground_parser.set_defaults(func=_handle_ground_state)

    evolve_parser = subparsers.add_parser("evolve", help="evolve a datum and detect its outcome")
    evolve_parser.add_argument("--a", dest="a", type=float, required=True, help="inverse-square coupling")
    evolve_parser.add_argument(
        "--data", dest="data", required=True, help="CSV path, builtin:lambdaQ:<scale> or builtin:gaussian:<amp>:<width>"
    )
    evolve_parser.add_argument("--dt", dest="dt", type=float, help="time step")
    evolve_parser.add_argument("--tfinal", dest="tfinal", type=float, help="final time")
    evolve_parser.add_argument(
        "--scatter-window", dest="scatter_window", type=float, nargs=2, metavar=("T1", "T2")
    )
    _add_grid_flags(evolve_parser)
    evolve_parser.add_argument("--tol", dest="tol", type=float, help="ground state tolerance for builtin data")
    evolve_parser.add_argument("--out", dest="out", type=Path, help="output directory")
    evolve_parser.set_defaults(func=_handle_evolve)

    classify_parser = subparsers.add_parser("classify", help="predict scattering or blowup for a datum")
    classify_parser.add_argument("--a", dest="a", type=float, required=True, help="inverse-square coupling")
    classify_parser.add_argument("--data", dest="data", required=True, help="datum source")
    classify_parser.add_argument("--run", dest="run", action="store_true", help="also evolve and compare")
    classify_parser.add_argument("--threshold-tol", dest="threshold_tol", type=float)
    classify_parser.add_argument("--dt", dest="dt", type=float, help="time step")
    classify_parser.add_argument("--tfinal", dest="tfinal", type=float, help="final time")
    classify_parser.add_argument(
        "--scatter-window", dest="scatter_window", type=float, nargs=2, metavar=("T1", "T2")
    )
    _add_grid_flags(classify_parser)
    classify_parser.add_argument("--tol", dest="tol", type=float, help="ground state tolerance")
    classify_parser.add_argument("--out", dest="out", type=Path, help="output directory")
    classify_parser.set_defaults(func=_handle_classify)

    sweep_parser = subparsers.add_parser("sweep", help="run a (a, lambda) phase-diagram sweep")
    sweep_parser.add_argument("config", type=Path, help="sweep configuration (JSON)")
    sweep_parser.add_argument("--jobs", dest="jobs", type=int, default=1, help="parallel workers")
    sweep_parser.add_argument("--out", dest="out", type=Path, help="output directory")
    sweep_parser.set_defaults(func=_handle_sweep)

    spectral_parser = subparsers.add_parser("spectral-check", help="run the heat-calculus property battery")
    spectral_parser.add_argument("--a", dest="a", type=float, required=True, help="inverse-square coupling")
    _add_grid_flags(spectral_parser)
    spectral_parser.add_argument("--out", dest="out", type=Path, help="output directory")
    spectral_parser.set_defaults(func=_handle_spectral_check)

    archive_parser = subparsers.add_parser("archive", help="query the run archive")
    archive_parser.set_defaults(func=_handle_group_help, parser=archive_parser)
    archive_subparsers = archive_parser.add_subparsers(dest="subcommand")
    cells_parser = archive_subparsers.add_parser("cells", help="list archived sweep cells")
    cells_parser.add_argument("--config-key", dest="config_key", help="only cells of this sweep configuration")
    cells_parser.add_argument("--since", dest="since", help="only cells stored at or after this ISO 8601 time")
    cells_parser.set_defaults(func=_handle_archive_cells)
    archived_gs_parser = archive_subparsers.add_parser("ground-state", help="show an archived ground state")
    archived_gs_parser.add_argument("--a", dest="a", type=float, required=True, help="inverse-square coupling")
    archived_gs_parser.add_argument(
        "--flavor", dest="flavor", choices=[flavor.value for flavor in Flavor], default=Flavor.GENERAL.value
    )
    _add_grid_flags(archived_gs_parser)
    archived_gs_parser.set_defaults(func=_handle_archive_ground_state)

    config_parser = subparsers.add_parser("config")
    config_parser.set_defaults(func=_handle_group_help, parser=config_parser)
    config_subparsers = config_parser.add_subparsers(dest="subcommand")
    init_parser = config_subparsers.add_parser("init")
    init_parser.add_argument(
        "--config-home",
        dest="config_home",
        type=Path,
        default=None,
        help="override the config directory",
    )
    init_parser.add_argument("--force", dest="force", action="store_true", help="overwrite existing config")
    init_parser.set_defaults(func=_handle_config_init, parser=config_parser)

    return parser


async def _async_main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(list(argv if argv is not None else sys.argv[1:]))
    configure_logging(args.verbose)
    handler = getattr(args, "func", None)
    if handler is None:
        parser.print_help()
        return EXIT_OK
    try:
        if asyncio.iscoroutinefunction(handler):
            return await handler(args)
        return handler(args)
    except LabError as exc:
        _exit_with_message(f"error: {exc}")


def main(argv: Sequence[str] | None = None) -> int:
    return asyncio.run(_async_main(argv))
