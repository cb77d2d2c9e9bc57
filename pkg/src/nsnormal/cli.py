"""Command-line interface: ``nsnormal <command> ...``.

Exit codes: 0 success, 1 residual or fit check failed, 2 unreadable input,
3 invariant violation, 4 no convergence or gauge failure, 5 spectral band
violation, 6 cocycle/result hash mismatch.

Outputs are assembled in memory and written only when a command completes;
each file is written to a temporary name and renamed into place.  Every run
also writes ``manifest_<command>.json`` with input and output hashes.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import random
import sys
import tempfile
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from . import __version__
from . import scalars as sc
from .errors import (
    HashMismatch,
    InvalidParams,
    NoConvergence,
    NormalFormError,
    SpectralViolation,
)
from .group import Membership, is_member, random_element
from .jets import BlockStructure, TruncationOrder
from .resonance import SpectralData, enumerate_plus_basis, validate_margin
from .scenarios import ScenarioSpec, generate, scenario_generator_factory
from .solver import (
    CocycleSpec,
    NormalFormResult,
    SolverConfig,
    canonical_hash,
    check_result_structure,
    cocycle_from_dict,
    gauge_transform,
    identity_gauges,
    ray_report,
    solve,
    verify_diagram,
)

EXIT_OK, EXIT_RESIDUAL, EXIT_PARSE, EXIT_INVARIANT = 0, 1, 2, 3
EXIT_CONVERGENCE, EXIT_SPECTRAL, EXIT_HASH = 4, 5, 6
FLOAT_RESIDUAL_TOL = 1e-9


class InputError(Exception):
    """Unreadable or malformed input file."""


# ---------------------------------------------------------------------------
# file handling


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def read_json(path: str | os.PathLike) -> tuple[dict, str]:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise InputError(f"cannot read {path}: {e.strerror}") from None
    try:
        data = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise InputError(f"{path} is not valid JSON: {e}") from None
    if not isinstance(data, dict):
        raise InputError(f"{path} must hold a JSON object")
    return data, sha256_bytes(raw)


def dump_json(data) -> bytes:
    return (json.dumps(data, indent=2, sort_keys=True) + "\n").encode()


def dump_csv(header: Sequence[str], rows: Sequence[Sequence]) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue().encode()


class Bundle:
    """Output files held in memory until ``commit``."""

    def __init__(self, command: str, argv: Sequence[str], out_dir: str):
        self.command = command
        self.argv = list(argv)
        self.out_dir = Path(out_dir)
        self.files: dict[str, bytes] = {}
        self.inputs: dict[str, str] = {}
        self.config: dict = {}
        self.log: list[str] = []

    def add(self, name: str, data: bytes) -> None:
        self.files[name] = data

    def note(self, line: str) -> None:
        self.log.append(line)
        print(line)

    def manifest(self) -> dict:
        outputs = {n: sha256_bytes(b) for n, b in sorted(self.files.items())}
        return {
            "tool": "nsnormal",
            "version": __version__,
            "command": self.command,
            "argv": self.argv,
            "inputs": dict(sorted(self.inputs.items())),
            "input_hash": canonical_hash(sorted(self.inputs.values())),
            "config": self.config,
            "mode": self.config.get("mode"),
            "seed": self.config.get("seed"),
            "outputs": outputs,
        }

    def commit(self) -> None:
        self.add(f"{self.command}.log", ("\n".join(self.log) + "\n").encode())
        self.files[f"manifest_{self.command}.json"] = dump_json(self.manifest())
        self.out_dir.mkdir(parents=True, exist_ok=True)
        staged = []
        try:
            for name, data in self.files.items():
                fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=self.out_dir)
                with os.fdopen(fd, "wb") as fh:
                    fh.write(data)
                staged.append((tmp, self.out_dir / name))
        except BaseException:
            for tmp, _ in staged:
                os.unlink(tmp)
            raise
        for tmp, dest in staged:
            os.replace(tmp, dest)


# ---------------------------------------------------------------------------
# argument helpers


def _parse_blocks(text: str | None) -> tuple[int, ...] | None:
    if text is None:
        return None
    try:
        dims = tuple(int(v) for v in text.replace(" ", "").split(",") if v)
    except ValueError:
        raise InputError(f"--blocks must be comma-separated integers, got {text!r}") from None
    if not dims:
        raise InputError("--blocks is empty")
    return dims


def _spectral_input(args, bundle: Bundle) -> tuple[SpectralData, BlockStructure, int]:
    data, digest = read_json(args.spectral)
    bundle.inputs[str(args.spectral)] = digest
    try:
        spectral = SpectralData.from_dict(data)
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, NormalFormError):
            raise
        raise InputError(f"bad spectral file: {e}") from None
    dims = _parse_blocks(args.blocks) or tuple(data.get("blocks") or (1,) * spectral.m)
    blocks = BlockStructure(tuple(int(v) for v in dims), spectral.m_s)
    ell = args.ell if args.ell is not None else int(data.get("ell", 0))
    return spectral, blocks, ell


def _load_cocycle(path: str, bundle: Bundle) -> CocycleSpec:
    data, digest = read_json(path)
    bundle.inputs[str(path)] = digest
    return _cocycle_from(data)


def _cocycle_from(data: dict) -> CocycleSpec:
    try:
        return cocycle_from_dict(data, scenario_generator_factory)
    except KeyError as e:
        raise InputError(f"cocycle file is missing field {e}") from None


def _load_scenario(args, bundle: Bundle) -> ScenarioSpec:
    data, digest = read_json(args.scenario)
    bundle.inputs[str(args.scenario)] = digest
    try:
        if args.seed is not None:
            data.setdefault("params", {})["seed"] = args.seed
        if args.mode is not None:
            data["mode"] = args.mode
        if args.degree is not None or args.ell is not None:
            trunc = dict(data.get("trunc", {}))
            if args.degree is not None:
                trunc["D"] = args.degree
            if args.ell is not None:
                trunc["ell"] = args.ell
            data["trunc"] = trunc
        if getattr(args, "length", None) is not None:
            data["length"] = args.length
        return ScenarioSpec.from_dict(data)
    except (KeyError, TypeError) as e:
        raise InputError(f"bad scenario file: {e}") from None


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


# ---------------------------------------------------------------------------
# commands


def cmd_classify(args, bundle: Bundle) -> int:
    spectral, blocks, ell = _spectral_input(args, bundle)
    table = enumerate_plus_basis(spectral, blocks, ell)
    margin = validate_margin(spectral, blocks, ell)
    rows = table.to_rows()
    bundle.config.update(ell=ell, blocks=list(blocks.dims))
    bundle.add("classify.json", dump_json({
        "spectral": spectral.to_dict(), "blocks": blocks.to_dict(), "ell": ell,
        "plus_basis": rows, "r_min": table.r_min,
        "resonant": [{"comp": c, "alpha": list(a)} for c, a in table.resonant_slots],
        "margin": margin.to_dict()}))
    bundle.add("plus_basis.csv", dump_csv(
        ["comp", "alpha", "block", "exponent", "exponent_float", "resonant"],
        [[r["comp"], " ".join(map(str, r["alpha"])), r["block"],
          " + ".join(f"{c}*{u}" for u, c in r["exponent"].items()) or "0",
          repr(r["exponent_float"]), int(r["resonant"])] for r in rows]))
    bundle.note(f"plus-basis slots: {len(rows)}  r_min: {table.r_min}  "
                f"resonant: {len(table.resonant_slots)}")
    for r in rows:
        flag = "  RESONANT" if r["resonant"] else ""
        bundle.note(f"  comp {r['comp']} alpha {tuple(r['alpha'])}  E = {r['exponent_float']:.6g}{flag}")
    bundle.note(f"margin ok: {margin.ok}")
    return EXIT_OK


def cmd_margin(args, bundle: Bundle) -> int:
    spectral, blocks, ell = _spectral_input(args, bundle)
    report = validate_margin(spectral, blocks, ell)
    bundle.config.update(ell=ell, blocks=list(blocks.dims))
    bundle.add("margin.json", dump_json(report.to_dict()))
    eps = "none" if report.eps_max is None else f"{float(report.eps_max):.12g}"
    bundle.note(f"eps_max: {eps}  resonant slots: {len(report.resonant)}  ok: {report.ok}")
    return EXIT_OK


def cmd_generate(args, bundle: Bundle) -> int:
    if not args.scenario:
        raise InputError("generate needs --scenario")
    spec = _load_scenario(args, bundle)
    cocycle = generate(spec)
    bundle.config.update(mode=spec.mode, seed=spec.params.get("seed"))
    bundle.add("scenario.json", dump_json(spec.to_dict()))
    bundle.add("cocycle.json", dump_json(cocycle.to_dict()))
    bundle.note(f"generated {spec.kind.value} cocycle, horizon {cocycle.horizon}, "
                f"hash {cocycle.content_hash()[:16]}")
    return EXIT_OK


def _solver_config(args) -> SolverConfig:
    kw = {}
    for name in ("tol", "N_start", "N_step", "N_max", "delta_target", "min_comparisons"):
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = v
    if args.single_sweep:
        kw["single_sweep"] = True
    elif args.converge:
        kw["single_sweep"] = False
    return SolverConfig(**kw)


def _residual_ok(residual, mode: str) -> bool:
    return residual == 0 if mode == sc.RATIONAL else float(residual) <= FLOAT_RESIDUAL_TOL


def cmd_solve(args, bundle: Bundle) -> int:
    if args.scenario:
        spec = _load_scenario(args, bundle)
        cocycle = generate(spec)
    elif args.cocycle:
        cocycle = _load_cocycle(args.cocycle, bundle)
        if args.mode is not None and args.mode != cocycle.mode:
            raise InputError(f"cocycle is stored in {cocycle.mode} mode; --mode {args.mode} "
                             "applies to scenarios only")
    else:
        raise InputError("solve needs a cocycle file or --scenario")
    config = _solver_config(args)
    bundle.config.update(mode=cocycle.mode, seed=args.seed, solver=config.to_dict())
    result = solve(cocycle, config)
    residual = verify_diagram(cocycle, result)
    struct = check_result_structure(result)
    bundle.add("cocycle.json", dump_json(cocycle.to_dict()))
    bundle.add("result.json", dump_json(result.to_dict()))
    d = result.diagnostics
    bundle.add("convergence.csv", dump_csv(
        ["horizon", "delta", "delta_exact"],
        [[N, repr(float(x)), ex] for N, x, ex in zip(d.horizons, d.deltas, d.exact_deltas)]))
    ok = _residual_ok(residual, cocycle.mode)
    bundle.note(f"steps normalized: {result.N}  lambda: {d.lam}  rate: {_fmt(d.rate)}  "
                f"rho_bound: {_fmt(d.rho_bound)}")
    bundle.note(f"h MINUS-supported: {struct['h_minus_supported']}  "
                f"P in G+ x Z: {struct['all_P_in_G_plus_Z']}")
    bundle.note(f"diagram residual: {sc.render(residual, cocycle.mode)} ({'pass' if ok else 'FAIL'})")
    return EXIT_OK if ok and struct["all_P_in_G_plus_Z"] else EXIT_RESIDUAL


def _load_result(path: str, bundle: Bundle) -> NormalFormResult:
    data, digest = read_json(path)
    bundle.inputs[str(path)] = digest
    try:
        return NormalFormResult.from_dict(data)
    except KeyError as e:
        raise InputError(f"result file is missing field {e}") from None


def _matching_cocycle(result: NormalFormResult, cocycle_path: str | None, result_path: str,
                      bundle: Bundle) -> CocycleSpec:
    path = cocycle_path or str(Path(result_path).parent / "cocycle.json")
    cocycle = _load_cocycle(path, bundle)
    actual = cocycle.content_hash()
    if result.cocycle_hash is not None and result.cocycle_hash != actual:
        raise HashMismatch(f"result was computed for cocycle {result.cocycle_hash[:16]}, "
                           f"{path} hashes to {actual[:16]}")
    if result.N > (cocycle.horizon if cocycle.horizon is not None else result.N):
        raise HashMismatch("result covers more steps than the cocycle provides")
    return cocycle


def cmd_verify(args, bundle: Bundle) -> int:
    result = _load_result(args.result, bundle)
    cocycle = _matching_cocycle(result, args.cocycle, args.result, bundle)
    residual, per_step = verify_diagram(cocycle, result, per_step=True)
    ok = _residual_ok(residual, result.mode)
    rays = ray_report(cocycle, result, 0) if result.N else {}
    rays_ok = all(v for k, v in rays.items() if k.endswith("_ok"))
    members = [is_member(P.to_jet(), result.table,
                         tol=None if result.mode == sc.RATIONAL else 1e-10) for P in result.P]
    struct = check_result_structure(result)
    bundle.config.update(mode=result.mode)
    bundle.add("verify.json", dump_json({
        "residual": sc.render(residual, result.mode),
        "residual_ok": ok,
        "per_step": [sc.render(r, result.mode) for r in per_step],
        "rays": rays,
        "rays_ok": rays_ok,
        "membership": [m.value for m in members],
        "h_minus_supported": struct["h_minus_supported"]}))
    fit_rows = []
    for kind in ("full", "pure_y"):
        if kind in rays:
            fit_rows.append([rays["n"], kind, repr(rays[kind]), repr(rays[f"{kind}_threshold"]),
                             int(rays[f"{kind}_ok"])])
    bundle.add("residual_fits.csv", dump_csv(["n", "ray", "slope", "threshold", "ok"], fit_rows))
    bundle.add("membership.csv", dump_csv(["n", "membership"],
                                          [[n, m.value] for n, m in enumerate(members)]))
    bundle.note(f"diagram residual: {sc.render(residual, result.mode)} ({'pass' if ok else 'FAIL'})")
    for row in fit_rows:
        bundle.note(f"ray fit n={row[0]} {row[1]}: slope {float(row[2]):.4f} "
                    f"(threshold {float(row[3]):.2f}) {'pass' if row[4] else 'FAIL'}")
    bad = sum(m not in (Membership.G_PLUS_Z, Membership.G_PLUS) for m in members)
    bundle.note(f"P_n outside G+ x Z: {bad} of {len(members)}")
    return EXIT_OK if ok and rays_ok and not bad else EXIT_RESIDUAL


def cmd_gauge(args, bundle: Bundle) -> int:
    result = _load_result(args.result, bundle)
    cocycle = _matching_cocycle(result, args.cocycle, args.result, bundle)
    seed = 0 if args.seed is None else args.seed
    count = args.count
    bound = Fraction(args.bound)
    trunc = result.h[0].trunc
    table = result.table
    bundle.config.update(mode=result.mode, seed=seed, count=count, bound=str(bound))

    original = dump_json(result.to_dict())
    same = gauge_transform(result, identity_gauges(result))
    identity_noop = dump_json(same.to_dict()) == original

    rows = []
    master = random.Random(seed)
    for i in range(count):
        gseed = master.randrange(2 ** 32)
        gauges = [random_element(table, trunc, bound=bound, seed=gseed + n, mode=result.mode)
                  for n in range(len(result.h))]
        moved = gauge_transform(result, gauges)
        residual = verify_diagram(cocycle, moved)
        struct = check_result_structure(moved)
        ok = _residual_ok(residual, result.mode) and struct["all_P_in_G_plus_Z"]
        rows.append({"gauge": i, "seed": gseed, "residual": sc.render(residual, result.mode),
                     "membership_ok": struct["all_P_in_G_plus_Z"], "pass": ok})
    passed = sum(r["pass"] for r in rows)
    bundle.add("gauge.json", dump_json({"identity_noop": identity_noop, "gauges": rows,
                                        "passed": passed, "count": count}))
    bundle.add("gauge.csv", dump_csv(["gauge", "seed", "residual", "membership_ok", "pass"],
                                     [[r["gauge"], r["seed"], r["residual"], int(r["membership_ok"]),
                                       int(r["pass"])] for r in rows]))
    bundle.note(f"identity gauge byte-identical: {identity_noop}")
    bundle.note(f"gauges passed: {passed} of {count}")
    return EXIT_OK if identity_noop and passed == count else EXIT_CONVERGENCE


def cmd_batch(args, bundle: Bundle) -> int:
    if not args.manifest:
        raise InputError("batch needs --manifest")
    data, digest = read_json(args.manifest)
    bundle.inputs[str(args.manifest)] = digest
    if "jobs" in data:
        jobs = data["jobs"]
    elif "argv" in data:
        jobs = [{"name": data.get("command", "rerun"), "argv": data["argv"]}]
    else:
        raise InputError("batch manifest needs 'jobs' or a run manifest with 'argv'")
    rows = []
    worst = EXIT_OK
    for i, job in enumerate(jobs):
        try:
            name, argv = str(job.get("name", f"job{i}")), list(job["argv"])
        except (KeyError, TypeError, AttributeError):
            raise InputError(f"job {i} needs an 'argv' list") from None
        if argv and argv[0] == "batch":
            raise InputError("nested batch jobs are not allowed")
        job_dir = str(Path(args.out_dir) / name)
        code = main(argv + ["--out-dir", job_dir])
        rows.append([name, argv[0] if argv else "", code])
        bundle.note(f"job {name}: exit {code}")
        if code and not worst:
            worst = code
    bundle.add("batch.csv", dump_csv(["name", "command", "exit_code"], rows))
    return worst


COMMANDS = {
    "classify": cmd_classify,
    "margin": cmd_margin,
    "generate": cmd_generate,
    "solve": cmd_solve,
    "verify": cmd_verify,
    "gauge": cmd_gauge,
    "batch": cmd_batch,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--mode", choices=sc.MODES, default=None)
    common.add_argument("--tol", type=float, default=None)
    common.add_argument("--ell", type=int, default=None)
    common.add_argument("--degree", type=int, default=None, help="truncation degree D")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out-dir", default=".")
    common.add_argument("--scenario", default=None, help="scenario JSON file")
    common.add_argument("--manifest", default=None, help="batch or run manifest")
    common.add_argument("--blocks", default=None, help="block dimensions, e.g. 1,1")

    parser = argparse.ArgumentParser(prog="nsnormal", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"nsnormal {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classify", parents=[common], help="PLUS basis of a spectral file")
    p.add_argument("spectral")
    p = sub.add_parser("margin", parents=[common], help="epsilon margin of a spectral file")
    p.add_argument("spectral")
    p = sub.add_parser("generate", parents=[common], help="cocycle from a scenario")
    p.add_argument("--length", type=int, default=None)
    p = sub.add_parser("solve", parents=[common], help="normal form of a cocycle")
    p.add_argument("cocycle", nargs="?")
    p.add_argument("--length", type=int, default=None)
    p.add_argument("--N-start", dest="N_start", type=int, default=None)
    p.add_argument("--N-step", dest="N_step", type=int, default=None)
    p.add_argument("--N-max", dest="N_max", type=int, default=None)
    p.add_argument("--delta-target", dest="delta_target", type=float, default=None)
    p.add_argument("--min-comparisons", dest="min_comparisons", type=int, default=None)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--single-sweep", action="store_true")
    g.add_argument("--converge", action="store_true")
    p = sub.add_parser("verify", parents=[common], help="check a result against its cocycle")
    p.add_argument("cocycle")
    p.add_argument("result")
    p = sub.add_parser("gauge", parents=[common], help="random gauge covariance test")
    p.add_argument("result")
    p.add_argument("--cocycle", default=None, help="defaults to cocycle.json next to the result")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--bound", default="1/4")
    sub.add_parser("batch", parents=[common], help="run jobs listed in --manifest")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_PARSE
    bundle = Bundle(args.command, argv, args.out_dir)
    try:
        code = COMMANDS[args.command](args, bundle)
    except (InputError, InvalidParams) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except SpectralViolation as e:
        print(f"spectral violation: {e}", file=sys.stderr)
        return EXIT_SPECTRAL
    except NoConvergence as e:
        print(f"no convergence: {e}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except HashMismatch as e:
        print(f"hash mismatch: {e}", file=sys.stderr)
        return EXIT_HASH
    except NormalFormError as e:
        print(f"invariant violation: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INVARIANT
    bundle.commit()
    return code


if __name__ == "__main__":
    sys.exit(main())
