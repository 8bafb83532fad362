"""Command-line entry point: ingest, fit-pwp, fit-sos, attribute, report, simulate."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from collections import Counter
from pathlib import Path

from . import __version__, attribution, ingest, markov, mixed, pipeline, sos, synth
from .errors import ConvergenceWarning, InsufficientClassData, NotConverged, VolleyError
from .manifest import RunManifest

log = logging.getLogger("volleypg")

EXIT_USAGE = 1


class UsageError(Exception):
    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _report_error(kind: str, message: str, **details) -> None:
    out = {"error": kind, "message": message}
    out.update(details)
    sys.stderr.write(json.dumps(out, sort_keys=True, default=str) + "\n")


def _need(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}", path=str(p))
    return p


def _dump_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args, *names) -> dict:
    return {n: getattr(args, n) for n in names}


# --- subcommands -----------------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    contacts = _need(args.contacts, "contact log")
    lineups = _need(args.lineups, "lineup file") if args.lineups else None
    schema_path = _need(args.schema, "schema") if args.schema else None
    schema = ingest.Schema.load(schema_path) if schema_path else ingest.Schema()
    out = _out_dir(args.out)
    man = RunManifest.begin("ingest", _config(args, "strict"),
                            {"contacts": contacts, "lineups": lineups, "schema": schema_path}, args.seed)
    parsed = ingest.parse_contact_file(contacts, schema, lineup_path=lineups, strict=args.strict)
    asm = ingest.assemble_points(parsed, strict=args.strict, threads=args.threads)
    ingest.write_archive(out / "points.jsonl", asm.points)
    with open(out / "rejections.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "reason", "message"])
        for r in parsed.rejections:
            w.writerow([r.row, r.reason, r.message])
    _dump_json(out / "issues.json", {
        "rows": parsed.n_rows,
        "rejected": len(parsed.rejections),
        "rejection_rate": parsed.rejection_rate,
        "rejections_by_reason": dict(Counter(r.reason for r in parsed.rejections)),
        "points": len(asm.points),
        "assembly": asm.issues,
        "rotation": asm.rotation_issues,
    })
    man.finish(out)
    log.info("ingested %d points, %d rows rejected", len(asm.points), len(parsed.rejections))
    return 0


def _load_points(path):
    return ingest.read_archive(_need(path, "point archive"))


def _load_pwp(path) -> markov.PwpTable:
    d = _need(path, "pwp directory")
    with open(_need(d / "pwp.json", "pwp table")) as fh:
        return markov.PwpTable.from_json(json.load(fh))


def _pwp_support(path) -> int:
    with open(Path(path) / "transitions.json") as fh:
        return int(json.load(fh)["support"])


def cmd_fit_pwp(args) -> int:
    points_path = _need(args.points, "point archive")
    out = _out_dir(args.out)
    man = RunManifest.begin("fit-pwp", _config(args, "support", "steps"), {"points": points_path}, args.seed)
    points = ingest.read_archive(points_path)
    stage = pipeline.fit_pwp(points, support=args.support, n_steps=args.steps, threads=args.threads)
    _dump_json(out / "transitions.json", stage.model.to_json())
    _dump_json(out / "pwp.json", stage.table.to_json())
    stage.table.write_csv(out / "pwp.csv")
    man.notes = {"states": stage.model.n_states, "max_residual": stage.table.max_residual,
                 "backed_off_rows": len(stage.model.backoff)}
    man.finish(out)
    return 0


def _fit_guard(strict: bool):
    """Context manager turning REML non-convergence into an error under --strict."""
    cm = warnings.catch_warnings(record=True)

    class _Guard:
        def __enter__(self):
            self.caught = cm.__enter__()
            warnings.simplefilter("always", ConvergenceWarning)
            return self

        def __exit__(self, *exc):
            cm.__exit__(*exc)
            self.messages = [str(w.message) for w in self.caught if issubclass(w.category, ConvergenceWarning)]
            for w in self.caught:
                if not issubclass(w.category, ConvergenceWarning):
                    warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
            if exc[0] is None and strict and self.messages:
                raise NotConverged(self.messages[0], count=len(self.messages))
            return False

    return _Guard()


def cmd_fit_sos(args) -> int:
    points_path = _need(args.points, "point archive")
    pwp_dir = _need(args.pwp, "pwp directory")
    out = _out_dir(args.out)
    support = args.support if args.support is not None else _pwp_support(pwp_dir)
    man = RunManifest.begin("fit-sos", {"support": support, "strict": args.strict},
                            {"points": points_path, "pwp": pwp_dir}, args.seed)
    points = ingest.read_archive(points_path)
    table = _load_pwp(pwp_dir)
    with _fit_guard(args.strict) as guard:
        stage = pipeline.fit_sos(points, table, support=support, threads=args.threads)
    stage.serve_fit.dump(out / "model_SV.json")
    for k, f in stage.attack.fits.items():
        f.dump(out / f"model_{k}.json")
    _dump_json(out / "ratios.json", stage.ratios.to_json())
    stage.tables.blocker.write_csv(out / "responsibility_blocker.csv")
    stage.tables.digger.write_csv(out / "responsibility_digger.csv")
    _write_sos_ledger(out / "sos_ledger.csv", stage)
    _dump_json(out / "issues.json", {"counts": dict(stage.issues), "rows": stage.attack.rows,
                                    "excluded": stage.attack.excluded, "not_converged": guard.messages})
    man.notes = {"not_converged": guard.messages}
    man.finish(out)
    return 0


def _write_sos_ledger(path, stage) -> None:
    """Opponent strength faced at every modelled contact, per model."""
    fits = stage.fits
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["point", "contact_index", "model", "offense_faces", "defense_faces"])
        for o in stage.serve_obs:
            pt = "/".join(map(str, o.point))
            w.writerow([pt, 0, "SV", repr(sos.player_sos(o, fits, "SV", "Server")),
                        repr(sos.player_sos(o, fits, "SV", "Receiver"))])
        for o in stage.attack_obs:
            pt = "/".join(map(str, o.point))
            for k in sorted(o.y):
                off = sos.player_sos(o, fits, k, "Attacker") if k > 1 else 0.0
                dfn = sos.player_sos(o, fits, k, "Blocker") if k > 1 else 0.0
                w.writerow([pt, o.contact_index, k, repr(off), repr(dfn)])


def _load_fits(sos_dir) -> dict:
    fits = {"SV": mixed.MixedFit.load(_need(sos_dir / "model_SV.json", "serve model"))}
    for k in sos.ATTACK_FACTORS:
        fits[k] = mixed.MixedFit.load(_need(sos_dir / f"model_{k}.json", f"attack model {k}"))
    return fits


def cmd_attribute(args) -> int:
    points_path = _need(args.points, "point archive")
    pwp_dir = _need(args.pwp, "pwp directory")
    sos_dir = _need(args.sos, "sos directory")
    out = _out_dir(args.out)
    support = _pwp_support(pwp_dir)
    man = RunManifest.begin("attribute", {"support": support},
                            {"points": points_path, "pwp": pwp_dir, "sos": sos_dir}, args.seed)
    points = ingest.read_archive(points_path)
    data = pipeline.prepare_sos(points, _load_pwp(pwp_dir), support=support, threads=args.threads)
    fits = _load_fits(sos_dir)
    attack_fits = {k: fits[k] for k in sos.ATTACK_FACTORS}
    ratios = attribution.Ratios.from_fits(attack_fits)
    entries = pipeline.credit_entries(data.serve_obs, data.attack_obs, fits["SV"], attack_fits, ratios)
    attribution.write_ledger(out / "ledger.csv", entries)
    by_role = Counter()
    raw_role = Counter()
    for e in entries:
        by_role[e.role] += e.adjusted_pg
        raw_role[e.role] += e.raw_pg
    _dump_json(out / "summary.json", {
        "entries": len(entries),
        "points": len(points),
        "ratios": ratios.to_json(),
        "adjusted_by_role": {k: by_role[k] for k in sorted(by_role)},
        "raw_by_role": {k: raw_role[k] for k in sorted(raw_role)},
    })
    man.finish(out)
    return 0


def cmd_report(args) -> int:
    ledger = _need(args.ledger, "ledger")
    if ledger.is_dir():
        ledger = _need(ledger / "ledger.csv", "ledger")
    points_path = _need(args.points, "point archive")
    out = _out_dir(args.out)
    man = RunManifest.begin("report", _config(args, "level", "basis", "min_contacts", "top", "alpha", "bins"),
                            {"ledger": ledger, "points": points_path}, args.seed)
    entries = attribution.read_ledger(ledger)
    points = ingest.read_archive(points_path)
    sets = attribution.sets_played(points)
    positions = attribution.player_positions(points)
    rows = attribution.aggregate(entries, sets, args.level, args.basis, args.min_contacts, positions)
    attribution.write_aggregate(out / f"aggregate_{args.level}.csv", rows, args.level, args.top)
    attribution.write_aggregate(out / f"aggregate_{args.level}_raw.csv", rows, args.level, args.top,
                                sort_by="raw")
    attribution.write_histogram(out / "hist_adjusted.csv", [r.total for r in rows], args.bins)
    attribution.write_histogram(out / "hist_raw.csv", [r.raw_total for r in rows], args.bins)
    attribution.write_histogram(out / "hist_sos.csv", [r.mean_sos for r in rows], args.bins)

    recs = attribution.team_records(points)
    usable = [(ps, pa, w / m) for _, ps, pa, w, m in recs if m > 0 and ps + pa > 0]
    pyth = {"teams": len(usable)}
    if args.alpha is not None:
        pyth["alpha"] = args.alpha
        pyth["alpha_source"] = "given"
    elif len(usable) >= 2:
        fit = attribution.fit_alpha(usable)
        pyth.update(alpha=fit.alpha, alpha_source="fitted", objective=fit.objective)
    if "alpha" in pyth:
        a = pyth["alpha"]
        pyth["point_share_0.502"] = attribution.pythagorean_winpct(0.502, 0.498, a)
        pyth["records"] = [{"team": t, "points_scored": ps, "points_allowed": pa, "wins": w, "matches": m,
                            "expected": attribution.pythagorean_winpct(ps, pa, a) if ps + pa else None}
                           for t, ps, pa, w, m in recs]
    _dump_json(out / "pythagorean.json", pyth)
    try:
        ds = attribution.ds_substitution_report(entries, points).to_json()
    except InsufficientClassData as exc:
        ds = exc.to_dict()
    _dump_json(out / "ds_report.json", ds)
    man.notes = {"rows": len(rows)}
    man.finish(out)
    return 0


def cmd_simulate(args) -> int:
    cfg_path = _need(args.config, "simulation config") if args.config else None
    raw = {}
    if cfg_path:
        with open(cfg_path) as fh:
            raw = json.load(fh)
    if args.seed is not None:
        raw["seed"] = args.seed
    config = synth.SyntheticConfig.from_json(raw)
    out = _out_dir(args.out)
    man = RunManifest.begin("simulate", config.to_json(), {"config": cfg_path}, config.seed)
    season = synth.generate_season(config, threads=args.threads)
    season.write(out)
    man.notes = {"external_inputs": ["config"], "points": len(season.headers), "contacts": len(season.records)}
    man.finish(out)
    return 0


# --- parser ----------------------------------------------------------------------------------------

def _common(defaults: bool) -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
    p.add_argument("--threads", type=int, default=d(1), help="worker threads (results do not depend on it)")
    p.add_argument("--seed", type=int, default=d(None), help="seed for every random draw of the run")
    p.add_argument("--strict", action="store_true", default=d(False),
                   help="fail on the first rejected row or non-converged fit")
    p.add_argument("--log-level", default=d("WARNING"))
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="volleypg", parents=[_common(True)],
                     description="Win-probability credit for volleyball contacts.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    common = _common(False)

    p = sub.add_parser("ingest", parents=[common], help="parse contact and lineup logs into a point archive")
    p.add_argument("--contacts", required=True)
    p.add_argument("--lineups")
    p.add_argument("--schema")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("fit-pwp", parents=[common], help="fit the rally chain and sideout probabilities")
    p.add_argument("--points", required=True)
    p.add_argument("--support", type=int, default=markov.DEFAULT_SUPPORT)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_pwp)

    p = sub.add_parser("fit-sos", parents=[common], help="fit the serve and attack schedule models")
    p.add_argument("--points", required=True)
    p.add_argument("--pwp", required=True)
    p.add_argument("--support", type=int, default=None, help="baseline support (default: the pwp run's)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_sos)

    p = sub.add_parser("attribute", parents=[common], help="write the per-contact credit ledger")
    p.add_argument("--points", required=True)
    p.add_argument("--pwp", required=True)
    p.add_argument("--sos", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attribute)

    p = sub.add_parser("report", parents=[common], help="aggregate the ledger into tables and histograms")
    p.add_argument("--ledger", required=True, help="ledger CSV or attribute output directory")
    p.add_argument("--points", required=True)
    p.add_argument("--level", choices=("player", "team", "conference"), default="player")
    p.add_argument("--basis", choices=("per_set", "per_contact", "per_opportunity"), default="per_set")
    p.add_argument("--min-contacts", type=int, default=0)
    p.add_argument("--top", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None, help="Pythagorean exponent (default: fitted)")
    p.add_argument("--bins", type=int, default=30)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("simulate", parents=[common], help="generate a synthetic season with known effects")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError("missing subcommand")
        if args.threads < 1:
            raise UsageError("--threads must be at least 1", threads=args.threads)
        logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        _report_error("Usage", str(exc), **exc.details)
        return EXIT_USAGE
    except VolleyError as exc:
        sys.stderr.write(json.dumps(exc.to_dict(), sort_keys=True, default=str) + "\n")
        return exc.exit_status
    except (OSError, json.JSONDecodeError, ValueError, KeyError) as exc:
        _report_error(type(exc).__name__, str(exc))
        return 2


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
