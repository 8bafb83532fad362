"""Parse charted contact logs and lineups into validated rallies.

The contact log is delimited text with a header. Rows are either point
headers (``row_type`` = P: who served, who received, who won) or contacts
(``row_type`` = C). A JSON sidecar maps the semantic field names used here
to the column names of a particular export.
"""
from __future__ import annotations

import csv
import json
import logging
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from .codes import WINNING_SKILLS, EvalCode, SkillType, eval_allowed, parse_zone
from .errors import (
    AmbiguousLibero,
    InconsistentWinner,
    MissingColumn,
    NonAlternatingPossession,
    RowRejected,
    VolleyError,
)
from .lineup import LineupState, rotation_violations

log = logging.getLogger(__name__)

CONTACT_FIELDS = (
    "row_type", "match_id", "set_number", "point_index", "possession_index",
    "player", "team", "conference", "skill", "eval", "attack_code",
    "start_x", "start_y", "end_zone", "serving_team", "receiving_team", "winner",
)
REQUIRED_CONTACT_FIELDS = (
    "row_type", "match_id", "set_number", "point_index", "possession_index",
    "player", "team", "conference", "skill", "eval",
    "serving_team", "receiving_team", "winner",
)
LINEUP_FIELDS = (
    "match_id", "set_number", "point_index", "team",
    "slot1", "slot2", "slot3", "slot4", "slot5", "slot6", "setter_slot",
)


@dataclass(frozen=True)
class ContactRecord:
    match_id: str
    set_number: int
    point_index: int
    possession_index: int
    player: str
    team: str
    conference: str
    skill: SkillType
    evaluation: EvalCode
    attack_code: str | None = None
    start_xy: tuple | None = None
    end_zone: int | None = None

    @property
    def point_key(self) -> tuple:
        return (self.match_id, self.set_number, self.point_index)

    def to_dict(self) -> dict:
        d = {
            "possession_index": self.possession_index,
            "player": self.player,
            "team": self.team,
            "conference": self.conference,
            "skill": self.skill.value,
            "eval": self.evaluation.symbol,
        }
        if self.attack_code is not None:
            d["attack_code"] = self.attack_code
        if self.start_xy is not None:
            d["start_xy"] = list(self.start_xy)
        if self.end_zone is not None:
            d["end_zone"] = self.end_zone
        return d

    @classmethod
    def from_dict(cls, d: dict, match_id: str, set_number: int, point_index: int) -> "ContactRecord":
        xy = d.get("start_xy")
        return cls(
            match_id, set_number, point_index, int(d["possession_index"]),
            d["player"], d["team"], d["conference"],
            SkillType(d["skill"]), EvalCode(d["eval"]),
            d.get("attack_code"), tuple(xy) if xy is not None else None, d.get("end_zone"),
        )


@dataclass(frozen=True)
class PointHeader:
    match_id: str
    set_number: int
    point_index: int
    serving_team: str
    receiving_team: str
    winner: str | None = None

    @property
    def point_key(self) -> tuple:
        return (self.match_id, self.set_number, self.point_index)


@dataclass(frozen=True)
class Rejection:
    row: int
    reason: str
    message: str

    def to_dict(self) -> dict:
        return {"row": self.row, "reason": self.reason, "message": self.message}


@dataclass
class Schema:
    delimiter: str = ","
    contact_columns: dict = field(default_factory=dict)
    lineup_columns: dict = field(default_factory=dict)
    skill_aliases: dict = field(default_factory=dict)
    point_marker: str = "P"
    contact_marker: str = "C"
    # optional single column holding "(x, y)" instead of start_x/start_y
    xy_column: str | None = None

    def contact_column(self, name: str) -> str:
        return self.contact_columns.get(name, name)

    def lineup_column(self, name: str) -> str:
        return self.lineup_columns.get(name, name)

    @classmethod
    def load(cls, path) -> "Schema":
        with open(path) as fh:
            raw = json.load(fh)
        return cls(**raw)

    def to_dict(self) -> dict:
        return {
            "delimiter": self.delimiter,
            "contact_columns": dict(self.contact_columns),
            "lineup_columns": dict(self.lineup_columns),
            "skill_aliases": dict(self.skill_aliases),
            "point_marker": self.point_marker,
            "contact_marker": self.contact_marker,
            "xy_column": self.xy_column,
        }

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


@dataclass
class ParseResult:
    records: list
    headers: list
    rejections: list
    lineups: list = field(default_factory=list)
    team_conferences: dict = field(default_factory=dict)
    n_rows: int = 0

    @property
    def rejection_rate(self) -> float:
        return len(self.rejections) / self.n_rows if self.n_rows else 0.0


class _Reject(Exception):
    def __init__(self, reason, message):
        super().__init__(message)
        self.reason = reason


def _parse_xy(text: str):
    text = text.strip()
    if not text:
        return None
    parts = text.strip("()").split(",")
    if len(parts) != 2:
        raise _Reject("BadValue", f"cannot parse coordinates {text!r}")
    try:
        return (float(parts[0]), float(parts[1]))
    except ValueError:
        raise _Reject("BadValue", f"cannot parse coordinates {text!r}") from None


def _as_int(text: str, name: str) -> int:
    try:
        return int(str(text).strip())
    except ValueError:
        raise _Reject("BadValue", f"{name} must be an integer, got {text!r}") from None


def _header_index(header: Sequence[str], schema: Schema, fields: Iterable[str], required: Iterable[str],
                  column_of) -> dict:
    position = {name.strip(): i for i, name in enumerate(header)}
    index = {}
    missing = []
    for f in fields:
        col = column_of(f)
        if col in position:
            index[f] = position[col]
        elif f in required:
            missing.append(col)
    if missing:
        raise MissingColumn(f"columns not found: {', '.join(missing)}", missing=missing)
    return index


def parse_contact_file(path, schema: Schema | None = None, *, lineup_path=None,
                       strict: bool = False) -> ParseResult:
    """Parse a contact log (and optionally its lineup file).

    Bad rows become ``Rejection`` entries carrying the source line number;
    with ``strict=True`` the first bad row raises ``RowRejected`` instead.
    """
    schema = schema or Schema()
    records: list[ContactRecord] = []
    headers: list[PointHeader] = []
    rejections: list[Rejection] = []
    seen_points: set = set()
    team_conf: dict[str, str] = {}
    n_rows = 0

    def reject(row_no, reason, message):
        if strict:
            raise RowRejected(message, row=row_no, reason=reason)
        rejections.append(Rejection(row_no, reason, message))

    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingColumn("file has no header row") from None
        fields = list(CONTACT_FIELDS)
        required = list(REQUIRED_CONTACT_FIELDS)
        if schema.xy_column:
            fields.append("start_xy")
        idx = _header_index(header, schema, fields, required,
                            lambda f: schema.xy_column if f == "start_xy" else schema.contact_column(f))

        def get(row, name):
            i = idx.get(name)
            if i is None or i >= len(row):
                return ""
            return row[i].strip()

        for row_no, row in enumerate(reader, start=2):
            if not any(cell.strip() for cell in row):
                continue
            n_rows += 1
            try:
                kind = get(row, "row_type")
                match_id = get(row, "match_id")
                if not match_id:
                    raise _Reject("BadValue", "empty match_id")
                set_number = _as_int(get(row, "set_number"), "set_number")
                point_index = _as_int(get(row, "point_index"), "point_index")
                key = (match_id, set_number, point_index)
                if kind == schema.point_marker:
                    if key in seen_points:
                        raise _Reject("DuplicatePoint", f"second header for point {key}")
                    serving, receiving = get(row, "serving_team"), get(row, "receiving_team")
                    if not serving or not receiving or serving == receiving:
                        raise _Reject("BadValue", "point header needs two distinct teams")
                    winner = get(row, "winner") or None
                    if winner is not None and winner not in (serving, receiving):
                        raise _Reject("BadValue", f"winner {winner!r} is not a team in the point")
                    seen_points.add(key)
                    headers.append(PointHeader(match_id, set_number, point_index, serving, receiving, winner))
                    continue
                if kind != schema.contact_marker:
                    raise _Reject("BadRowType", f"unknown row type {kind!r}")
                if key not in seen_points:
                    raise _Reject("OrphanContact", f"contact for {key} precedes any point header")
                try:
                    skill = SkillType.parse(get(row, "skill"), schema.skill_aliases)
                except ValueError as exc:
                    raise _Reject("BadSkill", str(exc)) from None
                try:
                    code = EvalCode.parse(get(row, "eval"))
                except ValueError as exc:
                    raise _Reject("BadEvalCode", str(exc)) from None
                if not eval_allowed(skill, code):
                    raise _Reject("BadEvalCode", f"'{code.symbol}' is not defined for {skill.value}")
                attack_code = get(row, "attack_code") or None
                if (attack_code is not None) != (skill is SkillType.ATTACK):
                    raise _Reject("BadAttackCode", "attack code must be present exactly on attacks")
                try:
                    zone = parse_zone(get(row, "end_zone"))
                except ValueError as exc:
                    raise _Reject("BadZone", str(exc)) from None
                if schema.xy_column:
                    xy = _parse_xy(get(row, "start_xy"))
                else:
                    sx, sy = get(row, "start_x"), get(row, "start_y")
                    xy = _parse_xy(f"{sx},{sy}") if sx or sy else None
                player, team, conf = get(row, "player"), get(row, "team"), get(row, "conference")
                if not player or not team:
                    raise _Reject("BadValue", "player and team are required")
                known = team_conf.setdefault(team, conf)
                if known != conf:
                    raise _Reject("ConferenceMismatch", f"team {team!r} listed in {known!r} and {conf!r}")
                records.append(ContactRecord(
                    match_id, set_number, point_index,
                    _as_int(get(row, "possession_index"), "possession_index"),
                    player, team, conf, skill, code, attack_code, xy, zone,
                ))
            except _Reject as exc:
                reject(row_no, exc.reason, str(exc))

    result = ParseResult(records, headers, rejections, team_conferences=team_conf, n_rows=n_rows)
    if lineup_path is not None:
        lineups, lineup_rejections = parse_lineup_file(lineup_path, schema, strict=strict)
        result.lineups = lineups
        result.rejections.extend(lineup_rejections)
    return result


def parse_lineup_file(path, schema: Schema | None = None, *, strict: bool = False):
    schema = schema or Schema()
    lineups: list[LineupState] = []
    rejections: list[Rejection] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingColumn("lineup file has no header row") from None
        idx = _header_index(header, schema, LINEUP_FIELDS, LINEUP_FIELDS, schema.lineup_column)
        for row_no, row in enumerate(reader, start=2):
            if not any(cell.strip() for cell in row):
                continue
            try:
                get = lambda name: row[idx[name]].strip() if idx[name] < len(row) else ""  # noqa: E731
                setter_slot = _as_int(get("setter_slot"), "setter_slot")
                if setter_slot not in range(1, 7):
                    raise _Reject("BadValue", f"setter_slot {setter_slot} outside 1..6")
                lineups.append(LineupState(
                    get("match_id"), _as_int(get("set_number"), "set_number"),
                    _as_int(get("point_index"), "point_index"), get("team"),
                    tuple(get(f"slot{k}") for k in range(1, 7)), setter_slot,
                ))
            except _Reject as exc:
                if strict:
                    raise RowRejected(str(exc), row=row_no, reason=exc.reason) from None
                rejections.append(Rejection(row_no, exc.reason, f"lineup: {exc}"))
    return lineups, rejections


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_contact_file(path, headers: Sequence[PointHeader], records: Sequence[ContactRecord],
                       schema: Schema | None = None) -> None:
    """Write point headers and contacts in the delimited ingest format."""
    schema = schema or Schema()
    by_point = defaultdict(list)
    for r in records:
        by_point[r.point_key].append(r)
    columns = [schema.contact_column(f) for f in CONTACT_FIELDS]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=schema.delimiter, lineterminator="\n")
        w.writerow(columns)
        for h in headers:
            w.writerow([schema.point_marker, h.match_id, h.set_number, h.point_index, "", "", "", "",
                        "", "", "", "", "", "", h.serving_team, h.receiving_team, _fmt(h.winner)])
            for r in by_point.get(h.point_key, ()):
                sx, sy = r.start_xy if r.start_xy is not None else (None, None)
                w.writerow([schema.contact_marker, r.match_id, r.set_number, r.point_index,
                            r.possession_index, r.player, r.team, r.conference, r.skill.value,
                            r.evaluation.symbol, _fmt(r.attack_code), _fmt(sx), _fmt(sy),
                            _fmt(r.end_zone), "", "", ""])


def write_lineup_file(path, lineups: Sequence[LineupState], schema: Schema | None = None) -> None:
    schema = schema or Schema()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=schema.delimiter, lineterminator="\n")
        w.writerow([schema.lineup_column(f) for f in LINEUP_FIELDS])
        for lu in lineups:
            w.writerow([lu.match_id, lu.set_number, lu.point_index, lu.team, *lu.slots, lu.setter_slot])


# --- rally assembly ------------------------------------------------------------

@dataclass
class PointLog:
    match_id: str
    set_number: int
    point_index: int
    serving_team: str
    receiving_team: str
    winner: str
    contacts: tuple
    lineups: dict = field(default_factory=dict)
    liberos: dict = field(default_factory=dict)
    conferences: dict = field(default_factory=dict)
    flags: tuple = ()

    @property
    def key(self) -> tuple:
        return (self.match_id, self.set_number, self.point_index)

    def side_of(self, team: str) -> str:
        return "S" if team == self.serving_team else "R"

    def opponent(self, team: str) -> str:
        return self.receiving_team if team == self.serving_team else self.serving_team

    def to_dict(self) -> dict:
        return {
            "match_id": self.match_id,
            "set_number": self.set_number,
            "point_index": self.point_index,
            "serving_team": self.serving_team,
            "receiving_team": self.receiving_team,
            "winner": self.winner,
            "conferences": dict(sorted(self.conferences.items())),
            "lineups": {t: lu.to_dict() for t, lu in sorted(self.lineups.items())},
            "liberos": dict(sorted(self.liberos.items())),
            "flags": list(self.flags),
            "contacts": [c.to_dict() for c in self.contacts],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PointLog":
        m, s, p = d["match_id"], int(d["set_number"]), int(d["point_index"])
        return cls(
            m, s, p, d["serving_team"], d["receiving_team"], d["winner"],
            tuple(ContactRecord.from_dict(c, m, s, p) for c in d["contacts"]),
            {t: LineupState.from_dict(lu, m, s, p, t) for t, lu in d.get("lineups", {}).items()},
            dict(d.get("liberos", {})),
            dict(d.get("conferences", {})),
            tuple(d.get("flags", ())),
        )


def derive_winner(contacts: Sequence[ContactRecord], serving: str, receiving: str) -> str | None:
    """Winner implied by the terminal contact's code, or None when the rally
    ends without an error or point-scoring code."""
    if not contacts:
        return None
    last = contacts[-1]
    other = receiving if last.team == serving else serving
    if last.evaluation is EvalCode.ERROR:
        return other
    if last.evaluation is EvalCode.PERFECT and last.skill in WINNING_SKILLS:
        return last.team
    # ball deflected off the block and dropped: the kill is charted on the attack
    if last.skill is SkillType.BLOCK and len(contacts) > 1:
        prev = contacts[-2]
        if prev.skill is SkillType.ATTACK and prev.evaluation is EvalCode.PERFECT:
            return prev.team
    return None


def validate_possessions(contacts: Sequence[ContactRecord]) -> None:
    for a, b in zip(contacts, contacts[1:]):
        if b.possession_index < a.possession_index:
            raise NonAlternatingPossession(
                f"possession index decreases at {b.player}", point=list(b.point_key))
        if b.possession_index == a.possession_index and b.team != a.team:
            raise NonAlternatingPossession(
                "two teams share one possession", point=list(b.point_key))
        if b.possession_index > a.possession_index and b.team == a.team:
            raise NonAlternatingPossession(
                "consecutive possessions by the same team without the ball crossing",
                point=list(b.point_key))


def libero_candidates(contacts: Iterable[ContactRecord], lineups: Iterable[LineupState]) -> dict:
    listed = defaultdict(set)
    for lu in lineups:
        listed[(lu.match_id, lu.set_number, lu.team)].update(lu.players())
    touched = defaultdict(set)
    for c in contacts:
        touched[(c.match_id, c.set_number, c.team)].add(c.player)
    # team-sets without any lineup carry no information about the libero
    return {k: sorted(touched[k] - listed[k]) for k in touched if k in listed}


@dataclass
class Assembly:
    points: list
    issues: list
    rotation_issues: list = field(default_factory=list)


def _assemble_match(match_id, headers, contacts_by_point, lineups_by_point, team_conf, liberos, strict):
    points, issues = [], []
    for h in headers:
        contacts = tuple(contacts_by_point.get(h.point_key, ()))
        try:
            if not contacts:
                raise InconsistentWinner("point has no contacts", point=list(h.point_key))
            first = contacts[0]
            if first.skill is not SkillType.SERVE or first.team != h.serving_team:
                raise NonAlternatingPossession("rally must open with a serve by the serving team",
                                               point=list(h.point_key))
            for c in contacts[1:]:
                if c.skill is SkillType.SERVE:
                    raise NonAlternatingPossession("second serve inside a rally", point=list(h.point_key))
                if c.team not in (h.serving_team, h.receiving_team):
                    raise NonAlternatingPossession(f"team {c.team!r} not in this point",
                                                   point=list(h.point_key))
            validate_possessions(contacts)
            derived = derive_winner(contacts, h.serving_team, h.receiving_team)
            flags = []
            if derived is None:
                flags.append("no_terminal_code")
                if h.winner is None:
                    raise InconsistentWinner("winner neither recorded nor implied", point=list(h.point_key))
                winner = h.winner
            else:
                if h.winner is not None and h.winner != derived:
                    raise InconsistentWinner(
                        f"terminal contact implies {derived!r} but header says {h.winner!r}",
                        point=list(h.point_key))
                winner = derived
        except VolleyError as exc:
            if strict:
                raise
            issues.append(exc.to_dict())
            continue
        lus = lineups_by_point.get(h.point_key, {})
        teams = (h.serving_team, h.receiving_team)
        points.append(PointLog(
            h.match_id, h.set_number, h.point_index, h.serving_team, h.receiving_team, winner,
            contacts,
            {t: lus[t] for t in teams if t in lus},
            {t: liberos.get((h.match_id, h.set_number, t)) for t in teams},
            {t: team_conf.get(t, "") for t in teams},
            tuple(flags),
        ))
    return points, issues


def assemble_points(parsed: ParseResult, *, strict: bool = False, threads: int = 1) -> Assembly:
    """Group parsed rows into validated rallies with lineups and liberos attached."""
    contacts_by_point = defaultdict(list)
    for r in parsed.records:
        contacts_by_point[r.point_key].append(r)
    lineups_by_point = defaultdict(dict)
    for lu in parsed.lineups:
        lineups_by_point[(lu.match_id, lu.set_number, lu.point_index)][lu.team] = lu

    issues = []
    liberos = {}
    for key, cands in sorted(libero_candidates(parsed.records, parsed.lineups).items()):
        if len(cands) > 1:
            exc = AmbiguousLibero(f"{len(cands)} off-lineup contributors", match_id=key[0],
                                  set_number=key[1], team=key[2], candidates=cands)
            if strict:
                raise exc
            issues.append(exc.to_dict())
            liberos[key] = None
        else:
            liberos[key] = cands[0] if cands else None

    headers_by_match = defaultdict(list)
    for h in parsed.headers:
        headers_by_match[h.match_id].append(h)
    match_ids = list(headers_by_match)

    def work(mid):
        return _assemble_match(mid, headers_by_match[mid], contacts_by_point, lineups_by_point,
                               parsed.team_conferences, liberos, strict)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, match_ids))
    else:
        results = [work(m) for m in match_ids]

    points = []
    for pts, iss in results:
        points.extend(pts)
        issues.extend(iss)

    rot = []
    by_set = defaultdict(list)
    for p in points:
        by_set[(p.match_id, p.set_number)].append(p)
    for pts in by_set.values():
        pts.sort(key=lambda p: p.point_index)
        rot.extend(rotation_violations((p.lineups, p.serving_team, p.winner) for p in pts if p.lineups))
    return Assembly(points, issues, rot)


# --- archive -------------------------------------------------------------------

def write_archive(path, points: Iterable[PointLog]) -> None:
    with open(path, "w") as fh:
        for p in points:
            fh.write(json.dumps(p.to_dict(), sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def read_archive(path) -> list[PointLog]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(PointLog.from_dict(json.loads(line)))
    return out


def with_winner(point: PointLog, winner: str) -> PointLog:
    return replace(point, winner=winner)
