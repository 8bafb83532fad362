"""Points Gained: per-contact credit, aggregation, and two applications
(Pythagorean win percentage, defensive-specialist reception value)."""
from __future__ import annotations

import csv
import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import optimize

from . import mixed
from .errors import DegenerateSeason, InsufficientClassData, MissingRatio, UnknownEntity
from .lineup import FRONT_SLOTS
from .sos import ATTACK_FACTORS, OFFENSE, RECEIVER_SIDE, SERVER_SIDE

ROLE_SKILL = {
    "Server": "SRV",
    "Receiver": "PASS",
    "Digger": "PASS",
    "Setter": "SET",
    "Attacker": "ATT",
    "Blocker": "BLK",
}
SKILL_COLUMNS = ("SRV", "PASS", "SET", "ATT", "BLK")
OFFENSE_ROLES = frozenset({"Server", "Attacker", "Setter"})


@dataclass
class PointsGainedEntry:
    point: tuple
    contact_index: int
    player: str
    team: str
    conference: str
    role: str
    component: str
    share: float
    raw_pg: float
    adjusted_pg: float
    # adjusted_pg = raw_pg - sos_term, as the opponent term enters the credit formula
    sos_term: float
    # opponent strength faced, positive when the opposition was stronger than average
    sos: float
    # own-side conference/team effects, kept out of individual credit
    own_side: float = 0.0

    @property
    def skill(self) -> str:
        return ROLE_SKILL[self.role]

    def to_row(self) -> dict:
        d = asdict(self)
        d["point"] = "/".join(map(str, self.point))
        d["skill"] = self.skill
        return d


LEDGER_COLUMNS = ("point", "contact_index", "player", "team", "conference", "role", "skill", "component",
                  "share", "raw_pg", "adjusted_pg", "sos_term", "sos", "own_side")


def _entry(obs_point, idx, player, team, conf, role, comp, share, y, term, strength, own):
    sign = 1.0 if role in OFFENSE_ROLES else -1.0
    raw = sign * share * y
    sos_term = sign * share * term
    adjusted = raw - sos_term
    toughness = -strength if role in OFFENSE_ROLES else strength
    return PointsGainedEntry(obs_point, idx, player, team, conf, role, comp, share, raw, adjusted,
                             sos_term, toughness, own)


def pg_serve_receive(obs, fit: mixed.MixedFit) -> tuple[PointsGainedEntry, PointsGainedEntry]:
    """Credit for one serve: the server against the receiver side, the
    receiver against the server side."""
    lv = obs.levels()
    a = fit.intercept
    rcv = mixed.predict_linear(fit, lv, RECEIVER_SIDE, include_intercept=False)
    srv = mixed.predict_linear(fit, lv, SERVER_SIDE, include_intercept=False)
    own_srv = mixed.predict_linear(fit, lv, SERVER_SIDE[:2], include_intercept=False)
    own_rcv = mixed.predict_linear(fit, lv, RECEIVER_SIDE[:2], include_intercept=False)
    server = _entry(obs.point, 0, obs.server, obs.srv_team, obs.srv_conf, "Server", "SV", 1.0,
                    obs.y, a + rcv, rcv, own_srv)
    receiver = _entry(obs.point, 1, obs.receiver, obs.rcv_team, obs.rcv_conf, "Receiver", "SV", 1.0,
                      obs.y, a + srv, srv, own_rcv)
    return server, receiver


@dataclass
class Ratios:
    """Attacker share theta/(theta+psi) per component and blocker share
    beta/(beta+delta) for the components with both defenders."""

    attacker: dict
    blocker: dict

    @classmethod
    def from_fits(cls, fits: Mapping[int, mixed.MixedFit]) -> "Ratios":
        att = {k: mixed.variance_ratio(f, "attacker", "setter") for k, f in fits.items()}
        blk = {k: mixed.variance_ratio(fits[k], "blocker", "digger") for k in (6, 7) if k in fits}
        return cls(att, blk)

    def to_json(self) -> dict:
        return {"attacker": {str(k): v for k, v in self.attacker.items()},
                "blocker": {str(k): v for k, v in self.blocker.items()}}


@dataclass
class AttackCredit:
    """Per-component credit of one attack; index k-1 holds component k."""

    attacker: np.ndarray = field(default_factory=lambda: np.zeros(7))
    setter: np.ndarray = field(default_factory=lambda: np.zeros(7))
    blocker: np.ndarray = field(default_factory=lambda: np.zeros(7))
    digger: np.ndarray = field(default_factory=lambda: np.zeros(7))
    entries: list = field(default_factory=list)

    def totals(self) -> dict:
        return {"A": float(self.attacker.sum()), "S": float(self.setter.sum()),
                "B": float(self.blocker[1:].sum()), "D": float(self.digger[5:].sum())}


def pg_attack(obs, fits: Mapping[int, mixed.MixedFit], ratios: Ratios) -> AttackCredit:
    credit = AttackCredit()
    lv = obs.levels()
    for k in sorted(obs.y):
        y = obs.y[k]
        if k not in ratios.attacker:
            raise MissingRatio(f"no attacker/setter ratio for component {k}", component=k)
        fit = fits[k]
        a_share = ratios.attacker[k]
        s_share = 1.0 - a_share
        off_own = mixed.predict_linear(fit, lv, OFFENSE[:2], include_intercept=False)
        if k == 1:
            # offense-only model: no schedule adjustment
            term, strength = 0.0, 0.0
        else:
            def_side = tuple(f for f in ATTACK_FACTORS[k] if f not in OFFENSE)
            strength = mixed.predict_linear(fit, lv, def_side, include_intercept=False)
            term = fit.intercept + strength
        comp = str(k)
        ea = _entry(obs.point, obs.contact_index, obs.attacker, obs.att_team, obs.att_conf, "Attacker",
                    comp, a_share, y, term, strength, off_own)
        es = _entry(obs.point, obs.contact_index, obs.setter, obs.att_team, obs.att_conf, "Setter",
                    comp, s_share, y, term, strength, off_own)
        credit.attacker[k - 1] = ea.adjusted_pg
        credit.setter[k - 1] = es.adjusted_pg
        credit.entries += [ea, es]
        if k == 1:
            continue
        off_strength = mixed.predict_linear(fit, lv, OFFENSE, include_intercept=False)
        off_term = fit.intercept + off_strength
        def_own = mixed.predict_linear(fit, lv, ("def_conf", "def_team"), include_intercept=False)
        if k >= 6:
            if k not in ratios.blocker:
                raise MissingRatio(f"no blocker/digger ratio for component {k}", component=k)
            b_share = ratios.blocker[k]
            d_share = 1.0 - b_share
        else:
            b_share, d_share = 1.0, 0.0
        if obs.blocker is not None:
            eb = _entry(obs.point, obs.contact_index, obs.blocker, obs.def_team, obs.def_conf, "Blocker",
                        comp, b_share, y, off_term, off_strength, def_own)
            credit.blocker[k - 1] = eb.adjusted_pg
            credit.entries.append(eb)
        if k >= 6 and obs.digger is not None:
            ed = _entry(obs.point, obs.contact_index, obs.digger, obs.def_team, obs.def_conf, "Digger",
                        comp, d_share, y, off_term, off_strength, def_own)
            credit.digger[k - 1] = ed.adjusted_pg
            credit.entries.append(ed)
    return credit


def write_ledger(path, entries: Iterable[PointsGainedEntry]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, LEDGER_COLUMNS, lineterminator="\n")
        w.writeheader()
        for e in entries:
            row = e.to_row()
            for k in ("share", "raw_pg", "adjusted_pg", "sos_term", "sos", "own_side"):
                row[k] = repr(float(row[k]))
            w.writerow(row)


def read_ledger(path) -> list[PointsGainedEntry]:
    out = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            m, s, p = r["point"].split("/")
            out.append(PointsGainedEntry(
                (m, int(s), int(p)), int(r["contact_index"]), r["player"], r["team"], r["conference"],
                r["role"], r["component"], float(r["share"]), float(r["raw_pg"]), float(r["adjusted_pg"]),
                float(r["sos_term"]), float(r["sos"]), float(r["own_side"]),
            ))
    return out


# --- aggregation ---------------------------------------------------------------------

def sets_played(points: Iterable) -> dict:
    """Sets per player, team and conference: a player counts a set when she
    is in a lineup or touches the ball in it."""
    player_sets = defaultdict(set)
    team_sets = defaultdict(set)
    conf_of = {}
    for p in points:
        key = (p.match_id, p.set_number)
        for team, lu in p.lineups.items():
            team_sets[team].add(key)
            for pl in lu.players():
                player_sets[pl].add(key)
        for c in p.contacts:
            player_sets[c.player].add(key)
            team_sets[c.team].add(key)
        conf_of.update(p.conferences)
    conf_sets = Counter()
    for team, s in team_sets.items():
        conf_sets[conf_of.get(team, "")] += len(s)
    return {
        "player": {k: len(v) for k, v in player_sets.items()},
        "team": {k: len(v) for k, v in team_sets.items()},
        "conference": dict(conf_sets),
    }


def player_positions(points: Iterable) -> dict:
    """Modal lineup role per player; players never in a lineup are liberos (L)."""
    roles = defaultdict(Counter)
    touched = set()
    for p in points:
        for lu in p.lineups.values():
            for slot, pl in enumerate(lu.slots, start=1):
                if pl:
                    roles[pl][lu.role(slot)] += 1
        for c in p.contacts:
            touched.add(c.player)
    out = {pl: sorted(cnt.items(), key=lambda kv: (-kv[1], kv[0]))[0][0] for pl, cnt in roles.items()}
    for pl in touched - set(out):
        out[pl] = "L"
    return out


@dataclass
class AggregateRow:
    entity: str
    team: str
    conference: str
    position: str
    sets: int
    n_contacts: int
    n_entries: int
    divisor: float
    adjusted: dict
    raw: dict
    mean_sos: float

    @property
    def total(self) -> float:
        return sum(self.adjusted.values())

    @property
    def raw_total(self) -> float:
        return sum(self.raw.values())


def _entity_key(e: PointsGainedEntry, level: str):
    if level == "player":
        return e.player
    if level == "team":
        return e.team
    if level == "conference":
        return e.conference
    raise ValueError(f"unknown level {level!r}")


def aggregate(entries: Sequence[PointsGainedEntry], sets: Mapping | None = None, level: str = "player",
              basis: str = "per_set", min_contacts: Mapping[str, int] | int | None = None,
              positions: Mapping | None = None, entity: str | None = None) -> list[AggregateRow]:
    """Sum credit by entity and skill column, then divide by the basis.

    per_set divides by sets played, per_contact by the number of distinct
    contacts credited, per_opportunity by the number of role credits.
    ``min_contacts`` is either one threshold on credited contacts or a map
    from skill column to the minimum number of credits in that column.
    """
    if basis not in ("per_set", "per_contact", "per_opportunity"):
        raise ValueError(f"unknown basis {basis!r}")
    adj = defaultdict(lambda: dict.fromkeys(SKILL_COLUMNS, 0.0))
    raw = defaultdict(lambda: dict.fromkeys(SKILL_COLUMNS, 0.0))
    contacts = defaultdict(set)
    opps = defaultdict(set)
    by_skill = defaultdict(Counter)
    sos_sum = defaultdict(float)
    sos_n = Counter()
    team_of, conf_of = {}, {}
    for e in entries:
        k = _entity_key(e, level)
        adj[k][e.skill] += e.adjusted_pg
        raw[k][e.skill] += e.raw_pg
        contacts[k].add((e.point, e.contact_index))
        opps[k].add((e.point, e.contact_index, e.role))
        by_skill[k][e.skill] += 1
        if e.component != "1":
            sos_sum[k] += e.sos
            sos_n[k] += 1
        team_of.setdefault(k, e.team if level != "conference" else "")
        conf_of.setdefault(k, e.conference)
    if entity is not None:
        if entity not in adj:
            raise UnknownEntity(f"no credit recorded for {entity!r}", entity=entity, level=level)
        keys = [entity]
    else:
        keys = sorted(adj)
    set_counts = (sets or {}).get(level, {})
    rows = []
    for k in keys:
        if isinstance(min_contacts, int) and len(contacts[k]) < min_contacts:
            continue
        if isinstance(min_contacts, Mapping) and any(by_skill[k][s] < n for s, n in min_contacts.items()):
            continue
        n_sets = int(set_counts.get(k, 0))
        if basis == "per_set":
            div = float(n_sets)
        elif basis == "per_contact":
            div = float(len(contacts[k]))
        else:
            div = float(len(opps[k]))
        if div <= 0:
            continue
        rows.append(AggregateRow(
            k, team_of[k], conf_of[k], (positions or {}).get(k, "") if level == "player" else "",
            n_sets, len(contacts[k]), len(opps[k]), div,
            {s: v / div for s, v in adj[k].items()}, {s: v / div for s, v in raw[k].items()},
            sos_sum[k] / sos_n[k] if sos_n[k] else 0.0,
        ))
    return rows


def write_aggregate(path, rows: Sequence[AggregateRow], level: str, top: int | None = None,
                    sort_by: str = "adjusted") -> None:
    ordered = sorted(rows, key=lambda r: (-(r.total if sort_by == "adjusted" else r.raw_total), r.entity))
    if top:
        ordered = ordered[:top]
    head = {"player": ["PLAYER", "TEAM", "CONF", "POS"], "team": ["TEAM", "CONF"],
            "conference": ["CONF"]}[level]
    cols = head + ["SETS", "PG*/S", *SKILL_COLUMNS, "RAW/S", *[f"RAW_{s}" for s in SKILL_COLUMNS], "SOS"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in ordered:
            ident = {"player": [r.entity, r.team, r.conference, r.position], "team": [r.entity, r.conference],
                     "conference": [r.entity]}[level]
            w.writerow(ident + [r.sets, f"{r.total:.2f}", *[f"{r.adjusted[s]:.2f}" for s in SKILL_COLUMNS],
                                f"{r.raw_total:.2f}", *[f"{r.raw[s]:.2f}" for s in SKILL_COLUMNS],
                                f"{r.mean_sos:+.4f}"])


def histogram(values: Sequence[float], bins: int = 30):
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return np.zeros(0), np.zeros(bins + 1)
    counts, edges = np.histogram(values, bins=bins)
    return counts, edges


def write_histogram(path, values: Sequence[float], bins: int = 30) -> None:
    counts, edges = histogram(values, bins)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c)])


# --- Pythagorean winning percentage -----------------------------------------------------------

def pythagorean_winpct(points_scored: float, points_allowed: float, alpha: float) -> float:
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if points_scored < 0 or points_allowed < 0:
        raise ValueError("point counts must be non-negative")
    if points_scored + points_allowed == 0:
        raise DegenerateSeason("no points scored or allowed")
    if points_scored == points_allowed:
        return 0.5
    if points_scored == 0:
        return 0.0
    # ratio form avoids overflow of PS**alpha for season totals
    return 1.0 / (1.0 + (points_allowed / points_scored) ** alpha)


@dataclass
class AlphaFit:
    alpha: float
    objective: float
    n_teams: int


def fit_alpha(records: Sequence[tuple], bounds=(0.5, 50.0)) -> AlphaFit:
    """Least-squares alpha over (points_scored, points_allowed, win_fraction) per team."""
    rec = [(float(ps), float(pa), float(wf)) for ps, pa, wf in records]
    if not rec:
        raise DegenerateSeason("no team records")
    ps = np.array([r[0] for r in rec])
    pa = np.array([r[1] for r in rec])
    wf = np.array([r[2] for r in rec])
    if np.any(ps + pa <= 0):
        raise DegenerateSeason("a team has no points")
    ratio = np.where(ps > 0, pa / np.where(ps > 0, ps, 1.0), np.inf)

    def sse(alpha):
        with np.errstate(over="ignore", divide="ignore"):
            pred = 1.0 / (1.0 + ratio ** alpha)
        return float(np.sum((pred - wf) ** 2))

    res = optimize.minimize_scalar(sse, bounds=bounds, method="bounded", options={"xatol": 1e-8})
    return AlphaFit(float(res.x), float(res.fun), len(rec))


def team_records(points: Iterable) -> list[tuple]:
    """(team, points scored, points allowed, match wins, matches) from rally logs."""
    scored = Counter()
    allowed = Counter()
    set_wins = defaultdict(Counter)
    set_pts = defaultdict(lambda: defaultdict(Counter))
    teams_in = defaultdict(set)
    for p in points:
        loser = p.opponent(p.winner)
        scored[p.winner] += 1
        allowed[loser] += 1
        teams_in[p.match_id].update((p.serving_team, p.receiving_team))
        set_pts[p.match_id][p.set_number][p.winner] += 1
    wins = Counter()
    matches = Counter()
    for m, teams in teams_in.items():
        for s, pts in set_pts[m].items():
            if len(pts) and pts.most_common(1)[0][1] > 0:
                top = max(sorted(pts), key=lambda t: pts[t])
                set_wins[m][top] += 1
        for t in teams:
            matches[t] += 1
        winner = max(sorted(teams), key=lambda t: set_wins[m][t])
        wins[winner] += 1
    return [(t, scored[t], allowed[t], wins[t], matches[t]) for t in sorted(matches)]


# --- defensive specialist reception value -----------------------------------------------------

@dataclass
class DSReport:
    class_stats: dict
    delta: float
    delta_se: float
    opportunities_per_point: float
    implied_point_delta: float
    classes: dict

    def to_json(self) -> dict:
        return {
            "class_stats": self.class_stats,
            "delta_per_opportunity": self.delta,
            "delta_se": self.delta_se,
            "substitutable_opportunities_per_point": self.opportunities_per_point,
            "implied_point_win_delta": self.implied_point_delta,
        }


def classify_outside_hitters(points: Iterable, front_only: float = 0.9, back_only: float = 0.9) -> dict:
    """all_around_oh / front_only_oh / ds from lineup back-row participation.

    Only players whose modal lineup role is OH are classified; a player
    almost always in a back-row slot is a DS, almost always front row a
    front-only OH, and anything between an all-around OH.
    """
    back = Counter()
    total = Counter()
    roles = defaultdict(Counter)
    for p in points:
        for lu in p.lineups.values():
            for slot, pl in enumerate(lu.slots, start=1):
                if not pl:
                    continue
                roles[pl][lu.role(slot)] += 1
                total[pl] += 1
                if slot not in FRONT_SLOTS:
                    back[pl] += 1
    out = {}
    for pl, cnt in roles.items():
        role = sorted(cnt.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]
        if role != "OH":
            continue
        share = back[pl] / total[pl]
        if share >= back_only:
            out[pl] = "ds"
        elif 1.0 - share >= front_only:
            out[pl] = "front_only_oh"
        else:
            out[pl] = "all_around_oh"
    return out


def ds_substitution_report(entries: Sequence[PointsGainedEntry], points: Sequence,
                           min_receptions: int = 30, adjusted: bool = True) -> DSReport:
    classes = classify_outside_hitters(points)
    values = defaultdict(list)
    for e in entries:
        if e.role != "Receiver":
            continue
        c = classes.get(e.player)
        if c is not None:
            values[c].append(e.adjusted_pg if adjusted else e.raw_pg)
    stats = {}
    for c in ("all_around_oh", "front_only_oh", "ds"):
        v = np.asarray(values.get(c, []), dtype=float)
        stats[c] = {
            "n": int(v.size),
            "players": sum(1 for pl, cl in classes.items() if cl == c),
            "mean": float(v.mean()) if v.size else math.nan,
            "sd": float(v.std(ddof=1)) if v.size > 1 else math.nan,
        }
    for c in ("ds", "front_only_oh"):
        if stats[c]["n"] < min_receptions:
            raise InsufficientClassData(f"only {stats[c]['n']} receptions for class {c}", cls=c)
    ds, fo = stats["ds"], stats["front_only_oh"]
    delta = ds["mean"] - fo["mean"]
    se = math.sqrt(ds["sd"] ** 2 / ds["n"] + fo["sd"] ** 2 / fo["n"])
    # receptions the DS takes are the ones a front-only OH would otherwise take
    ds_teams = {e.team for e in entries if e.role == "Receiver" and classes.get(e.player) == "ds"}
    team_points = Counter()
    for p in points:
        for t in (p.serving_team, p.receiving_team):
            if t in ds_teams:
                team_points[t] += 1
    n_points = sum(team_points.values())
    opp = ds["n"] / n_points if n_points else 0.0
    return DSReport(stats, delta, se, opp, delta * opp, classes)
