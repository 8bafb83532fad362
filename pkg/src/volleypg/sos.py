"""Serve/receive and attack-tree regressions for strength of schedule."""
from __future__ import annotations

import csv
import logging
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import mixed
from .codes import FRONT_POSITIONS, POSITION_ORDER, EvalCode, SkillType, zone_band
from .errors import (
    IncompleteLineup,
    MissingState,
    NoAlignment,
    NoSupport,
    UnknownModel,
    UnlabelableOutcome,
)
from .lineup import FRONT_SLOTS, resolve_defensive_positions
from .markov import (
    BLOCK_ERROR,
    CLEAN,
    DEFAULT_SUPPORT,
    ERROR,
    RETURN,
    THROUGH,
    AttackContext,
    BaselineTable,
    PwpTable,
)
from .states import SERVE_STATE, encode_state_sequence

log = logging.getLogger(__name__)

OBSERVED, INFERRED, BACKOFF = "Observed", "Inferred", "BackOff"
MIN_KEY_SUPPORT = 25

# factor names used in every fit
SERVE_FACTORS = ("srv_conf", "srv_team", "server", "rcv_conf", "rcv_team", "receiver")
SERVER_SIDE = ("srv_conf", "srv_team", "server")
RECEIVER_SIDE = ("rcv_conf", "rcv_team", "receiver")
OFFENSE = ("att_conf", "att_team", "attacker", "setter")
DEFENSE = ("def_conf", "def_team", "blocker")
ATTACK_FACTORS = {
    1: OFFENSE,
    2: OFFENSE + DEFENSE,
    3: OFFENSE + DEFENSE,
    4: OFFENSE + DEFENSE,
    5: OFFENSE + DEFENSE,
    6: OFFENSE + DEFENSE + ("digger",),
    7: OFFENSE + DEFENSE + ("digger",),
}
# which categories reach each component
REACHES = {
    1: frozenset({ERROR, CLEAN, BLOCK_ERROR, THROUGH, RETURN}),
    2: frozenset({CLEAN, BLOCK_ERROR, THROUGH, RETURN}),
    3: frozenset({BLOCK_ERROR, THROUGH, RETURN}),
    4: frozenset({THROUGH, RETURN}),
    5: frozenset({RETURN}),
    6: frozenset({THROUGH}),
    7: frozenset({CLEAN}),
}
# indicator splits: (parent node, child node when the indicator is 1, child when 0)
SPLITS = {
    1: ("root", "error", "no_error"),
    2: ("no_error", "clean", "touch"),
    3: ("touch", "block_error", "no_block_error"),
    4: ("no_block_error", "through", "return"),
}
LEAVES = {5: "return", 6: "through", 7: "clean"}


# --- serve / receive -----------------------------------------------------------

@dataclass
class ServeObservation:
    point: tuple
    server: str
    srv_team: str
    srv_conf: str
    receiver: str
    rcv_team: str
    rcv_conf: str
    pre: object
    post: object
    y: float

    def levels(self) -> dict:
        return {"srv_conf": self.srv_conf, "srv_team": self.srv_team, "server": self.server,
                "rcv_conf": self.rcv_conf, "rcv_team": self.rcv_team, "receiver": self.receiver}


def build_serve_dataset(points: Sequence, pwp: PwpTable) -> tuple[list, Counter]:
    """One observation per non-error serve that has a charted reception."""
    out = []
    skipped = Counter()
    v_pre = pwp.v(SERVE_STATE)
    for p in points:
        serve = p.contacts[0]
        if serve.evaluation is EvalCode.ERROR:
            skipped["service_error"] += 1
            continue
        if len(p.contacts) < 2 or p.contacts[1].skill is not SkillType.RECEPTION:
            skipped["no_reception"] += 1
            continue
        rec = p.contacts[1]
        post = encode_state_sequence(p)[1]
        try:
            v_post = pwp.v(post)
        except MissingState:
            raise
        out.append(ServeObservation(
            p.key, serve.player, serve.team, p.conferences.get(serve.team, serve.conference),
            rec.player, rec.team, p.conferences.get(rec.team, rec.conference),
            SERVE_STATE, post, -(v_post - v_pre),
        ))
    return out, skipped


def fit_serve_model(observations: Sequence[ServeObservation], **opts) -> mixed.MixedFit:
    y = np.array([o.y for o in observations], dtype=float)
    cols = {f: [getattr(o, f) for o in observations] for f in SERVE_FACTORS}
    return mixed.fit(y, cols, **opts)


# --- attack outcomes -------------------------------------------------------------

@dataclass(frozen=True)
class AttackLabel:
    category: str
    block_index: int | None = None
    after_index: int | None = None

    @property
    def x(self) -> dict:
        """Observed split indicators; a split the attack never reaches is absent."""
        c = self.category
        out = {1: int(c == ERROR)}
        if c != ERROR:
            out[2] = int(c == CLEAN)
        if c in (BLOCK_ERROR, THROUGH, RETURN):
            out[3] = int(c == BLOCK_ERROR)
        if c in (THROUGH, RETURN):
            out[4] = int(c == THROUGH)
        return out


def label_attack_outcome(contacts: Sequence, i: int, winner: str | None = None) -> AttackLabel | None:
    """Place the attack at ``contacts[i]`` in the outcome tree.

    Returns None when nothing follows an attack that carries neither an
    error nor a kill code (a charting gap).
    """
    a = contacts[i]
    rest = contacts[i + 1:]
    team = a.team
    if a.evaluation is EvalCode.ERROR:
        if rest:
            raise UnlabelableOutcome("contacts follow an attack error", point=list(a.point_key))
        return AttackLabel(ERROR)
    if not rest:
        return AttackLabel(CLEAN) if a.evaluation is EvalCode.PERFECT else None
    nxt = rest[0]
    if nxt.team == team:
        raise UnlabelableOutcome("attacking side plays the ball again without a block touch",
                                 point=list(a.point_key))
    if nxt.skill is not SkillType.BLOCK:
        return AttackLabel(CLEAN, None, i + 1)
    if nxt.evaluation is EvalCode.ERROR:
        if len(rest) > 1:
            raise UnlabelableOutcome("contacts follow a block error", point=list(a.point_key))
        return AttackLabel(BLOCK_ERROR, i + 1)
    if len(rest) > 1:
        after = rest[1]
        return AttackLabel(RETURN if after.team == team else THROUGH, i + 1, i + 2)
    if nxt.evaluation is EvalCode.PERFECT:
        return AttackLabel(RETURN, i + 1)
    # ball died after the block touch: it fell on the side that lost the point
    return AttackLabel(RETURN if winner is not None and winner != team else THROUGH, i + 1)


@dataclass
class AttackObservation:
    point: tuple
    contact_index: int
    attacker: str
    setter: str
    att_team: str
    att_conf: str
    def_team: str
    def_conf: str
    attack_code: str
    end_zone: int | None
    attacker_family: str
    pre: object
    post: object
    w_post: float
    label: AttackLabel
    block_player: str | None = None
    dig_player: str | None = None
    alignment: dict | None = None
    blocker: str | None = None
    blocker_provenance: str | None = None
    digger: str | None = None
    digger_provenance: str | None = None
    y: dict = field(default_factory=dict)
    y_level: dict = field(default_factory=dict)

    @property
    def category(self) -> str:
        return self.label.category

    def context(self) -> AttackContext:
        return AttackContext(self.pre, self.category, self.w_post)

    def levels(self) -> dict:
        return {"att_conf": self.att_conf, "att_team": self.att_team, "attacker": self.attacker,
                "setter": self.setter, "def_conf": self.def_conf, "def_team": self.def_team,
                "blocker": self.blocker, "digger": self.digger}


def _setter_for(point, contacts, i) -> str:
    prev = contacts[i - 1] if i > 0 else None
    if prev is not None and prev.team == contacts[i].team and prev.skill is SkillType.SET:
        return prev.player
    lu = point.lineups.get(contacts[i].team)
    if lu is not None and lu.slots[lu.setter_slot - 1]:
        # no set contact (second-ball attack): credit the designated setter
        return lu.slots[lu.setter_slot - 1]
    return f"{contacts[i].team}/no-set"


def _family(point, attacker, team) -> str:
    lu = point.lineups.get(team)
    if lu is None:
        return "unknown"
    slot = lu.slot_of(attacker)
    if slot is None:
        return "unknown"
    return lu.role(slot) + ("-front" if slot in FRONT_SLOTS else "-back")


def _alignment(point, team):
    lu = point.lineups.get(team)
    if lu is None:
        return None
    try:
        return resolve_defensive_positions(lu, point.liberos.get(team))
    except IncompleteLineup:
        return None


def _point_attacks(point, pwp: PwpTable):
    obs, issues = [], Counter()
    contacts = point.contacts
    states = None
    for i, c in enumerate(contacts):
        if c.skill is not SkillType.ATTACK:
            continue
        if states is None:
            states = encode_state_sequence(point)
        try:
            label = label_attack_outcome(contacts, i, point.winner)
        except UnlabelableOutcome:
            issues["unlabelable"] += 1
            continue
        if label is None:
            issues["charting_gap"] += 1
            continue
        post_idx = label.after_index if label.after_index is not None else len(contacts)
        post = states[post_idx]
        side = point.side_of(c.team)
        opp = point.opponent(c.team)
        block_player = contacts[label.block_index].player if label.block_index is not None else None
        dig_player = None
        if label.category in (CLEAN, THROUGH) and label.after_index is not None:
            d = contacts[label.after_index]
            if d.skill is SkillType.DIG and d.team == opp:
                dig_player = d.player
        obs.append(AttackObservation(
            point.key, i, c.player, _setter_for(point, contacts, i), c.team,
            point.conferences.get(c.team, c.conference), opp, point.conferences.get(opp, ""),
            c.attack_code, c.end_zone, _family(point, c.player, c.team),
            states[i], post, pwp.win_prob(post, side), label,
            block_player, dig_player, _alignment(point, opp),
        ))
    return obs, issues


def build_attack_dataset(points: Sequence, pwp: PwpTable, threads: int = 1) -> tuple[list, Counter]:
    """Attack observations in point order; dataset construction is parallel by match."""
    by_match = defaultdict(list)
    for p in points:
        by_match[p.match_id].append(p)

    def work(pts):
        out, iss = [], Counter()
        for p in pts:
            o, i = _point_attacks(p, pwp)
            out.extend(o)
            iss.update(i)
        return out, iss

    groups = list(by_match.values())
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, groups))
    else:
        results = [work(g) for g in groups]
    obs, issues = [], Counter()
    for o, i in results:
        obs.extend(o)
        issues.update(i)
    return obs, issues


# --- responsibility -----------------------------------------------------------------

@dataclass
class Resolution:
    position: str
    key: tuple
    count: int
    frequency: float
    tie: bool
    provenance: str


class ResponsibilityTable:
    """Modal defensive position per key, with a chain of coarser keys for sparse data."""

    def __init__(self, kind: str, positions: Sequence[str], min_support: int = MIN_KEY_SUPPORT):
        self.kind = kind
        self.positions = tuple(positions)
        self.min_support = min_support
        self.counts: dict[tuple, Counter] = defaultdict(Counter)
        self.ties: list = []

    def add(self, keys: Sequence[tuple], position: str) -> None:
        if position not in self.positions:
            return
        for k in keys:
            self.counts[k][position] += 1

    def modal(self, key: tuple):
        cnt = self.counts.get(key)
        if not cnt:
            return None
        total = sum(cnt.values())
        best = max(cnt.values())
        winners = sorted((p for p, c in cnt.items() if c == best), key=POSITION_ORDER.__getitem__)
        return winners[0], total, best / total, len(winners) > 1

    def resolve(self, keys: Sequence[tuple]) -> Resolution | None:
        """Walk the key chain from finest to coarsest; the first key with enough
        support wins, otherwise the coarsest key with any data."""
        last = None
        for depth, k in enumerate(keys):
            m = self.modal(k)
            if m is None:
                continue
            pos, total, freq, tie = m
            prov = INFERRED if depth == 0 else BACKOFF
            res = Resolution(pos, k, total, freq, tie, prov)
            if total >= self.min_support:
                return res
            last = res
        if last is not None:
            last.provenance = BACKOFF
        return last

    def rows(self):
        for k in sorted(self.counts, key=lambda t: tuple(map(str, t))):
            pos, total, freq, tie = self.modal(k)
            yield {"key": "|".join(map(str, k)), "position": pos, "count": total,
                   "frequency": round(freq, 6), "tie": tie,
                   "counts": " ".join(f"{p}:{self.counts[k][p]}" for p in self.positions if self.counts[k][p])}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, ["key", "position", "count", "frequency", "tie", "counts"],
                               lineterminator="\n")
            w.writeheader()
            for r in self.rows():
                w.writerow(r)


def blocker_keys(obs: AttackObservation) -> tuple:
    return (("code", obs.attack_code), ("family", obs.attacker_family), ("all",))


def digger_keys(obs: AttackObservation) -> tuple:
    return (("code", obs.attack_code, obs.end_zone), ("code", obs.attack_code, zone_band(obs.end_zone)),
            ("code", obs.attack_code), ("all",))


def _position_of(alignment: dict | None, player: str | None):
    if alignment is None or player is None:
        return None
    for pos, p in alignment.items():
        if p == player:
            return pos
    return None


@dataclass
class ResponsibilityTables:
    blocker: ResponsibilityTable
    digger: ResponsibilityTable


def build_responsibility_tables(observations: Iterable[AttackObservation],
                                min_support: int = MIN_KEY_SUPPORT) -> ResponsibilityTables:
    bt = ResponsibilityTable("blocker", FRONT_POSITIONS, min_support)
    dt = ResponsibilityTable("digger", tuple(POSITION_ORDER), min_support)
    for o in observations:
        pos = _position_of(o.alignment, o.block_player)
        if pos is not None:
            bt.add(blocker_keys(o), pos)
        pos = _position_of(o.alignment, o.dig_player)
        if pos is not None:
            dt.add(digger_keys(o), pos)
    for table in (bt, dt):
        for k in sorted(table.counts, key=lambda t: tuple(map(str, t))):
            if table.modal(k)[3]:
                table.ties.append(k)
                log.info("%s responsibility tie at %s broken by position order", table.kind, k)
    return ResponsibilityTables(bt, dt)


def assign_blocker(obs: AttackObservation, tables: ResponsibilityTables) -> tuple[str, str]:
    if obs.block_player is not None:
        return obs.block_player, OBSERVED
    if obs.alignment is None:
        raise NoAlignment("no defensive alignment for the defending team", point=list(obs.point))
    res = tables.blocker.resolve(blocker_keys(obs))
    if res is None:
        raise NoAlignment("no block touches observed to infer responsibility", point=list(obs.point))
    return obs.alignment[res.position], res.provenance


def assign_digger(obs: AttackObservation, tables: ResponsibilityTables) -> tuple[str, str]:
    if obs.dig_player is not None:
        return obs.dig_player, OBSERVED
    if obs.alignment is None:
        raise NoAlignment("no defensive alignment for the defending team", point=list(obs.point))
    res = tables.digger.resolve(digger_keys(obs))
    if res is None:
        raise NoAlignment("no dig touches observed to infer responsibility", point=list(obs.point))
    return obs.alignment[res.position], res.provenance


def assign_responsibility(observations: Iterable[AttackObservation], tables: ResponsibilityTables) -> Counter:
    """Fill blocker/digger where the model needs them; returns counts of failures."""
    missing = Counter()
    for o in observations:
        if o.category != ERROR:
            try:
                o.blocker, o.blocker_provenance = assign_blocker(o, tables)
            except NoAlignment:
                missing["blocker"] += 1
        if o.category in (CLEAN, THROUGH):
            try:
                o.digger, o.digger_provenance = assign_digger(o, tables)
            except NoAlignment:
                missing["digger"] += 1
    return missing


# --- split responses -------------------------------------------------------------------

@dataclass
class SplitBaselines:
    tables: dict
    support: int

    @classmethod
    def build(cls, contexts: Sequence[AttackContext], support: int = DEFAULT_SUPPORT) -> "SplitBaselines":
        nodes = {"root", "error", "no_error", "clean", "touch", "block_error", "no_block_error",
                 "through", "return"}
        return cls({n: BaselineTable(n, contexts, support) for n in sorted(nodes)}, support)


def compute_split_responses(observations: Sequence[AttackObservation], baselines: SplitBaselines) -> None:
    """Fill ``obs.y[k]`` for every split the attack reaches.

    Indicator splits compare the child-node mean with the parent-node mean,
    both taken at the back-off level chosen by the parent's support, so the
    responses of one pre-state cell average to zero.
    """
    t = baselines.tables
    for o in observations:
        o.y = {}
        o.y_level = {}
        cat = o.category
        for k, (parent, child1, child0) in SPLITS.items():
            if cat not in REACHES[k]:
                continue
            level = t[parent].level_for(o.pre)
            child = child1 if o.label.x[k] else child0
            n_child, m_child = t[child].cell(o.pre, level)
            if n_child == 0:
                raise NoSupport(f"empty node {child!r} for {o.pre}", state=str(o.pre))
            o.y[k] = m_child - t[parent].cell(o.pre, level)[1]
            o.y_level[k] = level
        for k, node in LEAVES.items():
            if cat in REACHES[k]:
                level = t[node].level_for(o.pre)
                o.y[k] = o.w_post - t[node].cell(o.pre, level)[1]
                o.y_level[k] = level


# --- model fits ------------------------------------------------------------------------

@dataclass
class AttackFits:
    fits: dict
    rows: dict
    excluded: dict


def model_rows(observations: Sequence[AttackObservation], k: int) -> list:
    needs = ATTACK_FACTORS[k]
    out = []
    for o in observations:
        if k not in o.y:
            continue
        if "blocker" in needs and o.blocker is None:
            continue
        if "digger" in needs and o.digger is None:
            continue
        out.append(o)
    return out


def fit_attack_models(observations: Sequence[AttackObservation], **opts) -> AttackFits:
    fits, rows, excluded = {}, {}, {}
    for k, factors in ATTACK_FACTORS.items():
        sel = model_rows(observations, k)
        reached = sum(1 for o in observations if k in o.y)
        rows[k] = len(sel)
        excluded[k] = reached - len(sel)
        y = np.array([o.y[k] for o in sel], dtype=float)
        cols = {f: [o.levels()[f] for o in sel] for f in factors}
        fits[k] = mixed.fit(y, cols, **opts)
        log.info("attack model %d: %d rows, components %s", k, len(sel), fits[k].components)
    return AttackFits(fits, rows, excluded)


def player_sos(obs, fits: dict, model, role: str, include_intercept: bool = False) -> float:
    """Sum of the opponents' predicted effects in ``model`` as faced by ``role``.

    ``model`` is "SV" for serve/receive or 1..7 for the attack components.
    """
    if model == "SV":
        fit = fits.get("SV")
        if fit is None:
            raise UnknownModel("serve model not fitted", model="SV")
        if role == "Server":
            side = RECEIVER_SIDE
        elif role == "Receiver":
            side = SERVER_SIDE
        else:
            raise UnknownModel(f"role {role!r} has no serve-model schedule", model="SV")
    else:
        fit = fits.get(model)
        if fit is None or model not in ATTACK_FACTORS:
            raise UnknownModel(f"no attack model {model!r}", model=str(model))
        if role in ("Attacker", "Setter"):
            side = tuple(f for f in ATTACK_FACTORS[model] if f not in OFFENSE)
        elif role in ("Blocker", "Digger"):
            side = OFFENSE
        else:
            raise UnknownModel(f"role {role!r} not in attack models", model=str(model))
    return mixed.predict_linear(fit, obs.levels(), side, include_intercept)
