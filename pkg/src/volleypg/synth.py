"""Synthetic seasons with known ground truth, and brute-force oracles.

Rallies are generated by a Markov machine over the same state keys the
analysis uses. Player, team and conference effects enter as tilts on the
log-odds of outcome categories; with all variances at zero the machine is
exactly Markov on the state keys and its kernel can be enumerated.
"""
from __future__ import annotations

import json
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .codes import EvalCode, SkillType
from .errors import InvalidConfig
from .ingest import (
    ContactRecord,
    ParseResult,
    PointHeader,
    Schema,
    assemble_points,
    write_contact_file,
    write_lineup_file,
)
from .lineup import FRONT_SLOTS, LineupState, resolve_defensive_positions
from .states import (
    RECEIVER_WINS,
    SERVE_STATE,
    SERVER_WINS,
    PointStateKey,
)

# roster order; indices 0..5 follow the service rotation relative to the setter
ROSTER_ROLES = ("S", "OH", "MB", "OPP", "OH", "MB", "L", "DS")
OH2, LIBERO, DS = 4, 6, 7

DEFAULT_VARIANCES = {
    "serve": 0.35 ** 2,
    "receive": 0.30 ** 2,
    "attack": 0.45 ** 2,
    "set": 0.15 ** 2,
    "block": 0.30 ** 2,
    "dig": 0.30 ** 2,
    "team": 0.10 ** 2,
    "conference": 0.06 ** 2,
}

# --- base outcome tables -----------------------------------------------------------

SERVE_ERROR = 0.09
RECEPTION_CODES = ("#", "+", "!", "-", "/", "=")
RECEPTION_BASE = np.array([0.21, 0.26, 0.18, 0.15, 0.04, 0.07]) * (1 - SERVE_ERROR)
RECEPTION_SCORE = np.array([2.0, 1.0, 0.0, -1.0, -1.5, -3.0])

SET_CODES = ("#", "+", "-", "=")
# by quality of the first touch: '#', '+', '!', '-', '/'
SET_BASE = {
    "#": (0.75, 0.18, 0.06, 0.01),
    "+": (0.60, 0.27, 0.12, 0.01),
    "!": (0.40, 0.35, 0.23, 0.02),
    "-": (0.20, 0.35, 0.42, 0.03),
    "/": (0.10, 0.30, 0.55, 0.05),
}
ATTACK_CODES = ("X1", "X5", "X6")
CODE_BASE = {"#": (0.35, 0.40, 0.25), "+": (0.20, 0.50, 0.30), "-": (0.05, 0.70, 0.25)}
CODE_ROLE = {"X1": "MB", "X5": "OH", "X6": "OPP"}

# categories: error, clean, block error, through, return
CATEGORY_BASE = {
    "#": (0.08, 0.55, 0.04, 0.15, 0.18),
    "+": (0.10, 0.48, 0.04, 0.16, 0.22),
    "-": (0.14, 0.40, 0.03, 0.16, 0.27),
}
CODE_MULT = {"X1": (1.0, 1.2, 1.0, 0.9, 0.8), "X5": (1.0,) * 5, "X6": (1.1, 1.0, 1.0, 1.0, 1.0)}
DIG_CODES = ("#", "+", "!", "-", "=")
# attacker-good scores of a dig by the defence
DIG_SCORE = (-2.0, -1.0, 0.0, 1.0, 2.0)
CLEAN_KILL = 0.42
CLEAN_DIG = (0.08, 0.20, 0.12, 0.10, 0.08)
THROUGH_DROP = 0.35
THROUGH_DIG = (0.10, 0.22, 0.15, 0.12, 0.06)
STUFF_SHARE = 0.35
COVER_DIG = (0.15, 0.30, 0.20, 0.25, 0.10)

# block position touched by attack code, FL/FM/FR
BLOCK_POS = {"X1": (0.15, 0.70, 0.15), "X5": (0.10, 0.30, 0.60), "X6": (0.60, 0.30, 0.10)}
END_ZONES = {
    "X1": ((3, 6, 8, 1, 5), (0.15, 0.35, 0.25, 0.125, 0.125)),
    "X5": ((1, 6, 9, 5, 2), (0.30, 0.25, 0.20, 0.15, 0.10)),
    "X6": ((5, 6, 7, 1, 4), (0.30, 0.25, 0.20, 0.15, 0.10)),
}
ZONE_POS = {1: "BR", 2: "FR", 3: "FM", 4: "FL", 5: "BL", 6: "BM", 7: "BL", 8: "BM", 9: "BR"}
PRIMARY_DIGGER = 0.75
BACK_POS = ("BL", "BM", "BR")


@dataclass
class SyntheticConfig:
    n_conferences: int = 4
    teams_per_conference: int = 8
    players_per_team: int = 10
    n_matches: int = 600
    seed: int = 0
    variances: dict = field(default_factory=lambda: dict(DEFAULT_VARIANCES))
    effect_scale: float = 1.0
    conference_match_share: float = 0.6
    ds_team_share: float = 0.63
    # log-odds shift of DS reception quality over a front-only outside hitter
    ds_gap: float = 0.0
    alt_set_prob: float = 0.25
    max_points: int | None = None

    def validate(self) -> None:
        if self.n_conferences < 2 or self.teams_per_conference < 2:
            raise InvalidConfig("need at least two conferences and two teams per conference")
        if self.players_per_team < len(ROSTER_ROLES):
            raise InvalidConfig(f"players_per_team must be at least {len(ROSTER_ROLES)}")
        if self.n_matches < 1:
            raise InvalidConfig("need at least one match")
        unknown = set(self.variances) - set(DEFAULT_VARIANCES)
        if unknown:
            raise InvalidConfig(f"unknown variance keys: {sorted(unknown)}")
        if any(v < 0 for v in self.variances.values()):
            raise InvalidConfig("variances must be non-negative")
        for name in ("conference_match_share", "ds_team_share", "alt_set_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidConfig(f"{name} must lie in [0, 1]")
        if self.max_points is not None and self.max_points < 1:
            raise InvalidConfig("max_points must be positive")

    @classmethod
    def from_json(cls, d: dict) -> "SyntheticConfig":
        d = dict(d)
        var = dict(DEFAULT_VARIANCES)
        var.update(d.pop("variances", {}))
        try:
            cfg = cls(variances=var, **d)
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from None
        cfg.validate()
        return cfg

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class GroundTruthParams:
    config: SyntheticConfig
    conferences: list
    team_conference: dict
    rosters: dict            # team -> list of player ids in ROSTER_ROLES order (+ bench)
    ds_teams: list
    player_effects: dict     # kind -> player -> value
    team_effects: dict       # side -> team -> value
    conference_effects: dict  # side -> conference -> value

    def strength(self, kind: str, player: str) -> float:
        """Conference + team + player effect for one skill, on the tilt scale."""
        side = {"serve": "serve", "receive": "receive", "attack": "attack", "set": "attack",
                "block": "defense", "dig": "defense"}[kind]
        team = self.player_team[player]
        return (self.conference_effects[side][self.team_conference[team]]
                + self.team_effects[side][team] + self.player_effects[kind].get(player, 0.0))

    def __post_init__(self):
        self.player_team = {p: t for t, ps in self.rosters.items() for p in ps}

    def to_json(self) -> dict:
        return {
            "config": self.config.to_json(),
            "conferences": self.conferences,
            "team_conference": self.team_conference,
            "rosters": self.rosters,
            "ds_teams": self.ds_teams,
            "player_effects": self.player_effects,
            "team_effects": self.team_effects,
            "conference_effects": self.conference_effects,
        }


def draw_league(config: SyntheticConfig) -> GroundTruthParams:
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xA11CE]))
    var = config.variances
    confs = [f"C{c + 1}" for c in range(config.n_conferences)]
    team_conf, rosters = {}, {}
    for c, conf in enumerate(confs):
        for t in range(config.teams_per_conference):
            team = f"T{c + 1}{t + 1:02d}"
            team_conf[team] = conf
            rosters[team] = [f"{team}-P{k + 1:02d}" for k in range(config.players_per_team)]
    teams = sorted(team_conf)
    ds_flags = rng.random(len(teams)) < config.ds_team_share
    ds_teams = [t for t, f in zip(teams, ds_flags) if f]

    def draw(names, v):
        sd = math.sqrt(v)
        vals = rng.normal(0.0, 1.0, len(names)) * sd
        return {n: float(x) for n, x in zip(names, vals)}

    players = [p for t in teams for p in rosters[t]]
    player_effects = {k: draw(players, var[k]) for k in ("serve", "receive", "attack", "set", "block", "dig")}
    for t in ds_teams:
        player_effects["receive"][rosters[t][DS]] += config.ds_gap
    team_effects = {s: draw(teams, var["team"]) for s in ("serve", "receive", "attack", "defense")}
    conf_effects = {s: draw(confs, var["conference"]) for s in ("serve", "receive", "attack", "defense")}
    return GroundTruthParams(config, confs, team_conf, rosters, ds_teams, player_effects, team_effects,
                             conf_effects)


def schedule(truth: GroundTruthParams) -> list[tuple[str, str]]:
    cfg = truth.config
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5CED]))
    teams = sorted(truth.team_conference)
    by_conf = defaultdict(list)
    for t in teams:
        by_conf[truth.team_conference[t]].append(t)
    out = []
    for _ in range(cfg.n_matches):
        a = teams[rng.integers(len(teams))]
        same = rng.random() < cfg.conference_match_share
        pool = [t for t in (by_conf[truth.team_conference[a]] if same else teams)
                if t != a and (same or truth.team_conference[t] != truth.team_conference[a])]
        b = pool[rng.integers(len(pool))]
        out.append((a, b))
    return out


# --- rally machine --------------------------------------------------------------------

def _pick(u: float, probs) -> int:
    acc = 0.0
    for i, p in enumerate(probs):
        acc += p
        if u < acc:
            return i
    return len(probs) - 1


def _tilted(base, scores, tilt: float):
    base = np.asarray(base, dtype=float)
    if tilt == 0.0:
        return base / base.sum()
    w = base * np.exp(tilt * np.asarray(scores, dtype=float))
    return w / w.sum()


def _quality(token: str) -> str:
    return token[-1]


def _other(side: str) -> str:
    return "R" if side == "S" else "S"


def _terminal(winner_side: str) -> PointStateKey:
    return SERVER_WINS if winner_side == "S" else RECEIVER_WINS


@dataclass
class Outcome:
    prob: float
    state: PointStateKey
    skill: SkillType | None = None
    code: str | None = None        # evaluation symbol of the new contact
    actor: str | None = None
    attack_code: str | None = None
    attack_eval: str | None = None  # retroactive evaluation of the preceding attack
    category: str | None = None


def attack_outcomes(state: PointStateKey, code: str, o_minus_b: float = 0.0, o_minus_d: float = 0.0,
                    kappa: float = 1.0) -> list[Outcome]:
    side = state.side
    other = _other(side)
    set_eval = _quality(state.touches[-2]) if len(state.touches) >= 2 else "-"
    cat = np.array(CATEGORY_BASE.get(set_eval, CATEGORY_BASE["-"])) * np.array(CODE_MULT[code])
    cat = cat / cat.sum()
    e, c, be, th, rt = cat
    base, cat_score, dig_score, outs = [], [], [], []
    base.append(e); cat_score.append(-2.0); dig_score.append(0.0)
    outs.append(Outcome(0, _terminal(other), attack_eval="=", category="error"))
    base.append(c * CLEAN_KILL); cat_score.append(1.0); dig_score.append(2.0)
    outs.append(Outcome(0, _terminal(side), attack_eval="#", category="clean"))
    for d, pd, sc in zip(DIG_CODES, CLEAN_DIG, DIG_SCORE):
        base.append(c * pd); cat_score.append(1.0); dig_score.append(sc)
        outs.append(Outcome(0, PointStateKey(other, ("D" + d,)), SkillType.DIG, d, "digger",
                            attack_eval="#" if d == "=" else "+", category="clean"))
    base.append(be); cat_score.append(2.0); dig_score.append(0.0)
    outs.append(Outcome(0, PointStateKey(other, ("B=",)), SkillType.BLOCK, "=", "blocker",
                        attack_eval="+", category="block_error"))
    base.append(th); cat_score.append(0.5); dig_score.append(0.0)
    outs.append(Outcome(0, PointStateKey(other, ("B-",)), SkillType.BLOCK, "-", "blocker",
                        attack_eval="+", category="through"))
    base.append(rt * STUFF_SHARE); cat_score.append(-2.0); dig_score.append(0.0)
    outs.append(Outcome(0, PointStateKey(other, ("B#",)), SkillType.BLOCK, "#", "blocker",
                        attack_eval="-", category="return"))
    base.append(rt * (1 - STUFF_SHARE)); cat_score.append(-1.0); dig_score.append(0.0)
    outs.append(Outcome(0, PointStateKey(other, ("B+",)), SkillType.BLOCK, "+", "blocker",
                        attack_eval="-", category="return"))
    base = np.asarray(base)
    if o_minus_b == 0.0 and o_minus_d == 0.0:
        probs = base / base.sum()
    else:
        w = base * np.exp(kappa * (o_minus_b * np.asarray(cat_score) + o_minus_d * np.asarray(dig_score)))
        probs = w / w.sum()
    for o, p in zip(outs, probs):
        o.prob = float(p)
    return outs


def outcomes(state: PointStateKey, tilt: float = 0.0, kappa: float = 1.0, o_minus_d: float = 0.0,
             attack_tilts=(0.0, 0.0)) -> list[Outcome]:
    """All transitions out of ``state`` with their probabilities.

    ``tilt`` is the serve strength for (S, SV); ``attack_tilts`` are the
    offence-minus-block and offence-minus-dig strengths at an attack state;
    ``o_minus_d`` applies to digs after a block-through.
    """
    if state.terminal:
        return [Outcome(1.0, state)]
    side = state.side
    other = _other(side)
    last = state.touches[-1]
    if state == SERVE_STATE:
        probs = _tilted(np.append(RECEPTION_BASE, SERVE_ERROR), np.append(-RECEPTION_SCORE, 0.0), kappa * tilt)
        out = [Outcome(float(p), PointStateKey("R", ("R" + r,)), SkillType.RECEPTION, r, "receiver")
               for r, p in zip(RECEPTION_CODES, probs[:-1])]
        out.append(Outcome(float(probs[-1]), RECEIVER_WINS))
        return out
    if last.endswith("="):
        # an error ends the rally: the side that erred loses
        return [Outcome(1.0, _terminal(other))]
    if last.startswith("A"):
        return attack_outcomes(state, last[1:], *attack_tilts, kappa=kappa)
    if last == "B#":
        return [Outcome(1.0, _terminal(side))]
    if last == "B-":
        probs = _tilted((THROUGH_DROP,) + THROUGH_DIG, (2.0,) + DIG_SCORE, kappa * o_minus_d)
        out = [Outcome(float(probs[0]), _terminal(other), attack_eval="#")]
        for d, p in zip(DIG_CODES, probs[1:]):
            out.append(Outcome(float(p), PointStateKey(side, state.touches + ("D" + d,)), SkillType.DIG, d,
                               "digger"))
        return out
    if last == "B+":
        probs = _tilted(COVER_DIG, (0.0,) * 5, 0.0)
        return [Outcome(float(p), PointStateKey(other, ("D" + d,)), SkillType.DIG, d, "cover")
                for d, p in zip(DIG_CODES, probs)]
    if last[0] in "RD":
        base = SET_BASE[_quality(last)]
        probs = _tilted(base, (0.0,) * 4, 0.0)
        return [Outcome(float(p), PointStateKey(side, state.touches + ("S" + e,)), SkillType.SET, e, "setter")
                for e, p in zip(SET_CODES, probs)]
    if last[0] == "S":
        probs = _tilted(CODE_BASE[_quality(last)], (0.0,) * 3, 0.0)
        return [Outcome(float(p), PointStateKey(side, state.touches + ("A" + c,)), SkillType.ATTACK, "+",
                        "attacker", attack_code=c)
                for c, p in zip(ATTACK_CODES, probs)]
    raise ValueError(f"state outside the generator grammar: {state}")


# --- true kernel and Monte Carlo oracle --------------------------------------------------------

@dataclass
class Kernel:
    states: list
    indptr: np.ndarray
    indices: np.ndarray
    probs: np.ndarray
    cum: np.ndarray

    def __post_init__(self):
        self.index = {s: i for i, s in enumerate(self.states)}

    @classmethod
    def from_csr(cls, states, P) -> "Kernel":
        """Kernel over a fitted transition matrix, e.g. ``TransitionModel.P1``."""
        P = P.tocsr()
        P.sort_indices()
        probs = np.asarray(P.data, dtype=float)
        indptr = np.asarray(P.indptr, dtype=np.int64)
        cum = np.empty_like(probs)
        for a, b in zip(indptr[:-1], indptr[1:]):
            cum[a:b] = np.cumsum(probs[a:b])
        return cls(list(states), indptr, np.asarray(P.indices, dtype=np.int64), probs, cum)

    def dense(self) -> np.ndarray:
        n = len(self.states)
        P = np.zeros((n, n))
        for i in range(n):
            for k in range(self.indptr[i], self.indptr[i + 1]):
                P[i, self.indices[k]] += self.probs[k]
        return P

    def exact_v(self) -> dict:
        """Absorption probability into (R, W) by a direct linear solve."""
        P = self.dense()
        n = len(self.states)
        rw, sw = self.index[RECEIVER_WINS], self.index[SERVER_WINS]
        nt = [i for i in range(n) if i not in (rw, sw)]
        Q = P[np.ix_(nt, nt)]
        b = P[nt, rw]
        x = np.linalg.solve(np.eye(len(nt)) - Q, b)
        out = {self.states[i]: float(v) for i, v in zip(nt, x)}
        out[RECEIVER_WINS] = 1.0
        out[SERVER_WINS] = 0.0
        return out


def base_kernel() -> Kernel:
    """Effect-free transition kernel of the generator, over reachable states."""
    seen = {SERVE_STATE}
    order = [SERVE_STATE]
    rows = {}
    i = 0
    while i < len(order):
        s = order[i]
        i += 1
        agg = defaultdict(float)
        for o in outcomes(s):
            agg[o.state] += o.prob
        rows[s] = agg
        for t in agg:
            if t not in seen:
                seen.add(t)
                order.append(t)
    states = sorted(order)
    index = {s: k for k, s in enumerate(states)}
    indptr, indices, probs = [0], [], []
    for s in states:
        row = sorted(rows[s].items(), key=lambda kv: index[kv[0]])
        for t, p in row:
            indices.append(index[t])
            probs.append(p)
        indptr.append(len(indices))
    probs = np.asarray(probs)
    cum = np.empty_like(probs)
    for a, b in zip(indptr[:-1], indptr[1:]):
        cum[a:b] = np.cumsum(probs[a:b])
    return Kernel(states, np.asarray(indptr, dtype=np.int64), np.asarray(indices, dtype=np.int64), probs, cum)


@dataclass
class MCEstimate:
    estimate: float
    se: float
    n_sim: int
    lost: int = 0


def mc_point_win_prob(kernel: Kernel, state: PointStateKey, n_sim: int, seed: int = 0,
                      max_steps: int = 10_000, chunk: int = 1 << 16) -> MCEstimate:
    """Fraction of rollouts from ``state`` that end at (R, W)."""
    if state == RECEIVER_WINS:
        return MCEstimate(1.0, 0.0, n_sim)
    if state == SERVER_WINS:
        return MCEstimate(0.0, 0.0, n_sim)
    start = kernel.index[state]
    rw, sw = kernel.index[RECEIVER_WINS], kernel.index[SERVER_WINS]
    st = np.zeros(7, dtype=np.int64)
    st[kernels.CUR] = start
    st[kernels.TARGET] = n_sim
    st[kernels.MAX_STEPS] = max_steps
    rng = np.random.default_rng(np.random.SeedSequence([seed, start]))
    while st[kernels.DONE] < n_sim:
        u = rng.random(chunk)
        kernels.mc_advance(kernel.indptr, kernel.indices, kernel.cum, start, rw, sw, u, st)
    p = st[kernels.HITS] / n_sim
    return MCEstimate(float(p), math.sqrt(p * (1 - p) / n_sim), n_sim, int(st[kernels.LOST]))


# --- season simulation ------------------------------------------------------------------------

class _Team:
    def __init__(self, name, truth: GroundTruthParams):
        self.name = name
        self.conf = truth.team_conference[name]
        self.roster = truth.rosters[name]
        self.ds = name in set(truth.ds_teams)
        self.setter_slot = 1

    def lineup(self, match_id, set_no, point_index) -> LineupState:
        slots = [""] * 6
        for i in range(6):
            slot = (self.setter_slot - 1 + i) % 6 + 1
            player = self.roster[i]
            if i == OH2 and self.ds and slot not in FRONT_SLOTS:
                player = self.roster[DS]
            slots[slot - 1] = player
        return LineupState(match_id, set_no, point_index, self.name, tuple(slots), self.setter_slot)

    def rotate(self):
        self.setter_slot = 6 if self.setter_slot == 1 else self.setter_slot - 1


class _Sim:
    def __init__(self, truth: GroundTruthParams, rng: np.random.Generator):
        self.truth = truth
        self.rng = rng
        self.kappa = truth.config.effect_scale
        self.alt_set = truth.config.alt_set_prob

    def u(self) -> float:
        return float(self.rng.random())

    def s(self, kind, player) -> float:
        return self.truth.strength(kind, player)

    def point(self, match_id, set_no, pidx, serving: _Team, receiving: _Team):
        lus = {serving.name: serving.lineup(match_id, set_no, pidx),
               receiving.name: receiving.lineup(match_id, set_no, pidx)}
        teams = {"S": serving, "R": receiving}
        align = {t.name: resolve_defensive_positions(lus[t.name], t.roster[LIBERO]) for t in (serving, receiving)}
        contacts = []
        poss = 0
        holder = None
        state = SERVE_STATE
        server = lus[serving.name].slots[0]
        contacts.append([server, serving, SkillType.SERVE, "-", None, None])
        poss = 1
        holder = "S"
        last_actor = server
        attack_idx = None
        o_str = 0.0
        winner_side = None
        while True:
            if state == SERVE_STATE:
                # receiver first: the tilt depends on who takes the serve
                rteam = receiving
                al = align[rteam.name]
                k = _pick(self.u(), (0.40, 0.33, 0.27))
                receiver = (al["BL"], al["BM"], al["FL"])[k]
                tilt = self.s("serve", server) - self.s("receive", receiver)
                outs = outcomes(state, tilt, self.kappa)
                o = outs[_pick(self.u(), [x.prob for x in outs])]
                if o.skill is None:
                    contacts[0][3] = "="
                    winner_side = "R"
                    break
                contacts[0][3] = "#" if o.code == "=" else ("+" if o.code in ("-", "/") else "-")
                contacts.append([receiver, rteam, SkillType.RECEPTION, o.code, None, None])
                poss = 2
                holder = "R"
                last_actor = receiver
                state = o.state
                continue
            last = state.touches[-1]
            if last.startswith("A"):
                code = last[1:]
                dteam = teams[_other(state.side)]
                al = align[dteam.name]
                bpos = ("FL", "FM", "FR")[_pick(self.u(), BLOCK_POS[code])]
                zones, zp = END_ZONES[code]
                zone = zones[_pick(self.u(), zp)]
                dpos = ZONE_POS[zone]
                if self.u() >= PRIMARY_DIGGER:
                    dpos = BACK_POS[_pick(self.u(), (1 / 3, 1 / 3, 1 / 3))]
                blocker, digger = al[bpos], al[dpos]
                attacker = contacts[attack_idx][0]
                o_str = self.s("attack", attacker) + self.truth.player_effects["set"].get(self._setter, 0.0)
                omb = o_str - self.s("block", blocker)
                omd = o_str - self.truth.player_effects["dig"].get(digger, 0.0)
                outs = outcomes(state, kappa=self.kappa, attack_tilts=(omb, omd))
                o = outs[_pick(self.u(), [x.prob for x in outs])]
                contacts[attack_idx][3] = o.attack_eval
                contacts[attack_idx][5] = zone
                self._digger = digger
                if o.skill is None:
                    winner_side = o.state.side
                    break
                actor = blocker if o.actor == "blocker" else digger
                contacts.append([actor, dteam, o.skill, o.code, None, None])
                poss += 1
                holder = o.state.side
                last_actor = actor
                state = o.state
                continue
            if last == "B-":
                digger = self._digger
                omd = o_str - self.truth.player_effects["dig"].get(digger, 0.0)
                outs = outcomes(state, kappa=self.kappa, o_minus_d=omd)
                o = outs[_pick(self.u(), [x.prob for x in outs])]
                if o.skill is None:
                    contacts[attack_idx][3] = "#"
                    winner_side = o.state.side
                    break
                contacts.append([digger, teams[state.side], SkillType.DIG, o.code, None, None])
                last_actor = digger
                state = o.state
                continue
            outs = outcomes(state, kappa=self.kappa)
            o = outs[_pick(self.u(), [x.prob for x in outs])]
            if o.skill is None:
                winner_side = o.state.side
                break
            team = teams[o.state.side]
            al = align[team.name]
            if o.actor == "cover":
                actor = al[BACK_POS[_pick(self.u(), (1 / 3, 1 / 3, 1 / 3))]]
            elif o.actor == "setter":
                main, alt = team.roster[0], team.roster[LIBERO]
                use_alt = self.u() < self.alt_set
                actor = alt if use_alt else main
                if actor == last_actor:
                    actor = main if actor == alt else alt
                self._setter = actor
            elif o.actor == "attacker":
                actor = self._attacker(team, lus[team.name], o.attack_code)
                attack_idx = len(contacts)
            else:
                raise AssertionError(o.actor)
            if o.state.side != holder:
                poss += 1
                holder = o.state.side
            contacts.append([actor, team, o.skill, o.code, o.attack_code, None])
            last_actor = actor
            state = o.state
        return contacts, teams[winner_side], lus

    def _attacker(self, team: _Team, lu: LineupState, code: str) -> str:
        want = CODE_ROLE[code]
        front = [p for slot, p in enumerate(lu.slots, start=1)
                 if slot in FRONT_SLOTS and lu.role(slot) == want]
        if front:
            return front[0]
        # the opposite attacks from the back row when the setter is front row
        for slot, p in enumerate(lu.slots, start=1):
            if lu.role(slot) == want:
                return p
        return lu.slots[0]


def _possessions(contacts) -> list[int]:
    out = []
    poss = 0
    prev = None
    for c in contacts:
        if c[1] is not prev:
            poss += 1
            prev = c[1]
        out.append(poss)
    return out


def simulate_match(truth: GroundTruthParams, match_no: int, home: str, away: str, max_points=None):
    cfg = truth.config
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, match_no]))
    sim = _Sim(truth, rng)
    sim._setter = None
    sim._digger = None
    match_id = f"M{match_no + 1:05d}"
    a, b = _Team(home, truth), _Team(away, truth)
    headers, records, lineups = [], [], []
    sets_won = {a.name: 0, b.name: 0}
    set_no = 0
    n_points = 0
    while max(sets_won.values()) < 3:
        set_no += 1
        target = 15 if set_no == 5 else 25
        for t in (a, b):
            t.setter_slot = int(rng.integers(1, 7))
        if set_no == 5:
            first = a if rng.random() < 0.5 else b
        else:
            first = a if set_no % 2 == 1 else b
        serving, receiving = first, (b if first is a else a)
        score = {a.name: 0, b.name: 0}
        pidx = 0
        while True:
            pidx += 1
            contacts, winner, lus = sim.point(match_id, set_no, pidx, serving, receiving)
            headers.append(PointHeader(match_id, set_no, pidx, serving.name, receiving.name, winner.name))
            lineups.extend(lus[t.name] for t in (a, b))
            for (player, team, skill, code, acode, zone), poss in zip(contacts, _possessions(contacts)):
                records.append(ContactRecord(
                    match_id, set_no, pidx, poss, player, team.name, team.conf, skill, EvalCode(code),
                    acode, None, zone,
                ))
            n_points += 1
            score[winner.name] += 1
            if winner is receiving:
                receiving.rotate()
                serving, receiving = receiving, serving
            if max_points is not None and n_points >= max_points:
                return headers, records, lineups
            hi, lo = max(score.values()), min(score.values())
            if hi >= target and hi - lo >= 2:
                w = a if score[a.name] > score[b.name] else b
                sets_won[w.name] += 1
                break
    return headers, records, lineups


@dataclass
class SyntheticSeason:
    truth: GroundTruthParams
    headers: list
    records: list
    lineups: list

    def parse_result(self) -> ParseResult:
        confs = dict(self.truth.team_conference)
        return ParseResult(list(self.records), list(self.headers), [], list(self.lineups), confs,
                           len(self.records) + len(self.headers))

    def points(self, threads: int = 1):
        return assemble_points(self.parse_result(), threads=threads).points

    def write(self, out_dir) -> dict:
        from pathlib import Path

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        schema = Schema()
        write_contact_file(out / "contacts.csv", self.headers, self.records, schema)
        write_lineup_file(out / "lineups.csv", self.lineups, schema)
        schema.dump(out / "schema.json")
        with open(out / "truth.json", "w") as fh:
            json.dump(self.truth.to_json(), fh, indent=1, sort_keys=True)
        return {"contacts": out / "contacts.csv", "lineups": out / "lineups.csv",
                "schema": out / "schema.json", "truth": out / "truth.json"}


def generate_season(config: SyntheticConfig, threads: int = 1) -> SyntheticSeason:
    """Simulate a season; matches use per-match seeds and merge in match order."""
    truth = draw_league(config)
    games = schedule(truth)

    if config.max_points is not None:
        headers, records, lineups = [], [], []
        left = config.max_points
        for i, (h, a) in enumerate(games):
            hh, rr, ll = simulate_match(truth, i, h, a, max_points=left)
            headers += hh
            records += rr
            lineups += ll
            left -= len(hh)
            if left <= 0:
                break
        return SyntheticSeason(truth, headers, records, lineups)

    def work(i):
        h, a = games[i]
        return simulate_match(truth, i, h, a)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, range(len(games))))
    else:
        results = [work(i) for i in range(len(games))]
    headers, records, lineups = [], [], []
    for hh, rr, ll in results:
        headers += hh
        records += rr
        lineups += ll
    return SyntheticSeason(truth, headers, records, lineups)


# --- league-level Pythagorean generator --------------------------------------------------------------

def pythagorean_league(n_teams: int = 1000, matches_per_team: int = 100, alpha: float = 9.3,
                       share_sd: float = 0.02, points_per_match: int = 180, seed: int = 0) -> list[tuple]:
    """(points scored, points allowed, match-win fraction) per team.

    Each team has a point share; its match results are Bernoulli draws from
    the Pythagorean expectation at ``alpha`` and its point totals are the
    expected totals at that share.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9E7]))
    share = np.clip(rng.normal(0.5, share_sd, n_teams), 0.05, 0.95)
    total = points_per_match * matches_per_team
    ps = share * total
    pa = (1 - share) * total
    p_win = 1.0 / (1.0 + (pa / ps) ** alpha)
    wins = rng.binomial(matches_per_team, p_win)
    return [(float(s), float(a), float(w) / matches_per_team) for s, a, w in zip(ps, pa, wins)]


def expected_reception_pg(truth: GroundTruthParams, v: dict, tilt: float) -> float:
    """Expected receiver credit -y at serve strength minus receive strength ``tilt``."""
    outs = outcomes(SERVE_STATE, tilt, truth.config.effect_scale)
    rec = [o for o in outs if o.skill is not None]
    z = sum(o.prob for o in rec)
    v0 = v[SERVE_STATE]
    return sum(o.prob / z * (v[o.state] - v0) for o in rec)
