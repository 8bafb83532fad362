"""Rotation lineups, libero inference and the assumed defensive alignment."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping

from .errors import AmbiguousLibero, IncompleteLineup

# service-rotation order relative to the setter
ROTATION_ORDER = ("S", "OH", "MB", "OPP", "OH", "MB")
FRONT_SLOTS = frozenset({2, 3, 4})


@dataclass(frozen=True)
class LineupState:
    """One team's rotation at the start of a point.

    ``slots[k - 1]`` is the player standing in rotation slot ``k``; slot 1
    serves, slots 2-4 are front row.
    """

    match_id: str
    set_number: int
    point_index: int
    team: str
    slots: tuple
    setter_slot: int

    @property
    def setter_row(self) -> str:
        return "Front" if self.setter_slot in FRONT_SLOTS else "Back"

    def role(self, slot: int) -> str:
        return ROTATION_ORDER[(slot - self.setter_slot) % 6]

    def slot_of(self, player: str) -> int | None:
        for k, p in enumerate(self.slots, start=1):
            if p == player:
                return k
        return None

    def players(self) -> tuple:
        return tuple(p for p in self.slots if p)

    def to_dict(self) -> dict:
        return {"slots": list(self.slots), "setter_slot": self.setter_slot}

    @classmethod
    def from_dict(cls, d: Mapping, match_id, set_number, point_index, team) -> "LineupState":
        return cls(match_id, int(set_number), int(point_index), team,
                   tuple(d["slots"]), int(d["setter_slot"]))


def resolve_defensive_positions(lineup: LineupState, libero: str | None = None) -> dict[str, str]:
    """Map defensive positions FL..BR to players.

    Front row: OH left, MB middle, OPP right. Back row: S right, OH middle,
    MB left with the libero taking the back-row MB's spot. When the setter is
    front row she takes the right-front spot and the OPP goes back right.
    """
    if lineup.setter_slot not in range(1, 7):
        raise IncompleteLineup(f"setter slot {lineup.setter_slot} invalid", team=lineup.team)
    if len(lineup.slots) != 6 or any(not p for p in lineup.slots):
        raise IncompleteLineup("lineup has unfilled slots", team=lineup.team,
                               point_index=lineup.point_index)
    out: dict[str, str] = {}
    for slot, player in enumerate(lineup.slots, start=1):
        role = lineup.role(slot)
        front = slot in FRONT_SLOTS
        if role in ("S", "OPP"):
            out["FR" if front else "BR"] = player
        elif role == "MB":
            if front:
                out["FM"] = player
            else:
                out["BL"] = libero if libero else player
        else:
            out["FL" if front else "BM"] = player
    return out


def infer_libero(contacts: Iterable, lineups: Iterable[LineupState]) -> dict[tuple, str | None]:
    """Per (match, set, team): the one player who touches the ball but never
    appears in a lineup slot, or None.

    Raises AmbiguousLibero listing every candidate when a team-set has more
    than one such player.
    """
    listed: dict[tuple, set] = defaultdict(set)
    for lu in lineups:
        listed[(lu.match_id, lu.set_number, lu.team)].update(lu.players())
    touched: dict[tuple, set] = defaultdict(set)
    for c in contacts:
        touched[(c.match_id, c.set_number, c.team)].add(c.player)

    result: dict[tuple, str | None] = {}
    for key in sorted(set(listed) | set(touched), key=lambda k: tuple(map(str, k))):
        candidates = sorted(touched.get(key, set()) - listed.get(key, set()))
        if len(candidates) > 1:
            raise AmbiguousLibero(
                f"{len(candidates)} off-lineup contributors in {key}",
                match_id=key[0], set_number=key[1], team=key[2], candidates=candidates,
            )
        result[key] = candidates[0] if candidates else None
    return result


def rotation_violations(sequence: Iterable[tuple[Mapping[str, LineupState], str, str]]) -> list[dict]:
    """Check that the setter slot advances exactly on side-outs.

    ``sequence`` yields ``(lineups_by_team, serving_team, winner)`` for the
    points of one set in order. Rotating clockwise moves the setter from
    slot k to slot k-1 (1 wraps to 6).
    """
    issues = []
    prev = None
    for lineups, server, winner in sequence:
        if prev is not None:
            p_lineups, p_server, p_winner = prev
            for team, lu in lineups.items():
                before = p_lineups.get(team)
                if before is None:
                    continue
                sided_out = p_winner == team and p_server != team
                expected = ((before.setter_slot - 2) % 6) + 1 if sided_out else before.setter_slot
                if lu.setter_slot != expected:
                    issues.append({"match_id": lu.match_id, "set_number": lu.set_number,
                                   "point_index": lu.point_index, "team": team,
                                   "expected_setter_slot": expected, "setter_slot": lu.setter_slot})
        prev = (lineups, server, winner)
    return issues
