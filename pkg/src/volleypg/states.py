"""Point-state keys: which side holds the ball plus the touches of its possession."""
from __future__ import annotations

from dataclasses import dataclass

from .codes import EvalCode, SkillType
from .errors import UnencodableContact

WIN = "W"


@dataclass(frozen=True, order=True)
class PointStateKey:
    """``side`` is S or R relative to the server of the point. ``touches`` holds
    one token per contact of the current possession ("R#", "S#", "AX6", "B+"),
    or the single token W for the two terminal states."""

    side: str
    touches: tuple

    @property
    def terminal(self) -> bool:
        return self.touches == (WIN,)

    def __str__(self) -> str:
        return f"({self.side}, {''.join(self.touches)})"

    def to_list(self) -> list:
        return [self.side, *self.touches]

    @classmethod
    def from_list(cls, items) -> "PointStateKey":
        return cls(items[0], tuple(items[1:]))


SERVE_STATE = PointStateKey("S", ("SV",))
SERVER_WINS = PointStateKey("S", (WIN,))
RECEIVER_WINS = PointStateKey("R", (WIN,))
TERMINALS = (SERVER_WINS, RECEIVER_WINS)


def terminal_for(server_won: bool) -> PointStateKey:
    return SERVER_WINS if server_won else RECEIVER_WINS


def contact_token(skill: SkillType, code: EvalCode, attack_code: str | None = None) -> str:
    if skill is SkillType.SERVE:
        return "SV"
    if skill is SkillType.ATTACK:
        if not attack_code:
            raise UnencodableContact("attack without attack code")
        return "A" + attack_code
    if code is EvalCode.OK and skill not in (SkillType.RECEPTION, SkillType.DIG):
        raise UnencodableContact(f"'!' on {skill.value}")
    return skill.letter + code.symbol


def encode_state_sequence(point) -> list[PointStateKey]:
    """One state per contact, then the terminal state."""
    contacts = point.contacts
    if not contacts or contacts[0].skill is not SkillType.SERVE:
        raise UnencodableContact("rally does not open with a serve", point=list(point.key))
    states = []
    touches: list[str] = []
    team = None
    for i, c in enumerate(contacts):
        if c.skill is SkillType.SERVE and i > 0:
            raise UnencodableContact("serve after the first contact", point=list(point.key))
        if c.team != team:
            touches = []
            team = c.team
        touches.append(contact_token(c.skill, c.evaluation, c.attack_code))
        states.append(PointStateKey(point.side_of(c.team), tuple(touches)))
    states.append(terminal_for(point.winner == point.serving_team))
    return states


def strip_attack_code(token: str) -> str:
    return "A" if token.startswith("A") else token


def coarsen(key: PointStateKey, level: int) -> PointStateKey:
    """Level 0 is the key itself; level 1 drops attack codes; level 2 also
    keeps only the last touch of the possession."""
    if level <= 0 or key.terminal:
        return key
    touches = tuple(strip_attack_code(t) for t in key.touches)
    if level >= 2:
        touches = touches[-1:]
    return PointStateKey(key.side, touches)


BACKOFF_LEVELS = (0, 1, 2)


def win_prob(v: float, side: str) -> float:
    """Point-win probability of ``side`` given the sideout probability ``v``."""
    return v if side == "R" else 1.0 - v


def parse_state(text: str) -> PointStateKey:
    """Inverse of ``str`` for keys whose tokens can be split unambiguously."""
    inner = text.strip()
    if not (inner.startswith("(") and inner.endswith(")")):
        raise ValueError(f"not a state key: {text!r}")
    side, _, body = inner[1:-1].partition(",")
    body = body.strip()
    if body == WIN:
        return PointStateKey(side.strip(), (WIN,))
    tokens = []
    i = 0
    while i < len(body):
        if body.startswith("SV", i):
            tokens.append("SV")
            i += 2
        elif body[i] == "A":
            j = i + 1
            while j < len(body) and not (body[j] in "RSDB" and j + 1 < len(body) and body[j + 1] in "#+!-/="):
                j += 1
            tokens.append(body[i:j])
            i = j
        else:
            tokens.append(body[i:i + 2])
            i += 2
    return PointStateKey(side.strip(), tuple(tokens))
