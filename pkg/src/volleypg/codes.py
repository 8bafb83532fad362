"""Closed vocabularies of the charting format: skills, evaluation codes, zones."""
from __future__ import annotations

from enum import Enum


class EvalCode(Enum):
    PERFECT = "#"
    POSITIVE = "+"
    OK = "!"
    NEGATIVE = "-"
    POOR = "/"
    ERROR = "="

    @property
    def symbol(self) -> str:
        return self.value

    @property
    def scale(self) -> int:
        return _SCALE[self]

    @classmethod
    def parse(cls, text: str) -> "EvalCode":
        sym = text.strip()
        sym = _DASHES.get(sym, sym)
        try:
            return cls(sym)
        except ValueError:
            raise ValueError(f"unknown evaluation code {text!r}") from None


_SCALE = {
    EvalCode.PERFECT: 4,
    EvalCode.POSITIVE: 3,
    EvalCode.OK: 2,
    EvalCode.NEGATIVE: 1,
    EvalCode.POOR: 0,
    EvalCode.ERROR: 0,
}

# typeset minus signs seen in exported sheets
_DASHES = {"–": "-", "—": "-", "−": "-", "--": "-"}


class SkillType(Enum):
    SERVE = "Serve"
    RECEPTION = "Reception"
    SET = "Set"
    ATTACK = "Attack"
    DIG = "Dig"
    BLOCK = "Block"

    @property
    def letter(self) -> str:
        return _LETTER[self]

    @classmethod
    def parse(cls, text: str, aliases: dict[str, str] | None = None) -> "SkillType":
        key = text.strip()
        if aliases and key in aliases:
            key = aliases[key]
        for member in cls:
            if key.lower() == member.value.lower():
                return member
        raise ValueError(f"unknown skill {text!r}")


_LETTER = {
    SkillType.SERVE: "SV",
    SkillType.RECEPTION: "R",
    SkillType.SET: "S",
    SkillType.ATTACK: "A",
    SkillType.DIG: "D",
    SkillType.BLOCK: "B",
}

# '!' sits between good and bad passes, so only passing skills may carry it
OK_SKILLS = frozenset({SkillType.RECEPTION, SkillType.DIG})

# '#' on these skills ends the rally in the contacting team's favour
WINNING_SKILLS = frozenset({SkillType.SERVE, SkillType.ATTACK, SkillType.BLOCK})


def eval_allowed(skill: SkillType, code: EvalCode) -> bool:
    return code is not EvalCode.OK or skill in OK_SKILLS


ZONES = range(1, 10)
FRONT_ZONES = frozenset({2, 3, 4})
MID_ZONES = frozenset({7, 8, 9})
BACK_ZONES = frozenset({1, 5, 6})


def parse_zone(text) -> int | None:
    if text is None:
        return None
    if isinstance(text, int):
        zone = text
    else:
        text = str(text).strip()
        if not text:
            return None
        zone = int(float(text))
    if zone not in ZONES:
        raise ValueError(f"zone {zone} outside 1..9")
    return zone


def zone_band(zone: int | None) -> str:
    """Depth band of a court zone: 'front', 'mid' or 'back'."""
    if zone is None:
        return "unknown"
    if zone in FRONT_ZONES:
        return "front"
    if zone in MID_ZONES:
        return "mid"
    return "back"


FRONT_POSITIONS = ("FL", "FM", "FR")
POSITIONS = ("FL", "FM", "FR", "BL", "BM", "BR")
# deterministic tie-break order for responsibility tables
POSITION_ORDER = {p: i for i, p in enumerate(POSITIONS)}
