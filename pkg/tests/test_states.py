import pytest
from hypothesis import given
from hypothesis import strategies as st

from volleypg.codes import EvalCode, SkillType
from volleypg.errors import UnencodableContact
from volleypg.ingest import ContactRecord, PointLog
from volleypg.states import (
    RECEIVER_WINS,
    SERVER_WINS,
    PointStateKey,
    coarsen,
    contact_token,
    encode_state_sequence,
    parse_state,
    win_prob,
)

TABLE1_STATES = ("(S, SV) -> (R, R#) -> (R, R#S#) -> (R, R#S#AX6) -> (S, D+) -> (S, D+S#) -> (S, D+S#AV5) "
                 "-> (R, B+) -> (S, D!) -> (S, D!S#) -> (S, D!S#AX5) -> (S, W)")


def _point(contacts, winner):
    return PointLog("M1", 1, 1, "A", "B", winner, tuple(contacts))


def _c(team, skill, ev, code=None, poss=1):
    return ContactRecord("M1", 1, 1, poss, f"{team}-p", team, "C", skill, EvalCode(ev), code)


def test_table1_sequence(table1_point):
    seq = encode_state_sequence(table1_point)
    assert " -> ".join(map(str, seq)) == TABLE1_STATES
    assert len(seq) == 12


def test_service_error():
    seq = encode_state_sequence(_point([_c("A", SkillType.SERVE, "=")], "B"))
    assert [str(s) for s in seq] == ["(S, SV)", "(R, W)"]


def test_ace():
    seq = encode_state_sequence(_point([_c("A", SkillType.SERVE, "#"),
                                        _c("B", SkillType.RECEPTION, "=", poss=2)], "A"))
    assert [str(s) for s in seq] == ["(S, SV)", "(R, R=)", "(S, W)"]


def test_block_dig_stays_in_blocking_possession():
    seq = encode_state_sequence(_point([
        _c("A", SkillType.SERVE, "-"),
        _c("B", SkillType.RECEPTION, "+", poss=2), _c("B", SkillType.SET, "#", poss=2),
        _c("B", SkillType.ATTACK, "+", "X5", poss=2),
        _c("A", SkillType.BLOCK, "-", poss=3), _c("A", SkillType.DIG, "+", poss=3),
        _c("A", SkillType.SET, "-", poss=3), _c("A", SkillType.ATTACK, "#", "X6", poss=3),
    ], "A"))
    assert str(seq[5]) == "(S, B-D+)"
    assert str(seq[-2]) == "(S, B-D+S-AX6)"
    assert seq[-1] == SERVER_WINS


def test_attack_without_code_is_unencodable():
    with pytest.raises(UnencodableContact):
        contact_token(SkillType.ATTACK, EvalCode.PERFECT, None)
    with pytest.raises(UnencodableContact):
        encode_state_sequence(_point([_c("B", SkillType.DIG, "+")], "A"))


def test_coarsen_levels():
    k = PointStateKey("R", ("D+", "S#", "AX5"))
    assert coarsen(k, 0) == k
    assert str(coarsen(k, 1)) == "(R, D+S#A)"
    assert str(coarsen(k, 2)) == "(R, A)"
    assert coarsen(RECEIVER_WINS, 2) == RECEIVER_WINS


@given(st.floats(0, 1), st.sampled_from("SR"))
def test_complementarity(v, side):
    other = "R" if side == "S" else "S"
    assert win_prob(v, side) + win_prob(v, other) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("text", ["(S, SV)", "(R, R#S#AX6)", "(S, D!S#AV5)", "(R, B-D+S-AX1)", "(S, W)"])
def test_parse_state_inverts_str(text):
    assert str(parse_state(text)) == text
