import math
from collections import defaultdict

import numpy as np
import pytest

from volleypg import mixed, sos
from volleypg.codes import EvalCode
from volleypg.errors import UnknownModel, UnlabelableOutcome
from volleypg.markov import BLOCK_ERROR, CLEAN, ERROR, RETURN, THROUGH
from volleypg.states import SERVE_STATE


@pytest.fixture(scope="module")
def stage(small_analysis):
    return small_analysis.sos


@pytest.fixture(scope="module")
def table(small_analysis):
    return small_analysis.pwp.table


# --- serve dataset ------------------------------------------------------------------

def test_serve_dataset_excludes_service_errors(small_points, table):
    obs, skipped = sos.build_serve_dataset(small_points, table)
    errors = sum(1 for p in small_points if p.contacts[0].evaluation is EvalCode.ERROR)
    assert skipped["service_error"] == errors > 0
    assert len(obs) + sum(skipped.values()) == len(small_points)
    keys = {o.point for o in obs}
    assert all(p.key not in keys for p in small_points if p.contacts[0].evaluation is EvalCode.ERROR)


def test_serve_response_is_negated_change(stage, table):
    v_sv = table.v(SERVE_STATE)
    for o in stage.serve_obs[:300]:
        assert o.y == -(table.v(o.post) - v_sv)
    aces = [o for o in stage.serve_obs if str(o.post) == "(R, R=)"]
    assert aces
    # a reception error always ends with the server winning, so v(post) is 0
    assert all(o.y == pytest.approx(v_sv, abs=1e-12) and o.y > 0 for o in aces)
    perfect = [o for o in stage.serve_obs if str(o.post) == "(R, R#)"]
    assert all(o.y < 0 for o in perfect)


def test_serve_model_factor_set(stage):
    assert stage.serve_fit.factors == list(sos.SERVE_FACTORS)


def test_identical_serve_outcomes_give_zero_components(stage):
    obs = [sos.ServeObservation(o.point, o.server, o.srv_team, o.srv_conf, o.receiver, o.rcv_team,
                                o.rcv_conf, o.pre, o.post, 0.1) for o in stage.serve_obs[:200]]
    f = sos.fit_serve_model(obs)
    assert set(f.components.values()) == {0.0}


# --- attack labels ------------------------------------------------------------------

def test_table1_labels(table1_point):
    c = table1_point.contacts
    assert c[6].attack_code == "V5"
    assert sos.label_attack_outcome(c, 6).category == RETURN
    assert sos.label_attack_outcome(c, 6).x == {1: 0, 2: 0, 3: 0, 4: 0}
    assert sos.label_attack_outcome(c, 3).category == CLEAN
    assert sos.label_attack_outcome(c, 3).x == {1: 0, 2: 1}
    assert sos.label_attack_outcome(c, 10).category == CLEAN


def test_error_label_and_contradictions(table1_point):
    c = list(table1_point.contacts)
    err = c[10].__class__(**{**c[10].__dict__, "evaluation": EvalCode.ERROR})
    assert sos.label_attack_outcome(c[:10] + [err], 10).x == {1: 1}
    with pytest.raises(UnlabelableOutcome):
        sos.label_attack_outcome(c[:6] + [err] + c[7:], 6)


def test_categories_partition(stage):
    cats = [o.category for o in stage.attack_obs]
    assert set(cats) <= {ERROR, CLEAN, BLOCK_ERROR, THROUGH, RETURN}
    for o in stage.attack_obs:
        x = o.label.x
        assert sum([x[1] == 1, x.get(2) == 1, x.get(3) == 1, x.get(4) == 1,
                    x.get(4) == 0]) == 1


# --- responsibility -----------------------------------------------------------------

def _table(counts, positions=("FL", "FM", "FR"), min_support=25):
    t = sos.ResponsibilityTable("blocker", positions, min_support)
    for key, pos, n in counts:
        for _ in range(n):
            t.add(key, pos)
    return t


def test_modal_position():
    keys = (("code", "X5"), ("all",))
    t = _table([(keys, "FM", 70), (keys, "FR", 30)])
    r = t.resolve(keys)
    assert (r.position, r.count, r.frequency, r.tie, r.provenance) == ("FM", 100, 0.7, False, "Inferred")


def test_tie_broken_by_position_order():
    keys = (("code", "X1"), ("all",))
    t = _table([(keys, "FR", 50), (keys, "FM", 50)])
    r = t.resolve(keys)
    assert r.position == "FM" and r.tie


def test_unseen_code_backs_off():
    t = _table([((("code", "X5"), ("all",)), "FL", 40)])
    r = t.resolve((("code", "ZZ"), ("all",)))
    assert r.position == "FL" and r.provenance == "BackOff"


def test_assignments_have_provenance(stage):
    seen = defaultdict(int)
    for o in stage.attack_obs:
        if o.blocker is not None:
            seen[o.blocker_provenance] += 1
            if o.block_player is not None:
                assert o.blocker == o.block_player and o.blocker_provenance == "Observed"
            else:
                pos = stage.tables.blocker.resolve(sos.blocker_keys(o)).position
                assert o.blocker == o.alignment[pos]
        if o.category == ERROR:
            assert o.blocker is None
    assert seen["Observed"] > 0 and seen["Inferred"] > 0


def test_responsibility_csv(tmp_path, stage):
    stage.tables.digger.write_csv(tmp_path / "d.csv")
    head = (tmp_path / "d.csv").read_text().splitlines()[0]
    assert head == "key,position,count,frequency,tie,counts"


# --- split responses ----------------------------------------------------------------

def test_error_response_negative(stage):
    errs = [o for o in stage.attack_obs if o.category == ERROR]
    assert errs and all(o.y[1] < 0 for o in errs)
    assert all(set(o.y) == {1} for o in errs)


def test_reached_splits(stage):
    for o in stage.attack_obs:
        assert set(o.y) == {k for k, cats in sos.REACHES.items() if o.category in cats}


def test_total_expectation_identity(stage):
    for k in (1, 2, 3, 4):
        cells = defaultdict(list)
        for o in stage.attack_obs:
            if k in o.y and o.y_level[k] == 0:
                cells[o.pre].append(o.y[k])
        assert cells
        for ys in cells.values():
            assert abs(math.fsum(ys)) / len(ys) <= 1e-10


def test_leaf_centering(stage):
    for k in (5, 6, 7):
        cells = defaultdict(list)
        for o in stage.attack_obs:
            if k in o.y and o.y_level[k] == 0:
                cells[o.pre].append(o.y[k])
        for ys in cells.values():
            assert abs(math.fsum(ys)) / len(ys) <= 1e-10


# --- model fits -----------------------------------------------------------------------

def test_model_factor_sets(stage):
    f = stage.attack.fits
    assert f[1].factors == list(sos.OFFENSE)
    assert not set(f[1].factors) & {"def_conf", "def_team", "blocker", "digger"}
    assert "digger" in f[6].factors and "digger" in f[7].factors and "digger" not in f[5].factors


def test_model_subsets(stage):
    rows = {k: {(o.point, o.contact_index) for o in sos.model_rows(stage.attack_obs, k)}
            for k in range(1, 8)}
    assert rows[3] <= rows[2] <= rows[1]
    assert rows[4] <= rows[3]
    by_key = {(o.point, o.contact_index): o for o in stage.attack_obs}
    assert {by_key[r].category for r in rows[6]} == {THROUGH}
    assert {by_key[r].category for r in rows[5]} == {RETURN}
    assert {by_key[r].category for r in rows[7]} == {CLEAN}
    assert all(by_key[r].label.x[1] == 0 for r in rows[2])
    assert stage.attack.rows[1] == len(stage.attack_obs)


def test_unseen_opponent_has_zero_sos(stage):
    class Obs:
        def levels(self):
            return {f: "nobody" for f in sos.SERVE_FACTORS + sos.OFFENSE + sos.DEFENSE + ("digger",)}
    assert sos.player_sos(Obs(), stage.fits, "SV", "Server") == 0.0
    assert sos.player_sos(Obs(), stage.fits, 2, "Attacker") == 0.0
    assert sos.player_sos(Obs(), stage.fits, 6, "Digger") == 0.0
    with pytest.raises(UnknownModel):
        sos.player_sos(Obs(), stage.fits, 9, "Attacker")


def test_mean_sos_near_zero(small_analysis):
    # every contact of a match faces the same opponent, so the standard error is clustered by match
    for role, comp in (("Server", "SV"), ("Receiver", "SV"), ("Attacker", "2"), ("Blocker", "2")):
        by_match = defaultdict(list)
        for e in small_analysis.entries:
            if e.role == role and e.component == comp:
                by_match[e.point[0]].append(e.sos)
        v = np.concatenate([np.asarray(x) for x in by_match.values()])
        m = np.array([np.mean(x) for x in by_match.values()])
        se = m.std(ddof=1) / math.sqrt(len(m))
        assert abs(v.mean()) <= 3 * se


def test_blups_zero_centred_per_factor(stage):
    for f in stage.fits.values():
        for name in f.factors:
            if f.components[name] > 0:
                assert abs(sum(f.blups[name].values())) < 1e-9


def test_fits_round_trip_through_json(stage):
    back = mixed.MixedFit.from_json(stage.attack.fits[2].to_json())
    o = stage.attack_obs[0]
    assert sos.player_sos(o, {2: back}, 2, "Attacker") == sos.player_sos(o, stage.fits, 2, "Attacker")
