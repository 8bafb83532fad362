"""Exit criteria, each reported as one PASS/FAIL line in the terminal summary."""
import json
import math
import time
from collections import Counter, defaultdict

import numpy as np
import pytest
from scipy.stats import spearmanr

from volleypg import attribution as at
from volleypg import ingest, mixed, pipeline, sos, synth
from volleypg.markov import ERROR
from volleypg.states import encode_state_sequence

from .conftest import ACCEPTANCE, load_table1, run_chain
from .test_mixed import balanced_reml

pytestmark = pytest.mark.acceptance

TABLE1_STATES = ("(S, SV) -> (R, R#) -> (R, R#S#) -> (R, R#S#AX6) -> (S, D+) -> (S, D+S#) -> (S, D+S#AV5) "
                 "-> (R, B+) -> (S, D!) -> (S, D!S#) -> (S, D!S#AX5) -> (S, W)")


def report(n, ok, detail, info=False):
    tag = "INFO" if info else ("PASS" if ok else "FAIL")
    ACCEPTANCE.append(f"criterion {n}{' (info)' if info else ''}: {tag}  {detail}")
    if not info:
        assert ok, detail


def test_c1_state_encoding():
    t0 = time.perf_counter()
    point = load_table1()
    text = " -> ".join(map(str, encode_state_sequence(point)))
    dt = time.perf_counter() - t0
    report(1, text == TABLE1_STATES and dt < 1.0, f"12-state sequence byte-exact={text == TABLE1_STATES}, {dt:.3f}s")


@pytest.mark.slow
def test_c2_absorption():
    cfg = synth.SyntheticConfig(seed=11, max_points=100_000, variances={k: 0.0 for k in synth.DEFAULT_VARIANCES})
    t0 = time.perf_counter()
    points = synth.generate_season(cfg).points()
    t_gen = time.perf_counter() - t0
    t0 = time.perf_counter()
    stage = pipeline.fit_pwp(points)
    rowsum = float(np.max(np.abs(stage.model.row_sums() - 1.0)))
    resid = stage.table.max_residual
    # Monte Carlo rollouts through the fitted chain itself
    kernel = synth.Kernel.from_csr(stage.model.states, stage.model.P1)
    worst, n_states, fails = 0.0, 0, []
    for s, v, n in zip(stage.table.states, stage.table.v_values, stage.table.visits):
        if n < 1000 or s.terminal:
            continue
        n_states += 1
        mc = synth.mc_point_win_prob(kernel, s, 100_000, seed=1)
        se = math.sqrt(v * (1 - v) / mc.n_sim)
        diff = abs(v - mc.estimate)
        z = diff / se if se > 0 else (0.0 if diff == 0 else math.inf)
        worst = max(worst, z)
        if z > 3:
            fails.append(str(s))
    dt = time.perf_counter() - t0
    ok = not fails and rowsum <= 1e-12 and resid <= 1e-9 and dt < 120
    report(2, ok, f"{len(points)} points, {n_states} states with >=1000 visits, worst |v-MC|/SE={worst:.2f}, "
                  f"max row-sum error={rowsum:.1e}, residual@{stage.table.steps_used} steps={resid:.1e}, "
                  f"{dt:.1f}s (+{t_gen:.1f}s generation)")
    # the same comparison against the generator's true kernel, where P1 estimation error also enters
    truth = synth.base_kernel().exact_v()
    z_true = max(abs(v - truth[s]) / math.sqrt(truth[s] * (1 - truth[s]) / n)
                 for s, v, n in zip(stage.table.states, stage.table.v_values, stage.table.visits)
                 if n >= 1000 and not s.terminal and 0 < truth[s] < 1)
    report(2, True, f"vs exact absorption of the true kernel, worst |v-v_true|/sqrt(v(1-v)/visits)={z_true:.2f}",
           info=True)


def test_c3_reml_oracle():
    t0 = time.perf_counter()
    worst, shrink_ok = 0.0, True
    m, k = 30, 20
    g = np.repeat(np.arange(m), k)
    for seed in range(50):
        rng = np.random.default_rng(seed)
        y = 1.0 + rng.normal(0, 0.5, m)[g] + rng.normal(0, 1, m * k)
        f = mixed.fit(y, {"g": g})
        se, sg = balanced_reml(y, m, k)
        worst = max(worst, abs(f.residual_variance - se) / se)
        if sg > 0:
            worst = max(worst, abs(f.components["g"] - sg) / sg)
        else:
            worst = max(worst, f.components["g"])
        r = y - f.intercept
        for lvl in range(m):
            if abs(f.blup("g", str(lvl))) > abs(r[g == lvl].mean()):
                shrink_ok = False
    dt = time.perf_counter() - t0
    report(3, worst <= 1e-6 and shrink_ok and dt < 30,
           f"50 seeds, worst relative error={worst:.1e}, shrinkage holds={shrink_ok}, {dt:.1f}s")


# --- the full-size league, shared by criteria 4-6 -----------------------------------------------

@pytest.fixture(scope="module")
def league(tmp_path_factory):
    t0 = time.perf_counter()
    cfg = synth.SyntheticConfig(n_conferences=4, teams_per_conference=8, players_per_team=10, n_matches=600,
                                seed=0)
    season = synth.generate_season(cfg)
    files = season.write(tmp_path_factory.mktemp("league"))
    parsed = ingest.parse_contact_file(files["contacts"], ingest.Schema.load(files["schema"]),
                                       lineup_path=files["lineups"])
    asm = ingest.assemble_points(parsed)
    analysis = pipeline.analyse(asm.points)
    return season, parsed, asm, analysis, time.perf_counter() - t0


def _rho(truth, kind, counts, fit, factor, minimum):
    players = sorted(p for p, c in counts.items() if c >= minimum)
    rho = spearmanr([truth.player_effects[kind][p] for p in players],
                    [fit.blup(factor, p) for p in players]).correlation
    return float(rho), len(players)


@pytest.mark.slow
def test_c4_parameter_recovery(league):
    season, parsed, asm, an, dt = league
    truth = season.truth
    v = truth.config.variances
    target = v["attack"] / (v["attack"] + v["set"])
    st = an.sos
    ratio = st.ratios.attacker[1]
    srv, n_srv = _rho(truth, "serve", Counter(o.server for o in st.serve_obs), st.serve_fit, "server", 100)
    rcv, n_rcv = _rho(truth, "receive", Counter(o.receiver for o in st.serve_obs), st.serve_fit, "receiver", 100)
    # the serve model's response favours the server, so a good passer has a negative receiver effect
    rcv = -rcv
    att, n_att = _rho(truth, "attack", Counter(o.attacker for o in st.attack_obs), st.attack.fits[1],
                      "attacker", 100)
    ok = (len(parsed.rejections) == 0 and not asm.issues and abs(ratio - target) <= 0.05
          and min(srv, rcv, att) >= 0.9 and dt < 600)
    report(4, ok, f"rejections={len(parsed.rejections)}, true ratio {target:.2f}, model-1 variance_ratio={ratio:.3f}, "
                  f"Spearman server={srv:.3f} (n={n_srv}), receiver={rcv:.3f} (n={n_rcv}), "
                  f"attacker={att:.3f} (n={n_att}), {dt:.0f}s")
    report(4, True, "variance_ratio by component: "
           + ", ".join(f"{k}={r:.3f}" for k, r in sorted(st.ratios.attacker.items())), info=True)


@pytest.mark.slow
def test_c5_attribution_identities(league):
    an = league[3]
    st = an.sos
    fits, ratios = st.attack.fits, st.ratios
    bad = Counter()
    n = 0
    for o in st.attack_obs:
        c = at.pg_attack(o, fits, ratios)
        shares = defaultdict(dict)
        for e in c.entries:
            n += 1
            shares[e.component][e.role] = e.share
            if e.adjusted_pg != e.raw_pg - e.sos_term:
                bad["raw_adjusted"] += 1
        for comp, s in shares.items():
            if s["Attacker"] + s["Setter"] != 1.0:
                bad["share_offense"] += 1
            if "Blocker" in s and "Digger" in s and s["Blocker"] + s["Digger"] != 1.0:
                bad["share_defense"] += 1
            if comp not in ("6", "7") and "Blocker" in s and s["Blocker"] != 1.0:
                bad["share_blocker"] += 1
        for k in range(1, 8):
            if k not in o.y and (c.attacker[k - 1] or c.setter[k - 1] or c.blocker[k - 1] or c.digger[k - 1]):
                bad["unreached"] += 1
        if o.category == ERROR and (c.attacker[1:].any() or c.setter[1:].any()):
            bad["error_components"] += 1
        t = c.totals()
        if (t["A"] != c.attacker.sum() or t["B"] != c.blocker[1:].sum() or t["D"] != c.digger[5:].sum()
                or c.blocker[0] != 0.0 or c.digger[:5].any()):
            bad["totals"] += 1
        by_role = defaultdict(list)
        for e in c.entries:
            by_role[e.role].append(e.adjusted_pg)
        if abs(math.fsum(by_role["Attacker"]) - t["A"]) > 1e-12:
            bad["totals"] += 1
    for e in an.entries:
        if e.component == "SV":
            n += 1
            if e.adjusted_pg != e.raw_pg - e.sos_term:
                bad["raw_adjusted"] += 1
    report(5, not bad, f"{len(st.attack_obs)} attacks, {n} entries checked, violations={dict(bad) or 0}")


@pytest.mark.slow
def test_c6_total_expectation(league):
    st = league[3].sos
    worst, cells = 0.0, 0
    for k in (1, 2, 3, 4):
        by_pre = defaultdict(list)
        for o in st.attack_obs:
            if k in o.y and o.y_level[k] == 0:
                by_pre[o.pre].append(o.y[k])
        for ys in by_pre.values():
            cells += 1
            worst = max(worst, abs(math.fsum(ys) / len(ys)))
    report(6, worst <= 1e-10 and cells > 0,
           f"{cells} (pre-state, split) cells without back-off, worst weighted mean={worst:.1e}")


def test_c7_pythagorean():
    t0 = time.perf_counter()
    sym = all(at.pythagorean_winpct(ps, ps, a) == 0.5 for ps in (1, 250, 1e5) for a in (0.5, 1, 9.3, 40))
    w = at.pythagorean_winpct(0.502, 0.498, 9.3)
    fit = at.fit_alpha(synth.pythagorean_league(n_teams=1000, alpha=9.3, seed=0))
    dt = time.perf_counter() - t0
    ok = sym and 0.515 <= w <= 0.522 and abs(fit.alpha - 9.3) <= 0.5 and dt < 10
    report(7, ok, f"PS=PA->0.5: {sym}, share 0.502 at alpha 9.3 -> {w:.4f}, fitted alpha={fit.alpha:.3f}, {dt:.2f}s")


@pytest.mark.slow
def test_c8_determinism(tmp_path):
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps({"n_conferences": 4, "teams_per_conference": 8, "players_per_team": 10,
                               "n_matches": 600}))
    t0 = time.perf_counter()
    a = run_chain(tmp_path / "a", cfg, seed=0, threads=1)
    b = run_chain(tmp_path / "b", cfg, seed=0, threads=1)
    c = run_chain(tmp_path / "c", cfg, seed=0, threads=4)
    dt = time.perf_counter() - t0
    n_files = sum(len(v) for v in a.values())
    report(8, a == b == c and dt < 900,
           f"{n_files} output files, run1==run2: {a == b}, threads 1==4: {a == c}, {dt:.0f}s for three runs")
