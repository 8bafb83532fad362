from pathlib import Path

import pytest

from volleypg import ingest, pipeline, synth

FIXTURES = Path(__file__).parent / "fixtures"


def load_table1():
    parsed = ingest.parse_contact_file(FIXTURES / "table1_contacts.csv")
    asm = ingest.assemble_points(parsed)
    assert not asm.issues
    return asm.points[0]


@pytest.fixture(scope="session")
def table1_point():
    return load_table1()


@pytest.fixture(scope="session")
def small_season():
    cfg = synth.SyntheticConfig(n_conferences=2, teams_per_conference=4, n_matches=40, seed=5)
    return synth.generate_season(cfg)


@pytest.fixture(scope="session")
def small_points(small_season):
    return small_season.points()


@pytest.fixture(scope="session")
def small_analysis(small_points):
    return pipeline.analyse(small_points)


STAGES = ("sim", "ingest", "pwp", "sos", "attr", "report")


def run_chain(base: Path, config: Path, seed: int, threads: int = 1) -> dict:
    """simulate -> ingest -> fit-pwp -> fit-sos -> attribute -> report; returns output digests."""
    from volleypg import cli
    from volleypg.manifest import MANIFEST, digest_tree

    d = {s: base / s for s in STAGES}
    g = ["--threads", str(threads)]
    steps = [
        ["simulate", "--config", str(config), "--seed", str(seed), "--out", str(d["sim"])],
        ["ingest", "--contacts", str(d["sim"] / "contacts.csv"), "--lineups", str(d["sim"] / "lineups.csv"),
         "--schema", str(d["sim"] / "schema.json"), "--out", str(d["ingest"])],
        ["fit-pwp", "--points", str(d["ingest"] / "points.jsonl"), "--out", str(d["pwp"])],
        ["fit-sos", "--points", str(d["ingest"] / "points.jsonl"), "--pwp", str(d["pwp"]), "--out", str(d["sos"])],
        ["attribute", "--points", str(d["ingest"] / "points.jsonl"), "--pwp", str(d["pwp"]),
         "--sos", str(d["sos"]), "--out", str(d["attr"])],
        ["report", "--ledger", str(d["attr"]), "--points", str(d["ingest"] / "points.jsonl"),
         "--level", "conference", "--out", str(d["report"])],
    ]
    for argv in steps:
        code = cli.run(g + argv)
        assert code == 0, (argv[0], code)
        assert (Path(argv[argv.index("--out") + 1]) / MANIFEST).exists()
    return {s: digest_tree(d[s]) for s in STAGES}


# one line per acceptance criterion, printed after the run
ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
