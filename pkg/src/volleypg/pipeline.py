"""End-to-end season analysis: sideout table, schedule models, credit ledger."""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

from . import markov, mixed, sos
from .attribution import Ratios, pg_attack, pg_serve_receive

log = logging.getLogger(__name__)


@dataclass
class PwpStage:
    model: markov.TransitionModel
    table: markov.PwpTable


def fit_pwp(points: Sequence, support: int = markov.DEFAULT_SUPPORT, n_steps: int = 100,
            threads: int = 1) -> PwpStage:
    model = markov.count_transitions(points, support=support, threads=threads)
    return PwpStage(model, markov.absorb(model, n_steps=n_steps))


@dataclass
class SosStage:
    serve_obs: list
    serve_fit: mixed.MixedFit
    attack_obs: list
    tables: sos.ResponsibilityTables
    baselines: sos.SplitBaselines
    attack: sos.AttackFits
    ratios: Ratios
    issues: Counter = field(default_factory=Counter)

    @property
    def fits(self) -> dict:
        out = {"SV": self.serve_fit}
        out.update(self.attack.fits)
        return out


@dataclass
class SosData:
    serve_obs: list
    attack_obs: list
    tables: sos.ResponsibilityTables
    baselines: sos.SplitBaselines
    issues: Counter


def prepare_sos(points: Sequence, pwp: markov.PwpTable, support: int = markov.DEFAULT_SUPPORT,
                threads: int = 1) -> SosData:
    """Regression datasets with responsibility and split responses filled in."""
    issues = Counter()
    serve_obs, skipped = sos.build_serve_dataset(points, pwp)
    issues.update({f"serve_{k}": v for k, v in skipped.items()})
    attack_obs, att_issues = sos.build_attack_dataset(points, pwp, threads=threads)
    issues.update({f"attack_{k}": v for k, v in att_issues.items()})
    tables = sos.build_responsibility_tables(attack_obs)
    missing = sos.assign_responsibility(attack_obs, tables)
    issues.update({f"unassigned_{k}": v for k, v in missing.items()})
    baselines = sos.SplitBaselines.build([o.context() for o in attack_obs], support)
    sos.compute_split_responses(attack_obs, baselines)
    for k, v in sorted(issues.items()):
        log.info("%s: %d", k, v)
    return SosData(serve_obs, attack_obs, tables, baselines, issues)


def fit_sos(points: Sequence, pwp: markov.PwpTable, support: int = markov.DEFAULT_SUPPORT,
            threads: int = 1, **fit_opts) -> SosStage:
    data = prepare_sos(points, pwp, support, threads)
    serve_fit = sos.fit_serve_model(data.serve_obs, **fit_opts)
    attack = sos.fit_attack_models(data.attack_obs, **fit_opts)
    ratios = Ratios.from_fits(attack.fits)
    return SosStage(data.serve_obs, serve_fit, data.attack_obs, data.tables, data.baselines, attack,
                    ratios, data.issues)


def attribute(stage: SosStage) -> list:
    return credit_entries(stage.serve_obs, stage.attack_obs, stage.serve_fit, stage.attack.fits,
                          stage.ratios)


def credit_entries(serve_obs, attack_obs, serve_fit, attack_fits, ratios) -> list:
    """Credit ledger, serve entries first, then attacks in point order."""
    entries = []
    for o in serve_obs:
        entries.extend(pg_serve_receive(o, serve_fit))
    for o in attack_obs:
        entries.extend(pg_attack(o, attack_fits, ratios).entries)
    return entries


@dataclass
class SeasonAnalysis:
    points: list
    pwp: PwpStage
    sos: SosStage
    entries: list


def analyse(points: Sequence, support: int = markov.DEFAULT_SUPPORT, n_steps: int = 100,
            threads: int = 1, **fit_opts) -> SeasonAnalysis:
    points = list(points)
    pwp = fit_pwp(points, support, n_steps, threads)
    stage = fit_sos(points, pwp.table, support, threads, **fit_opts)
    return SeasonAnalysis(points, pwp, stage, attribute(stage))
