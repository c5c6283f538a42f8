"""Checks of pipeline outputs against the published reference numbers.

Every check returns a :class:`Check`; nothing here raises on a miss.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import reference as ref


@dataclass(frozen=True)
class Check:
    criterion: str
    passed: bool
    detail: str

    def as_dict(self) -> dict:
        return asdict(self)


def jaccard(a, b) -> float:
    a, b = set(a), set(b)
    return len(a & b) / len(a | b) if a | b else 1.0


def within(value: float, target: float, rel: float) -> bool:
    return math.isfinite(value) and abs(value - target) <= rel * abs(target)


def printed_tolerance(name: str, printed: str, floor: float = 0.01) -> float:
    """Allowed deviation from a printed summary value.

    Millisecond columns get 1.  Otherwise 0.01, widened to half a unit in
    the last printed digit when the value was printed more coarsely.
    """
    if name.startswith("t_"):
        return 1.0
    decimals = len(printed.split(".")[1]) if "." in printed else 0
    return max(floor, 0.5 * 10.0 ** (-decimals))


def check_summary(stats_by_group: dict) -> Check:
    """``stats_by_group``: ``{"men": SummaryStats, "women": SummaryStats}``."""
    misses = []
    for group in (ref.MEN, ref.WOMEN):
        stats = stats_by_group.get(group)
        if stats is None:
            return Check("table1", False, f"no summary for {group}")
        for name, cells in ref.SUMMARY.items():
            want = cells[group]
            try:
                got = stats[name]
            except KeyError:
                misses.append(f"{group}:{name} absent")
                continue
            for key, value in (("mean", got.mean), ("sd", got.sd)):
                tol = printed_tolerance(name, want[key])
                if not (math.isfinite(value) and abs(value - float(want[key])) <= tol + 1e-12):
                    misses.append(f"{group}:{name}.{key}={value:.4g} vs {want[key]}")
            if abs(got.missing_rate - float(want["missing"])) > 1.0 + 1e-9:
                misses.append(f"{group}:{name}.missing={got.missing_rate:.1f} vs {want['missing']}")
    return Check("table1", not misses, "all cells within tolerance" if not misses else "; ".join(misses[:12]))


def check_imputation(reports: dict) -> Check:
    """``reports``: group -> list of ImputationEvalReport (one per seed)."""
    lines = []
    ok = True
    for group, method, need_wins in ((ref.MEN, "forest_iterative", True), (ref.WOMEN, "knn", True),
                                     (ref.COMBINED, "forest_iterative", False)):
        runs = reports.get(group, [])
        if not runs:
            return Check("imputation", False, f"no reports for {group}")
        wins = sum(r.winner == method for r in runs)
        mses = [r.methods[method]["mse"] for r in runs]
        mse = float(np.mean(mses))
        target = ref.IMPUTATION[group][method][0]
        good_mse = within(mse, target, 0.20)
        if group == ref.COMBINED:
            good_rank = wins * 2 > len(runs)
        else:
            good_rank = wins >= math.ceil(0.6 * len(runs))
        ok &= good_mse and good_rank
        lines.append(f"{group}: {method} best in {wins}/{len(runs)}, mean MSE {mse:.4f} (target {target})")
    return Check("imputation", ok, "; ".join(lines))


def check_selection(pinball: dict, squared_combined=None) -> Check:
    """``pinball``: group -> SelectionResult at tau 0.9."""
    bounds = {ref.MEN: (15, 23), ref.WOMEN: (7, 13)}
    lines = []
    ok = True
    for group, (lo, hi) in bounds.items():
        sel = pinball.get(group)
        if sel is None:
            return Check("selection", False, f"no selection for {group}")
        k = len(sel.features)
        jac = jaccard(sel.features, ref.SELECTED_FEATURES[group])
        path = sel.path
        shape = path[0].mean_cv_loss > sel.best.mean_cv_loss
        ok &= lo <= k <= hi and jac >= 0.6 and shape
        lines.append(f"{group}: {k} features, Jaccard {jac:.2f}, loss at s=0 above optimum: {shape}")
    if squared_combined is None:
        ok = False
        lines.append("combined squared-loss selection missing")
    else:
        jac = jaccard(squared_combined.features, ref.SQUARED_SELECTED_FEATURES[ref.COMBINED])
        ok &= jac >= 0.7
        lines.append(f"combined squared: Jaccard {jac:.2f}")
    return Check("selection", ok, "; ".join(lines))


def check_tuning(results: dict) -> Check:
    """``results``: group -> TuneResult at tau 0.9."""
    lines = []
    ok = True
    for group in (ref.MEN, ref.WOMEN):
        res = results.get(group)
        if res is None:
            return Check("tuning", False, f"no tuning result for {group}")
        target = ref.TUNED_PINBALL[group]
        depth = res.best["max_depth"]
        good = within(res.score, target, 0.20) and depth is not None and 2 <= depth <= 4
        ok &= good
        lines.append(f"{group}: pinball {res.score:.4f} (target {target}), depth {depth}")
    return Check("tuning", ok, "; ".join(lines))


def check_shap_rankings(global_reports: dict, individual: dict) -> Check:
    lines = []
    ok = True
    men = global_reports.get(ref.MEN)
    women = global_reports.get(ref.WOMEN)
    if men is None or women is None:
        return Check("shap_rankings", False, "missing global SHAP reports")
    top = men.ranked_names()[0]
    top_val = float(men.mean_abs[men.ranking[0]])
    ok &= top == "v_H_S1" and 0.05 <= top_val <= 0.09
    lines.append(f"men top {top} ({top_val:.3f})")
    w3 = set(women.ranked_names()[:3])
    ok &= w3 == set(ref.SHAP_TOP_GLOBAL[ref.WOMEN])
    lines.append(f"women top-3 {sorted(w3)}")
    bm = individual.get(ref.MEN)
    bw = individual.get(ref.WOMEN)
    if bm is None or bw is None:
        return Check("shap_rankings", False, "; ".join(lines + ["missing individual SHAP records"]))
    ok &= bm.features[0] == "v_H_S1"
    need = {"r_stepDiff_S21", "r_stepDiff_S32"}
    ok &= need <= set(bw.features[:3])
    lines.append(f"best men top {bm.features[0]}; best women top-3 {list(bw.features[:3])}")
    return Check("shap_rankings", ok, "; ".join(lines))


def check_pdp(ice_v, pdp_pair) -> Check:
    """Men's velocity ICE grid and (velocity, knee angle) surface."""
    if ice_v is None or pdp_pair is None:
        return Check("pdp_ice", False, "men v_H_S1 ICE or (v_H_S1, a_knee_TD) surface not produced")
    exact = float(np.max(np.abs(ice_v.pdp - ice_v.curves.sum(axis=0) / ice_v.curves.shape[0])))
    below = ice_v.mean_slope(below=ref.VELOCITY_THRESHOLD)
    above = ice_v.mean_slope(above=ref.VELOCITY_THRESHOLD)
    slope_ok = math.isfinite(below) and math.isfinite(above) and below > above
    quad = pdp_pair.top_quadrant_dominates(ref.VELOCITY_THRESHOLD, ref.KNEE_THRESHOLD)
    ok = exact <= 1e-12 and slope_ok and quad
    return Check("pdp_ice", ok, f"pdp-mean gap {exact:.1e}; slope below {below:.4g} vs above {above:.4g}; "
                                f"top quadrant dominates: {quad}")


def check_gender_split(report) -> Check:
    if report is None:
        return Check("gender_split", False, "no comparison report")
    gaps = report.gap_holds()
    r2 = report.scores[("combined", "combined")].r2
    ok = all(gaps.values()) and math.isfinite(r2) and r2 >= 0.85
    return Check("gender_split", ok, f"per-gender MSE below combined: {gaps}; combined R2 {r2:.3f}")


__all__ = ["Check", "check_gender_split", "check_imputation", "check_pdp", "check_selection",
           "check_shap_rankings", "check_summary", "check_tuning", "jaccard", "printed_tolerance", "within"]
