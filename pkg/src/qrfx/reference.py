"""Published reference values for the long-jump study.

Values are kept as printed (strings for the summary table) so that checks
can honour the printed precision.
"""

from __future__ import annotations

MEN = "men"
WOMEN = "women"
COMBINED = "combined"

# name: (men mean, men SD, men missing %, women mean, women SD, women missing %)
_SUMMARY_ROWS = """
d_resOffi 8.09 0.29 0 6.68 0.24 0
d_resEffe 8.16 0.26 0 6.74 0.24 3
d_loss_TO 7.3 6.4 0 6.5 5.1 3
t_step_S3 216 16 23 227 19 24
t_step_S2 245 18 23 244 18 24
t_step_S1 195 10 23 190 16 24
t_contact_S3 92 8 23 105 8 24
t_contact_S2 113 11 23 112 13 24
t_contact_S1 122 8 23 118 14 24
t_flight_S3 124 13 23 123 18 24
t_flight_S2 132 17 23 132 10 24
t_flight_S1 73 9 23 73 12 24
d_step_S3 2.30 0.13 43 2.08 0.14 0
d_step_S2 2.44 0.15 43 2.29 0.17 0
d_step_S1 2.19 0.11 0 2.04 0.17 0
r_stepDiff_S32 5.9 4.8 43 10.3 8.4 0
r_stepDiff_S21 -9.3 6.2 43 -10.6 6.9 0
v_H_S3 10.41 0.21 43 9.29 0.27 0
v_H_S2 10.37 0.28 43 9.30 0.27 0
v_H_S1 9.76 0.41 0 8.87 0.39 0
v_H_TO 8.68 0.45 0 7.93 0.42 0
v_V_TO 3.68 0.29 0 3.15 0.31 0
t_TDO 0.12 0.01 77 0.12 0.01 76
v_HDiff_TDO -1.59 0.50 0 -1.45 0.34 0
v_TO 9.43 0.37 0 8.54 0.38 0
a_TO 23.0 2.3 0 21.7 2.4 0
h_CMLower 3.3 1.6 23 3.2 1.9 24
a_body_TD -35.5 2.1 23 -36.1 1.8 24
a_body_TO 19.9 3.9 0 19.5 4.8 0
a_trunk_TD -5.6 4.4 57 -7.4 4.6 61
a_trunk_TO 1.9 6.5 0 3.3 6.1 0
a_trunkRot_TDO 10.1 2.8 77 5.6 4.5 76
a_thigh_TO -13.7 9.0 0 -10.7 8.9 0
w_thigh_TDO 598 141 0 616 127 0
a_knee_TD 169.3 5.6 23 167.9 6.3 24
a_kneeMin_TDO 138.8 8.8 0 138.2 5.8 0
a_kneeRange_TDO 31.0 9.2 23 29.0 6.6 24
w_knee_TDO -504 143 23 -473 115 24
a_hip_LD 94.0 19.0 37 88.4 14.0 36
a_knee_LD 134.7 12.1 37 138.1 14.7 36
a_trunk_LD 28.4 40.2 37 31.3 35.3 36
d_loss_LD 0.06 0.10 37 0.05 0.07 36
d_LD 0.62 0.13 37 0.55 0.08 36
Height 1.85 0.06 0 1.73 0.06 3
Weight 75 7 0 62 6 6
"""


def _parse_summary():
    out = {}
    for line in _SUMMARY_ROWS.strip().splitlines():
        name, *cells = line.split()
        out[name] = {
            MEN: {"mean": cells[0], "sd": cells[1], "missing": cells[2]},
            WOMEN: {"mean": cells[3], "sd": cells[4], "missing": cells[5]},
        }
    return out


#: printed summary statistics, per column and group, as strings
SUMMARY = _parse_summary()

GROUP_SIZES = {MEN: 35, WOMEN: 33}

#: imputation evaluation: method -> (mse, rmse, r2)
IMPUTATION = {
    MEN: {"mean": (0.0493, 0.222, 0.262), "knn": (0.0435, 0.208, 0.350),
          "bayes_iterative": (0.0484, 0.220, 0.277), "forest_iterative": (0.0432, 0.208, 0.354)},
    WOMEN: {"mean": (0.0452, 0.213, 0.324), "knn": (0.0421, 0.205, 0.370),
            "bayes_iterative": (0.0445, 0.211, 0.334), "forest_iterative": (0.0436, 0.209, 0.349)},
    COMBINED: {"mean": (0.0592, 0.243, 0.895), "knn": (0.0597, 0.244, 0.894),
               "bayes_iterative": (0.0566, 0.238, 0.899), "forest_iterative": (0.0526, 0.229, 0.906)},
}
IMPUTATION_WINNER = {MEN: "forest_iterative", WOMEN: "knn", COMBINED: "forest_iterative"}

#: pinball-loss lasso at tau = 0.9
SELECTED_BUDGET = {MEN: 0.84, WOMEN: 0.04}
SELECTED_FEATURES = {
    MEN: ("v_H_S1", "a_knee_TD", "t_contact_S2", "d_loss_LD", "h_CMLower", "v_TO", "a_knee_LD",
          "Height", "t_flight_S1", "Weight", "t_flight_S2", "v_H_S3", "a_trunk_TO", "v_V_TO",
          "a_kneeRange_TDO", "r_stepDiff_S21", "t_flight_S3", "w_thigh_TDO", "v_H_S2"),
    WOMEN: ("v_H_S2", "d_LD", "r_stepDiff_S32", "a_knee_LD", "t_flight_S2", "r_stepDiff_S21",
            "a_thigh_TO", "v_H_S3", "t_flight_S1", "v_H_S1"),
}

#: squared-loss lasso (penalty on the raw feature scale)
SQUARED_SELECTED_FEATURES = {
    COMBINED: ("Height", "Weight", "t_contact_S2", "t_flight_S2", "v_H_S3", "v_H_S2", "v_H_S1",
               "v_V_TO", "v_TO", "Gender_isFemale"),
    MEN: ("Height", "d_loss_TO", "t_contact_S2", "t_flight_S2", "d_step_S1", "v_H_S3", "v_H_S2",
          "v_H_S1", "v_V_TO", "v_TO", "h_CMLower", "a_knee_LD", "d_loss_LD"),
    WOMEN: ("t_flight_S1", "v_H_S3", "v_H_S2", "v_H_S1", "a_body_TD"),
}
SQUARED_ALPHA = {COMBINED: 0.0307, MEN: 0.0180, WOMEN: 0.0488}

#: tuned quantile forest (n_estimators, max_depth, max_features) and best CV pinball
TUNED_HYPER = {MEN: (100, 3, 6), WOMEN: (100, 3, 1)}
TUNED_PINBALL = {MEN: 0.0287, WOMEN: 0.0333}

#: Shapley explanations
SHAP_TOP_GLOBAL = {MEN: ("v_H_S1",), WOMEN: ("v_H_S1", "v_H_S3", "v_H_S2")}
SHAP_TOP_MEAN_ABS = {MEN: 0.071, WOMEN: 0.018}
BEST_JUMP = {MEN: 8.59, WOMEN: 7.18}

#: partial dependence thresholds (men)
VELOCITY_THRESHOLD = 9.6  # v_H_S1, m/s
KNEE_THRESHOLD = 169.0  # a_knee_TD, degrees

#: combined-vs-split evaluation: (train, test) -> (mse, rmse, r2)
GENDER_SPLIT = {
    (COMBINED, COMBINED): (0.0450, 0.212, 0.920),
    (COMBINED, MEN): (0.0404, 0.199, 0.396),
    (COMBINED, WOMEN): (0.0496, 0.220, 0.036),
    (MEN, MEN): (0.0374, 0.192, 0.441),
    (WOMEN, WOMEN): (0.0254, 0.158, 0.503),
}

#: features shown in the per-gender ICE plots and 2-D partial-dependence surfaces
ICE_FEATURES = {MEN: ("v_H_S1", "a_knee_TD", "v_V_TO"),
                WOMEN: ("v_H_S1", "r_stepDiff_S21", "r_stepDiff_S32")}
PDP_PAIRS = {MEN: (("v_H_S1", "a_knee_TD"), ("v_H_S1", "v_V_TO"), ("a_knee_TD", "v_V_TO")),
             WOMEN: (("v_H_S1", "a_knee_LD"), ("v_H_S2", "r_stepDiff_S21"), ("v_H_S3", "r_stepDiff_S32"))}
