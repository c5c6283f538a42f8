"""Synthetic long-jump-shaped data for tests, the bundled fixture and demos.

Values come from a one-factor Gaussian model: a latent approach-speed score
drives the velocity, step and contact-time columns, and the effective
distance rises with it up to a plateau.  Column means and SDs follow the
reference summary per group.  Missing cells come in blocks: columns with
the same reference missing rate are missing on the same rows.
"""

from __future__ import annotations

import numpy as np

from . import reference as ref
from ._seeding import make_rng
from .dataset import TabularDataset, default_schema

_LOADINGS = {
    "v_H_S1": 0.95, "v_H_S2": 0.85, "v_H_S3": 0.8, "v_H_TO": 0.8, "v_TO": 0.8, "v_V_TO": 0.35,
    "d_step_S1": 0.4, "d_step_S2": 0.4, "d_step_S3": 0.3,
    "t_contact_S1": -0.35, "t_contact_S2": -0.4, "t_contact_S3": -0.3,
    "Height": 0.3, "Weight": 0.25, "a_TO": 0.2, "d_loss_TO": -0.15,
}
LABELS = {ref.MEN: "Male", ref.WOMEN: "Female"}


def _group_block(rng, group: str, n: int, missing: str, min_observed: int):
    schema = [c for c in default_schema() if c.kind != "group"]
    u = rng.standard_normal(n)
    knee = rng.standard_normal(n)
    values = np.empty((n, len(schema)))
    for j, spec in enumerate(schema):
        if spec.name in ("d_resOffi", "d_resEffe"):
            continue
        cell = ref.SUMMARY[spec.name][group]
        mu, sd = float(cell["mean"]), float(cell["sd"])
        if spec.name == "a_knee_TD":
            z = knee
        else:
            rho = _LOADINGS.get(spec.name, 0.0)
            z = rho * u + np.sqrt(1.0 - rho * rho) * rng.standard_normal(n)
        values[:, j] = mu + sd * z
    names = [c.name for c in schema]
    eff = ref.SUMMARY["d_resEffe"][group]
    signal = 0.9 * np.minimum(u, 0.5) + 0.2 * np.tanh(knee) + 0.35 * rng.standard_normal(n)
    signal = (signal - signal.mean()) / (signal.std() or 1.0)
    effe = float(eff["mean"]) + float(eff["sd"]) * signal
    values[:, names.index("d_resEffe")] = effe
    values[:, names.index("d_resOffi")] = effe - np.abs(rng.normal(0.07, 0.05, n))
    values = np.round(values, 4)

    mask = np.zeros_like(values, dtype=bool)
    if missing != "none":
        by_rate: dict[int, list[int]] = {}
        for j, name in enumerate(names):
            rate = int(ref.SUMMARY[name][group]["missing"])
            if rate > 0:
                by_rate.setdefault(rate, []).append(j)
        for rate in sorted(by_rate):
            count = int(round(rate / 100.0 * n))
            if missing == "light":
                count = min(count, n - min_observed)
            if count <= 0:
                continue
            rows = rng.choice(n, size=count, replace=False)
            for j in by_rate[rate]:
                mask[rows, j] = True
    values[mask] = np.nan
    return schema, values, mask


def synthetic_longjump(n_men: int = 35, n_women: int = 33, seed: int = 0, missing: str = "table",
                       min_observed: int = 4) -> TabularDataset:
    """Draw a dataset with the full long-jump schema.

    Parameters
    ----------
    missing : {"table", "light", "none"}
        ``"table"`` mimics the reference missing rates, ``"light"`` caps
        them so each column keeps ``min_observed`` values per group.
    """
    if missing not in ("table", "light", "none"):
        raise ValueError(f"unknown missing mode {missing!r}")
    parts = []
    labels = []
    for group, n in ((ref.MEN, n_men), (ref.WOMEN, n_women)):
        if n <= 0:
            continue
        schema, values, mask = _group_block(make_rng(seed, "synthetic", len(parts)), group, n,
                                            missing, min_observed)
        parts.append((values, mask))
        labels += [LABELS[group]] * n
    group_spec = next(c for c in default_schema() if c.kind == "group")
    return TabularDataset(tuple(schema), np.vstack([v for v, _ in parts]), np.vstack([m for _, m in parts]),
                          np.array(labels, dtype=object), group_spec)


def synthetic_regression(n: int = 35, p: int = 19, seed: int = 0, noise: float = 0.1):
    """Small dense regression problem ``(X, y, names)`` with a saturating first feature."""
    rng = make_rng(seed, "synthetic-regression")
    X = rng.standard_normal((n, p))
    y = 8.0 + 0.3 * np.minimum(X[:, 0], 0.5) + 0.1 * X[:, 1] - 0.05 * X[:, 2] + noise * rng.standard_normal(n)
    return X, y, [f"x{j}" for j in range(p)]

