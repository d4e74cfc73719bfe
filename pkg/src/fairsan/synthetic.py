"""Synthetic datasets with a known leak of the sensitive attribute."""

import numpy as np
import pandas as pd

from .data import infer_schema


def make_leak_dataset(n_records=2000, seed=0, p_sensitive=0.4, bias=2.0):
    """Six attributes, a binary sensitive ``group`` and a biased decision.

    The ``leak`` attribute is an exact copy of the group indicator, so any
    reasonable classifier recovers the group from the raw attributes. The
    decision depends on ``x2`` and, with weight ``bias``, on the group.
    """
    rng = np.random.default_rng(seed)
    s = (rng.random(n_records) < p_sensitive).astype(np.int64)
    # keep both groups present even for tiny samples
    s[0], s[-1] = 0, 1
    x1 = np.round(rng.normal(40.0, 10.0, n_records).clip(17, 90))
    x2 = rng.random(n_records)
    x3 = rng.exponential(2.0, n_records)
    x4 = rng.choice(np.array(["c0", "c1", "c2"]), n_records, p=[0.5, 0.3, 0.2])
    x5 = rng.normal(0.0, 1.0, n_records)
    logit = 3.0 * (x2 - 0.5) + bias * (s - 0.5)
    y = (rng.random(n_records) < 1.0 / (1.0 + np.exp(-logit))).astype(np.int64)
    return pd.DataFrame({
        "leak": s.astype(str),
        "x1": x1.astype(np.int64).astype(str),
        "x2": [repr(float(v)) for v in x2],
        "x3": [repr(float(v)) for v in x3],
        "x4": x4,
        "x5": [repr(float(v)) for v in x5],
        "group": np.where(s == 1, "g1", "g0"),
        "decision": np.where(y == 1, "yes", "no"),
    })


def leak_schema(df):
    return infer_schema(df, sensitive="group", decision="decision", log_columns=["x3"])
