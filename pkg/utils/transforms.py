# utils/transforms.py
import re
from pathlib import Path

import pandas as pd

LOSS_TERMS = ["lat_fwd", "pix_fwd", "lat_bwd", "pix_bwd"]
VARIANT_ORDER = ["none", "no_reverse", "no_direction_tokens", "mixed_length", "long_only"]


def _pick(df, cands):
    lower = {c.lower(): c for c in df.columns}
    for c in cands:
        if c in df.columns: return c
        if c.lower() in lower: return lower[c.lower()]
    return None


def checkpoint_sort_key(label):
    """
    Sorting key for checkpoint names:
    - step_000500.ckpt sorts by its step number.
    - final.ckpt goes last.
    - anything else after the numbered ones, by name.
    """
    s = Path(str(label)).name
    m = re.search(r"step_(\d+)", s)
    if m:
        return (0, int(m.group(1)), s)
    return (2 if s.startswith("final") else 1, 0, s)


def loss_curve_long(df: pd.DataFrame, terms=None, smooth: int = 1) -> pd.DataFrame:
    """
    Melt a loss curve into (step, term, value) rows for line charts.
    `smooth` > 1 applies a trailing rolling mean per term.
    """
    step = _pick(df, ["step"])
    if step is None or df.empty:
        return pd.DataFrame(columns=["step", "term", "value"])
    terms = [t for t in (terms or LOSS_TERMS + ["total"]) if t in df.columns]
    wide = df[[step] + terms].sort_values(step).set_index(step)
    if smooth > 1:
        wide = wide.rolling(smooth, min_periods=1).mean()
    out = wide.reset_index().melt(id_vars=step, var_name="term", value_name="value")
    return out.rename(columns={step: "step"})


def phase_boundaries(df: pd.DataFrame) -> list:
    """Steps at which the logged `phase` value changes."""
    if "phase" not in df.columns or df.empty:
        return []
    ordered = df.sort_values("step")
    changed = ordered["phase"].ne(ordered["phase"].shift()) & ordered["phase"].shift().notna()
    return ordered.loc[changed, "step"].astype(int).tolist()


def split_metrics(df: pd.DataFrame):
    """(per-clip rows, aggregate row as a dict); the aggregate is recomputed when absent."""
    cid = _pick(df, ["clip_id"])
    if cid is None or df.empty:
        return pd.DataFrame(), {}
    is_agg = df[cid].astype(str) == "aggregate"
    clips = df[~is_agg].reset_index(drop=True)
    numeric = clips.select_dtypes("number")
    if is_agg.any():
        agg = df[is_agg].iloc[0].drop(labels=[cid]).astype(float).to_dict()
    else:
        agg = numeric.mean().to_dict()
    return clips, agg


def ablation_view(df: pd.DataFrame) -> pd.DataFrame:
    """Variant rows in the canonical order, unknown variants after them."""
    vcol = _pick(df, ["variant"])
    if vcol is None or df.empty:
        return pd.DataFrame()
    rank = {v: i for i, v in enumerate(VARIANT_ORDER)}
    out = df.assign(__order__=df[vcol].map(lambda v: rank.get(v, len(rank))))
    return out.sort_values(["__order__", vcol]).drop(columns="__order__").set_index(vcol)


def discover_runs(root) -> list:
    """Directories under `root` (itself included) that hold a loss curve, metrics or an ablation table."""
    root = Path(root)
    if not root.exists():
        return []
    marks = ("loss_curve.csv", "metrics.csv", "ablation.csv")
    found = {p.parent for m in marks for p in root.rglob(m)}
    return sorted(found, key=lambda p: (len(p.parts), str(p)))
