# tabs/training.py
from pathlib import Path

import pandas as pd
import plotly.express as px
import streamlit as st

from utils.io import read_csv_smart
from utils.transforms import LOSS_TERMS, checkpoint_sort_key, loss_curve_long, phase_boundaries
from utils.ui import SERIES_COLORS, fmt_metric, kpi_row


def _delta(ratio: float) -> str:
    if ratio != ratio:
        return ""
    if ratio < 1:
        return f"+{(1 - ratio) * 100:.1f}% lower"
    return f"{(ratio - 1) * 100:.1f}% higher"


def render(run_dir: Path):
    st.subheader("Training")
    try:
        curve = read_csv_smart("loss_curve.csv", run_dir)
    except Exception as e:
        st.info(f"No loss curve in this run. Detail: {e}")
        return
    if curve.empty:
        st.info("The loss curve is empty.")
        return

    first, last = curve.iloc[0], curve.iloc[-1]
    ratio = last["total"] / first["total"] if first["total"] else float("nan")
    kpi_row([
        {"title": "Steps", "value": int(last["step"])},
        {"title": f"Total loss (step {int(first['step'])})", "value": fmt_metric(first["total"])},
        {"title": "Total loss (last)", "value": fmt_metric(last["total"]), "delta": _delta(ratio)},
        {"title": "Current length", "value": int(last["length"])},
    ])

    smooth = st.slider("Smoothing window (logged rows)", 1, 25, 1)
    terms = st.multiselect("Terms", LOSS_TERMS + ["total"], default=LOSS_TERMS + ["total"])
    long = loss_curve_long(curve, terms, smooth)
    fig = px.line(long, x="step", y="value", color="term", color_discrete_map=SERIES_COLORS, log_y=True)
    for step in phase_boundaries(curve):
        fig.add_vline(x=step, line_dash="dash", line_color="#6B7280")
    fig.update_layout(height=420, margin=dict(l=10, r=10, t=10, b=10), legend_title_text="")
    st.plotly_chart(fig, use_container_width=True)

    if (curve[["lat_bwd", "pix_bwd"]] == 0).all().all():
        st.caption("Backward terms are zero throughout: this run trained without reverse samples.")

    ckpts = sorted(Path(run_dir).rglob("*.ckpt"), key=checkpoint_sort_key)
    if ckpts:
        st.markdown("**Checkpoints**")
        st.dataframe(
            pd.DataFrame({"checkpoint": [p.name for p in ckpts], "bytes": [p.stat().st_size for p in ckpts]}),
            use_container_width=True, hide_index=True,
        )
