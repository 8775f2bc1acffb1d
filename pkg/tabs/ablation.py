# tabs/ablation.py
from pathlib import Path

import plotly.express as px
import streamlit as st

from utils.io import read_csv_smart
from utils.transforms import ablation_view
from utils.ui import SERIES_COLORS

# lower is better for these; everything else higher is better
LOWER_BETTER = {"boundary_first", "boundary_last", "cycle_error", "frechet", "val_loss_long", "final_loss"}


def render(run_dir: Path):
    st.subheader("Ablation")
    try:
        table = read_csv_smart("ablation.csv", run_dir)
    except Exception as e:
        st.info(f"No ablation table in this run. Detail: {e}")
        return
    view = ablation_view(table)
    if view.empty:
        st.info("The ablation table has no variant rows.")
        return

    if "trend_ok" in view.columns:
        ok = bool(view["trend_ok"].iloc[0])
        (st.success if ok else st.error)(
            "Reverse training raises dynamic degree on every seed." if ok
            else "Reverse training did not raise dynamic degree on every seed."
        )

    metrics = [c for c in view.columns if c != "trend_ok"]
    metric = st.selectbox("Metric", metrics, index=metrics.index("dynamic_degree") if "dynamic_degree" in metrics else 0)
    st.caption("lower is better" if metric in LOWER_BETTER else "higher is better")

    try:
        runs = read_csv_smart("ablation_runs.csv", run_dir)
    except Exception:
        runs = None
    if runs is not None and not runs.empty and metric in runs.columns:
        fig = px.strip(runs, x="variant", y=metric, color="variant", color_discrete_map=SERIES_COLORS,
                       hover_data=["seed"])
    else:
        fig = px.bar(view.reset_index(), x="variant", y=metric, color="variant", color_discrete_map=SERIES_COLORS)
    fig.update_layout(height=360, margin=dict(l=10, r=10, t=10, b=10), showlegend=False)
    st.plotly_chart(fig, use_container_width=True)
    st.dataframe(view, use_container_width=True)
