# tabs/evaluation.py
from pathlib import Path

import plotly.express as px
import streamlit as st

from utils.io import read_csv_smart, read_json
from utils.transforms import split_metrics
from utils.ui import fmt_metric, kpi_row

METRICS = ["boundary_first", "boundary_last", "cycle_error", "dynamic_degree", "smoothness", "flicker"]


def _summary(run_dir: Path) -> dict:
    hits = sorted(Path(run_dir).rglob("summary.json"), key=lambda p: len(p.parts))
    if not hits:
        return {}
    try:
        return read_json(hits[0])
    except Exception:
        return {}


def render(run_dir: Path):
    st.subheader("Evaluation")
    try:
        table = read_csv_smart("metrics.csv", run_dir)
    except Exception as e:
        st.info(f"No metrics in this run. Detail: {e}")
        return
    clips, agg = split_metrics(table)
    if clips.empty:
        st.info("The metrics table has no clip rows.")
        return

    summary = _summary(run_dir)
    kpi_row([
        {"title": "Clips", "value": len(clips)},
        {"title": "Boundary MSE (first / last)",
         "value": f"{fmt_metric(agg.get('boundary_first'))} / {fmt_metric(agg.get('boundary_last'))}"},
        {"title": "Cycle error", "value": fmt_metric(agg.get("cycle_error"))},
        {"title": "Dynamic degree", "value": fmt_metric(agg.get("dynamic_degree"))},
        {"title": "Frechet proxy", "value": fmt_metric(summary.get("frechet"))},
    ])
    if summary.get("uncovered_dimensions"):
        st.caption("Not measured: " + ", ".join(summary["uncovered_dimensions"]).replace("_", " "))
    if summary.get("failures"):
        st.warning(f"{summary['failures']} clips failed during evaluation.")

    metric = st.selectbox("Per-clip metric", [m for m in METRICS if m in clips.columns])
    fig = px.bar(clips, x="clip_id", y=metric)
    fig.add_hline(y=agg.get(metric, 0.0), line_dash="dash", line_color="#C62828")
    fig.update_layout(height=360, margin=dict(l=10, r=10, t=10, b=10))
    st.plotly_chart(fig, use_container_width=True)
    st.dataframe(table, use_container_width=True, hide_index=True)
