# app.py
# Run dashboard: loss curves, metrics, ablation table and sampled frames.
# Launched by `cycflow inspect --dashboard --run-dir <dir>` or `streamlit run app.py`.

import os
from pathlib import Path

import streamlit as st

from tabs import ablation, evaluation, samples, training
from utils.io import read_json
from utils.transforms import discover_runs
from utils.ui import header, inject_global_css


# =========================================
# Global page config & CSS
# =========================================
st.set_page_config(page_title="cycflow runs", layout="wide")
inject_global_css()


# =========================================
# Run discovery (resilient)
# =========================================
@st.cache_data(show_spinner=False)
def find_runs(root: str):
    return [str(p) for p in discover_runs(root)]


def load_resolved(run_dir: Path) -> dict:
    p = run_dir / "resolved_config.json"
    if not p.exists():
        return {}
    try:
        return read_json(p)
    except Exception:
        return {}


# =========================================
# Sidebar
# =========================================
with st.sidebar:
    st.header("Runs")
    default_root = os.environ.get("CYCFLOW_RUN_DIR", "runs")
    root = st.text_input("Run root", value=default_root)
    runs = find_runs(root)
    if not runs:
        st.info(f"No runs found under {root}.")
        st.stop()
    labels = [str(Path(r).relative_to(root)) if Path(r) != Path(root) else "." for r in runs]
    choice = st.selectbox("Run", options=list(range(len(runs))), format_func=lambda i: labels[i])
    run_dir = Path(runs[choice])

    resolved = load_resolved(run_dir)
    if resolved:
        st.markdown("---")
        st.header("Config")
        run = resolved.get("run", {})
        if run.get("command"):
            st.caption(f"command: {run['command']}")
        st.json({k: resolved[k] for k in ("train", "data") if k in resolved}, expanded=False)


# =========================================
# Main
# =========================================
header("Run dashboard", str(run_dir))

tabs = st.tabs(["Training", "Evaluation", "Ablation", "Samples"])

with tabs[0]:
    try:
        training.render(run_dir)
    except Exception as e:
        st.warning(f"Training view is not available. Detail: {e}")

with tabs[1]:
    try:
        evaluation.render(run_dir)
    except Exception as e:
        st.warning(f"Evaluation view is not available. Detail: {e}")

with tabs[2]:
    try:
        ablation.render(run_dir)
    except Exception as e:
        st.warning(f"Ablation view is not available. Detail: {e}")

with tabs[3]:
    try:
        samples.render(run_dir)
    except Exception as e:
        st.warning(f"Samples view is not available. Detail: {e}")
