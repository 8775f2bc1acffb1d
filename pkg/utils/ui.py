# utils/ui.py: UI kit for the run dashboard

import math

import streamlit as st

# Palette
PRIMARY = "#0A66C2"
TEXT = "#1B1F24"
MUTED = "#6B7280"
SURFACE = "#FFFFFF"
SURFACE_ALT = "#F7F8FA"
BORDER = "#E5E7EB"
GOOD = "#0FA958"
BAD = "#C62828"

# one color per loss term / variant, stable across charts
SERIES_COLORS = {
    "lat_fwd": "#0A66C2",
    "pix_fwd": "#19B5FE",
    "lat_bwd": "#C62828",
    "pix_bwd": "#F59E0B",
    "total": "#1B1F24",
    "none": "#0A66C2",
    "no_reverse": "#C62828",
    "no_direction_tokens": "#F59E0B",
    "mixed_length": "#7C3AED",
    "long_only": "#6B7280",
}


def inject_global_css():
    st.markdown(
        f"""
<style>
:root {{
  --primary: {PRIMARY};
  --text: {TEXT};
  --muted: {MUTED};
  --surface: {SURFACE};
  --surface-alt: {SURFACE_ALT};
  --border: {BORDER};
}}
.block-container {{ padding-top: 0.75rem; padding-bottom: 1rem; max-width: 1480px; }}
h1, h2, h3 {{ letter-spacing: 0.2px; color: var(--text); font-weight: 700; }}
[data-testid="stToolbar"] {{ display: none !important; }}

.run-header {{
  display: flex; align-items: baseline; gap: 14px;
  border-bottom: 1px solid var(--border); padding: 8px 0 10px 0; margin-bottom: 10px;
}}
.run-badge {{
  background: var(--primary); color: white; font-weight: 700; font-size: 13px;
  padding: 5px 10px; border-radius: 10px;
}}
.run-title {{ font-size: 22px; font-weight: 800; }}
.run-sub {{ font-size: 13px; color: var(--muted); }}

[data-testid="stTabs"] div[role="tablist"] {{
  gap: 10px; padding: 6px; border: 1px solid var(--border); border-radius: 12px; background: var(--surface);
}}
[data-testid="stTabs"] button[role="tab"][aria-selected="true"] {{
  background: var(--primary); color: white; border-radius: 10px;
}}

.card {{ background: var(--surface); border: 1px solid var(--border); border-radius: 14px; padding: 12px 14px; }}
.card-title {{ font-size: 12px; color: var(--muted); margin-bottom: 2px; }}
.card-value {{ font-size: 20px; font-weight: 800; }}
.card-delta-up {{ color: {GOOD}; font-weight: 700; font-size: 12px; }}
.card-delta-down {{ color: {BAD}; font-weight: 700; font-size: 12px; }}
</style>
        """,
        unsafe_allow_html=True,
    )


def header(title: str, right_note: str = ""):
    st.markdown(
        f"""
<div class="run-header">
  <div class="run-badge">cycflow</div>
  <div class="run-title">{title}</div>
  <div class="run-sub">{right_note}</div>
</div>
        """,
        unsafe_allow_html=True,
    )


def fmt_metric(value, digits: int = 4) -> str:
    try:
        v = float(value)
    except (TypeError, ValueError):
        return "—"
    if math.isnan(v):
        return "—"
    if v != 0 and (abs(v) < 10 ** -digits or abs(v) >= 1e5):
        return f"{v:.{digits - 1}e}"
    return f"{v:.{digits}f}"


def kpi_row(items):
    """
    Render a KPI row.
    items: list[dict] with keys: title, value, delta (optional, "+..." renders green, anything else red)
    """
    if not items:
        return
    cols = st.columns(len(items), gap="small")
    for col, item in zip(cols, items):
        with col:
            html = f'<div class="card"><div class="card-title">{item["title"]}</div><div class="card-value">{item["value"]}</div>'
            if item.get("delta"):
                klass = "card-delta-up" if str(item["delta"]).startswith("+") else "card-delta-down"
                html += f'<div class="{klass}">{item["delta"]}</div>'
            st.markdown(html + "</div>", unsafe_allow_html=True)
