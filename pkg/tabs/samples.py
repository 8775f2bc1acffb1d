# tabs/samples.py
from pathlib import Path

import numpy as np
import streamlit as st

from utils.io import load_tensor


def _strip(video: np.ndarray, scale: int) -> np.ndarray:
    """(L, C, H, W) in [0, 1] -> one H x (L*W) uint8 image, frames side by side."""
    frames = np.clip(video, 0.0, 1.0)
    if frames.shape[1] == 1:
        frames = np.repeat(frames, 3, axis=1)
    strip = np.concatenate(list(frames.transpose(0, 2, 3, 1)), axis=1)
    strip = np.kron(strip, np.ones((scale, scale, 1)))
    return (strip * 255.0 + 0.5).astype(np.uint8)


def render(run_dir: Path):
    st.subheader("Samples")
    videos = sorted(Path(run_dir).rglob("video.cyc"))
    if not videos:
        st.info("No sampled videos in this run. Use `cycflow sample --out <run>/samples/...`.")
        return
    scale = st.slider("Zoom", 1, 8, 4)
    for path in videos:
        try:
            video = load_tensor(path)
        except Exception as e:
            st.warning(f"{path} could not be read. Detail: {e}")
            continue
        st.markdown(f"**{path.parent.relative_to(run_dir) if path.parent != Path(run_dir) else path.parent.name}**"
                    f" · {video.shape[0]} frames")
        st.image(_strip(video, scale), use_column_width=False)
