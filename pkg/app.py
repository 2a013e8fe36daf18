from pathlib import Path

import pandas as pd
import streamlit as st

from config_utils import output_dir
from export_utils import RunExporter, load_run

st.set_page_config(
    page_title="Multirotor RL - Run Browser",
    page_icon="🚁",
    layout="wide"
)


def _list_runs(root: Path):
    if not root.is_dir():
        return []
    return sorted(p for p in root.iterdir() if p.is_dir() and (p / RunExporter.CONFIG).exists())


def main():
    if 'run_dir' not in st.session_state:
        st.session_state.run_dir = None
    if 'current_page' not in st.session_state:
        st.session_state.current_page = "Overview"

    # Sidebar: run selection + navigation
    st.sidebar.title("🚁 Multirotor RL")
    st.sidebar.markdown("---")

    root = Path(st.sidebar.text_input("Runs directory", value=str(output_dir())))
    runs = _list_runs(root)
    if not runs:
        st.sidebar.info("No finished runs found here.")
        st.title("🚁 Run Browser")
        st.info("👈 Point the sidebar at a directory written by `main.py train`, `eval`, `rollout` or `bench`.")
        return

    names = [p.name for p in runs]
    current = st.session_state.run_dir
    default_index = names.index(current) if current in names else 0
    selected = st.sidebar.selectbox("Run", names, index=default_index)
    st.session_state.run_dir = selected

    nav_items = [
        ("📋 Overview", "Overview"),
        ("📈 Learning Curves", "Learning Curves"),
        ("🎯 Evaluation", "Evaluation"),
        ("🛰️ Trajectory", "Trajectory"),
        ("⏱️ Throughput", "Throughput"),
    ]
    nav_labels = [label for label, _ in nav_items]
    page_index = next((i for i, (_, value) in enumerate(nav_items)
                       if value == st.session_state.current_page), 0)
    selected_label = st.sidebar.radio("Navigation", nav_labels, index=page_index)
    page = next(value for label, value in nav_items if label == selected_label)
    st.session_state.current_page = page

    try:
        run = load_run(root / selected)
    except FileNotFoundError as e:
        st.error(f"Could not load run: {e}")
        return

    if page == "Overview":
        overview_page(selected, run)
    elif page == "Learning Curves":
        curves_page(run["curves"])
    elif page == "Evaluation":
        evaluation_page(run["episodes"])
    elif page == "Trajectory":
        trajectory_page(run["trajectory"])
    elif page == "Throughput":
        bench_page(run["bench"])


def overview_page(name: str, run):
    st.title(f"📋 {name}")
    st.markdown("---")
    col1, col2 = st.columns([2, 1])
    with col1:
        st.markdown("### ⚙️ Resolved Config")
        st.code(run["config"] or "# no config.yaml", language="yaml")
    with col2:
        st.markdown("### 📊 Contents")
        curves = run["curves"]
        st.metric("PPO updates", len(curves))
        if not curves.empty:
            st.metric("Env steps", int(curves["step"].iloc[-1]))
            st.metric("Last pos error (m)", f"{curves['pos_error'].iloc[-1]:.3f}")
        st.metric("Trajectory steps", 0 if run["trajectory"] is None else len(run["trajectory"]))
        st.metric("Bench rows", len(run["bench"]))


def curves_page(curves: pd.DataFrame):
    st.title("📈 Learning Curves")
    st.markdown("---")
    if curves.empty:
        st.info("This run has no curves.csv.")
        return
    smooth = st.sidebar.slider("Smoothing window (updates)", 1, 50, 1)
    indexed = curves.set_index("step")
    if smooth > 1:
        indexed = indexed.rolling(smooth, min_periods=1).mean()

    col1, col2 = st.columns(2)
    with col1:
        st.markdown("### Return")
        st.line_chart(indexed[["mean_return"]])
        st.markdown("### Position error")
        st.line_chart(indexed[["pos_error"]])
    with col2:
        st.markdown("### Losses")
        st.line_chart(indexed[["policy_loss", "value_loss"]])
        st.markdown("### Entropy")
        st.line_chart(indexed[["entropy"]])
    with st.expander("Raw curves.csv"):
        st.dataframe(curves, use_container_width=True)


def evaluation_page(episodes: str):
    st.title("🎯 Evaluation")
    st.markdown("---")
    if not episodes:
        st.info("This run has no episodes.txt. Run `main.py eval` to produce one.")
        return
    st.text(episodes)


def trajectory_page(trajectory):
    st.title("🛰️ Trajectory")
    st.markdown("---")
    if trajectory is None:
        st.info("This run has no trajectory.jsonl. Run `main.py rollout --record` to produce one.")
        return
    episode_ids = sorted(trajectory["episode"].unique())
    episode = st.sidebar.selectbox("Episode", episode_ids)
    frame = trajectory[trajectory["episode"] == episode].set_index("t")
    col1, col2 = st.columns(2)
    with col1:
        st.markdown("### Position (drone 0)")
        st.line_chart(frame[["x", "y", "z"]])
    with col2:
        st.markdown("### Reward")
        st.line_chart(frame[["reward"]])
    st.markdown("### Ground track")
    st.scatter_chart(frame, x="x", y="y")


def bench_page(bench: pd.DataFrame):
    st.title("⏱️ Throughput")
    st.markdown("---")
    if bench.empty:
        st.info("This run has no bench.jsonl.")
        return
    st.dataframe(bench, use_container_width=True)
    st.bar_chart(bench.set_index("envs")[["fps_mean"]])


if __name__ == "__main__":
    main()
