# tabs package: one render(run_dir) per dashboard view
