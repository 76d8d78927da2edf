"""
From experiments to tables
==========================

Runs a scaled-down version of each experiment category, then rebuilds
the result tables and plots from the CSVs alone. A full-size run is
the same thing with the default configuration.
"""
import tempfile
from pathlib import Path

from ckptguard.harness import ExperimentConfig, run_bench, run_corruption_trials, run_crash_trials
from ckptguard.protocols import WriteMode
from ckptguard.stats import make_report

plan = (
    (WriteMode.UNSAFE, "after_model", 20),
    (WriteMode.UNSAFE, "before_commit", 5),
    (WriteMode.ATOMIC_DIRSYNC, None, 20),
)

with tempfile.TemporaryDirectory() as td:
    cfg = ExperimentConfig(root=td, seeds=(1, 2, 3), epochs=12,
                           crash_plan=plan, fault_trials=25)
    bench = run_bench(cfg)
    crash = run_crash_trials(cfg)
    corrupt = run_corruption_trials(cfg)
    paths = make_report(bench, crash, corrupt, out_dir=Path(td) / "report")
    print(Path(paths["report"]).read_text())
    print("plots:", *(Path(paths[k]).name for k in sorted(paths) if k.endswith("_plot")))
