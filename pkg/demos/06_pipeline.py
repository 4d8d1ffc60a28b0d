"""
End-to-end pipeline
===================

The pipeline stages pass files to each other under one output directory.
Here it runs on a generated portfolio; point ``paths`` in the config at
real loan, performance and macro files to run it on data.
"""
import json
import sys
import tempfile
from pathlib import Path

from hazard_scorecard import Pipeline, PipelineConfig

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="hazard-"))
cfg = PipelineConfig.load(None, {"synth": {"n_loans": 4000}, "seed": 7})
results = Pipeline(cfg, out).run("all")
for stage, info in results.items():
    print(f"{stage:<9}{info}")

manifest = json.loads((out / "manifest.json").read_text())
print("\nstage row counts:", manifest["stages"]["sample"])
print("cutoff:", json.loads((out / "cutoff" / "cutoff.json").read_text()))
print((out / "model" / "wald_report.txt").read_text())
print("artifacts in", out)
