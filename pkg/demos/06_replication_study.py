#!/usr/bin/env python3
"""A miniature replication study.

Simulates the fixed synthetic scenario many times, estimates with known
delay distributions, and prints the bias/coverage summary table (the full
study in the acceptance suite uses 50 replicates with 200 bootstrap
replicates each; this demo uses a lighter setting).
"""

from tsihosp import format_summary_table, run_replication_study

report = run_replication_study(
    "correct", mode="known_omega", reps=20, seed=1234, bootstrap_B=50,
    level=0.95, threads=2,
)
print(f"replicates: {report.replicates} (failed: {report.failed})\n")
print(format_summary_table(report))

print("\nsame scenario with 15% under-reported incidence:")
noisy = run_replication_study(
    "underreport_incidence", mode="known_omega", reps=20, seed=1234, threads=2
)
b1, b2 = noisy.row("beta_1")["mean"], noisy.row("beta_2")["mean"]
print(f"  mean coefficient estimates: ({b1:.4f}, {b2:.4f}) — close to the "
      "generating (-0.02, -0.125) despite the reporting noise")
