"""
Ablation table and label sweep
==============================

Two seeds keep this quick; the acceptance suite uses five.
"""

from adaembed import RunConfig, run_ablation, run_label_sweep
from adaembed.trainer import format_ablation_table

config = RunConfig(seeds=(0, 1))

rows = run_ablation(config)
print(format_ablation_table(rows))

for row in run_label_sweep(config, shots_list=(0, 1, 3)):
    print("shots", row["shots"], "acc %.3f" % row["acc"])
