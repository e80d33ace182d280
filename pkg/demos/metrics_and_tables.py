"""Confusion-matrix metrics and the per-class table format.

Accuracies are truncated, not rounded, to two decimals, and method
summaries print as mIoU|mAcc.
"""
import numpy as np

from materialkit import EvalReport, confusion, mean_accuracy, mean_iou, per_class_table
from materialkit.evaluation import comparison_table, summary_table

cm = np.array([[2, 0],
               [1, 1]])
print("mAcc", mean_accuracy(cm), "(recalls 1 and 1/2)")
print("mIoU", mean_iou(cm), "(IoUs 2/3 and 1/2)")
print()

cm = np.array([[896, 104], [0, 1000]])
print(per_class_table(cm, ["fabric", "glass"]))
print()

classes = ["fabric", "glass", "metal", "wood"]
rng = np.random.default_rng(0)
truths = np.repeat(np.arange(4), 25)
good = np.where(rng.random(100) < 0.85, truths, rng.integers(0, 4, 100))
weak = np.where(rng.random(100) < 0.5, truths, rng.integers(0, 4, 100))
ours = EvalReport.from_predictions(good, truths, classes, "ours", dataset="mock")
other = EvalReport.from_predictions(weak, truths, classes, "baseline", dataset="mock")
print(comparison_table({"baseline": other, "ours": ours}, classes))
print()
print(summary_table({"ours": {"mock": ours}, "baseline": {"mock": other}}))
print()
print(confusion(good, truths, 4))
