"""
Scores, bands and the cutoff
============================

Predicted hazards map onto a 300-850 score.  The Youden point of the ROC
curve picks a cutoff, and the confusion matrix at that cutoff gives the
classification metrics.
"""
import numpy as np

from hazard_scorecard import (ConfusionMatrix, ScoreScale, classification_metrics, confusion_at, roc,
                              score_band_table, to_score, youden_cutoff)

rng = np.random.default_rng(0)
n = 20_000
risk = rng.normal(size=n)
hazard = 1 / (1 + np.exp(-(-6 + 0.9 * risk)))
bad = (rng.random(n) < hazard).astype(int)

# Two ways to fix the scale.
scales = {"range": ScoreScale.from_hazards(hazard),
          "anchor": ScoreScale.anchor_based(621, 799.0, 20.0)}
for name, sc in scales.items():
    s = to_score(hazard, sc)
    print(f"{name}: scores {s.min()}..{s.max()}, hazard 1/800 scores {to_score(1 / 800, sc)}")

scores = to_score(hazard, scales["range"])
print("\nband        bads    goods   mean predicted")
for b in score_band_table(scores, bad, np.ones(n), hazard):
    if b.total:
        print(f"{b.label:<10}{b.bads:6.0f}{b.goods:9.0f}   {b.mean_predicted:.5f}")

curve = roc(bad, None, hazard)
h_star, j = youden_cutoff(curve)
cut = to_score(h_star, scales["range"]) + 1  # scores below the cutoff are flagged bad
print(f"\nAUC {curve.auc:.3f}; Youden J {j:.3f} at hazard {h_star:.5f} -> cutoff score {cut}")
m = confusion_at(scores, bad, cut)
print(m)
print(classification_metrics(m))

# Metrics from a published confusion matrix.
print(classification_metrics(ConfusionMatrix(tn=58881, fp=7490, fn=1167, tp=601)))
