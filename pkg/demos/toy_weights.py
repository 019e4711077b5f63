"""
The 100-pixel toy image: bias, weights, and a corrected stump
=============================================================

A 10x10 image splits into a dark-left and a dark-right region with nine
bright "salt" pixels scattered over both halves. Two small rectangles act as
the sparse annotation; they cover three of the nine bright pixels. Because
the rectangles over-sample their neighborhoods, a classifier trained on them
sees a biased picture of the image.

The importance weight of each annotated pixel is the ratio "how common is
this appearance in the image" over "how common is it in the annotation".
With one-hot intensity indicators the logistic estimate is exact:

    w(level) = n_image(level) / n_annotated(level)

so the bright pixels get weight 9/3 = 3 and the weight sum over all
annotated pixels recovers the image size (100).
"""

import numpy as np

from dalsa import (
    ForestParams,
    TUMOROUS,
    compute_patient_weights,
    confusion_metrics,
    extract_features,
    make_toy,
    predict,
    train_forest,
)

volume = make_toy()
print(f"image: {volume.dims[0]}x{volume.dims[1]}, channels: {volume.channel_names}")

bright = volume.channels[2] == 1.0
annotated = volume.sur_labels != 0
print(f"bright pixels: {int(bright.sum())}, annotated bright: {int((bright & annotated).sum())}")

report = compute_patient_weights(volume)
print(f"\nannotated voxels: {report.n_train}, image voxels: {report.n_test}")
for name, level in zip(volume.channel_names, range(3)):
    mask = volume.channels[level][report.voxel_indices] == 1.0
    print(f"  weight[{name:>14s}] = {report.weights[mask][0]:.6f}")
print(f"  sum of weights    = {report.sum_weights:.6f}  (equals the image size)")

# a single stump trained on the annotated pixels: with weights, each node
# carries pixel mass (count times weight) instead of raw counts, so the
# 24 annotated pixels stand in for all 100
from dalsa.forest import Leaf, train_tree

table = extract_features(volume, "labeled_voxels_only", label_source="sur_labels")
params = ForestParams(n_trees=1, max_depth=1, bootstrap=False, seed=0)
for name, training in (("counts", table), ("weighted", table.with_weights(report.weights))):
    stump = train_tree(training, params, 0)
    print(f"\n{name} stump: split on {volume.channel_names[stump.feature]}"
          f" <= {stump.threshold}")
    for side, node in (("left ", stump.left), ("right", stump.right)):
        sums = node.class_weight_sums
        print(f"  {side} node mass: healthy={sums[0]:.2f} tumorous={sums[1]:.2f}")

# at the image level both stump forests classify the halves correctly; the
# bright pixels share one feature value across halves, so depth 1 leaves
# them with whichever side wins the vote
full_image = extract_features(volume, "all_brain_voxels")
truth = volume.labels[full_image.voxel_indices] == TUMOROUS
params = ForestParams(n_trees=101, max_depth=1, bootstrap=True, seed=7)
for name, weights in (("unweighted", None), ("weighted", report.weights)):
    training = table if weights is None else table.with_weights(weights)
    forest = train_forest(training, params)
    labels, _ = predict(forest, full_image, positive_class=TUMOROUS)
    metrics = confusion_metrics(labels == TUMOROUS, truth)
    print(f"{name} forest: dice={metrics.dice:.4f} "
          f"sensitivity={metrics.sensitivity:.4f} specificity={metrics.specificity:.4f}")
