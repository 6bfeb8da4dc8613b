"""
Overlap metrics on small masks
==============================

Dice, Jaccard and pixel accuracy all come from one confusion count.
"""

import numpy as np

from polypseg.metrics import binarize, confusion, evaluate_masks

# two 4x4 masks whose 2x2 squares overlap in one pixel
pred = np.zeros((4, 4), np.uint8)
truth = np.zeros((4, 4), np.uint8)
pred[0:2, 0:2] = 1
truth[1:3, 1:3] = 1

counts = confusion(pred, truth)
print(counts)                      # tp=1 tn=9 fp=3 fn=3
print(evaluate_masks(pred, truth))  # jaccard 1/7, dice 0.25, accuracy 0.625

# dice and jaccard are tied together: dice = 2j / (1 + j)
r = evaluate_masks(pred, truth)
print(r.dice, 2 * r.jaccard / (1 + r.jaccard))

# probability maps are thresholded first; 0.5 counts as foreground
probs = np.array([[0.2, 0.5], [0.7, 0.49]])
print(binarize(probs))

# when both masks are empty the overlap scores are defined as 1
empty = np.zeros((3, 3), np.uint8)
print(evaluate_masks(empty, empty))
