"""Segmentation and junction metrics, and the report table.

Run: python demos/04_metrics.py
"""
import numpy as np

from vaffnet.data import BIFURCATION, CROSSING, Junction
from vaffnet.metrics import bacc, classification_metrics, detection_metrics, dice, match_greedy, match_junctions

gt = np.zeros((4, 4), bool)
gt[0] = True
pred = np.zeros_like(gt)
pred[0, :2] = True
pred[3, 3] = True
print(f"dice {dice(pred, gt):.4f}  bacc {bacc(pred, gt):.4f}")

# matching is one-to-one within 5 px, inclusive
print(match_junctions([Junction(13, 14, BIFURCATION)], [Junction(10, 10, BIFURCATION)]).pairs)

# nearest-first pairing can strand points that an optimal assignment keeps
p = [Junction(0, 0, BIFURCATION), Junction(4, 0, BIFURCATION)]
g = [Junction(3, 0, BIFURCATION), Junction(7, 0, BIFURCATION)]
print("greedy pairs", len(match_greedy(p, g, 3).pairs), "optimal pairs", len(match_junctions(p, g, 3).pairs))

gt_j = [Junction(10, 10, BIFURCATION), Junction(30, 30, BIFURCATION), Junction(50, 50, BIFURCATION)]
pr_j = [Junction(11, 10, BIFURCATION), Junction(30, 32, BIFURCATION), Junction(50, 50, CROSSING)]
m = match_junctions(pr_j, gt_j)
print("detection", detection_metrics(m))
print("classification", classification_metrics(m, pr_j, gt_j))
