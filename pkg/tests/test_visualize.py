import numpy as np

from vaffnet.data import BIFURCATION, CROSSING, Junction
from vaffnet.visualize import BIFURCATION_COLOR, CROSSING_COLOR, render_overlay


def test_tints_and_markers():
    h = w = 20
    ivc = np.zeros((h, w))
    faz_gt = np.zeros((h, w), bool)
    faz_gt[8:12, 8:12] = True
    faz_pred = np.zeros((h, w), bool)
    faz_pred[8:12, 10:14] = True
    im = render_overlay(ivc, np.zeros((h, w)), faz_pred, faz_gt, [Junction(3, 3, BIFURCATION), Junction(16, 16, CROSSING)], scale=1)
    a = np.asarray(im).astype(int)
    over, under = a[9, 13], a[9, 8]
    assert over[1] > over[0] and under[0] > under[1]
    assert not np.array_equal(over, under)
    colors = {tuple(c) for c in a.reshape(-1, 3)}
    assert BIFURCATION_COLOR in colors and CROSSING_COLOR in colors
