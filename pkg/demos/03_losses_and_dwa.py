"""Task losses and Dynamic Weight Average.

Run: python demos/03_losses_and_dwa.py
"""
import torch

from vaffnet.losses import DwaState, GridLossParams, TaskLossVector, bce_loss, dwa_update, grid_loss, total_loss

t = lambda v: torch.tensor(v, dtype=torch.float64)

print("bce(0.9 vs 1) =", float(bce_loss(t([0.9]), t([1.0]))))

# one occupied cell: confidence error weighted by 5, class error added
occupied = float(grid_loss(t([[[0.5, 0.6, 0.3, 0.1]]]), t([[[1.0, 1.0, 0.0, 0.0]]])))
empty = float(grid_loss(t([[[0.2, 0.0, 0.0, 1.0]]]), t([[[0.0, 0.0, 0.0, 1.0]]])))
print(f"grid loss occupied cell {occupied:.4f}, empty cell {empty:.4f}")

# the class term can be limited to occupied cells
pred, target = t([[[0.2, 0.5, 0.0, 0.5]]]), t([[[0.0, 0.0, 0.0, 1.0]]])
for term in ("all", "object"):
    print(f"class term over {term!r} cells:", float(grid_loss(pred, target, GridLossParams(class_term=term))))

# DWA: uniform for two epochs, then tasks whose loss falls slowly get more weight
state = DwaState()
history = [(0.70, 0.70, 40.0), (0.50, 0.60, 30.0), (0.30, 0.58, 20.0), (0.20, 0.57, 15.0)]
for epoch, losses in enumerate(history):
    print(f"epoch {epoch}: weights {[round(w, 3) for w in state.weights]}")
    state = dwa_update(state, losses)
print("next:", [round(w, 3) for w in state.weights], "sum", sum(state.weights))

v = TaskLossVector(0.2, 0.57, 0.01, 14.99)
print("weighted total:", total_loss(v, state))
