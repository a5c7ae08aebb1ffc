"""Forward pass, voting gates and the fusion modes.

Run: python demos/02_network_and_fusion.py
"""
import torch

from vaffnet.network import EncoderConfig, VAFFNet, count_parameters, fuse, independent_encoder_parameter_count, triplet_tensor
from vaffnet.phantom import PhantomConfig, generate_phantom

torch.manual_seed(0)
sample = generate_phantom(PhantomConfig(image_size=(128, 128), rng_seed=1))
x = triplet_tensor([sample.triplet])

# reduced encoder for a quick CPU look; "resnet50" is the default topology
net = VAFFNet(EncoderConfig(topology="reduced", n_ch=16)).eval()
with torch.no_grad():
    out = net(x)
print("rv", tuple(out.rv_prob.shape), "heatmap", tuple(out.rvj_heatmap.shape), "grid", tuple(out.rvj_grid.shape))

# each task has its own gate; channel i weighs encoder i (ivc, svc, dvc)
for task, gate in out.gates.items():
    print(f"{task} gate mean per encoder:", [round(float(g), 3) for g in gate.mean(dim=(0, 2, 3))])

# constant gates turn the weighted sum into SUM and AVG
with torch.no_grad():
    feats, _ = net.encode(x)
ones = torch.ones(1, 3, 128, 128)
print("gate 1   == sum:", torch.allclose(fuse(ones, feats), fuse(None, feats, "sum")))
print("gate 1/3 == avg:", torch.allclose(fuse(ones / 3, feats), fuse(None, feats, "avg")))

# the three encoders share everything but their first block
cfg = EncoderConfig(topology="resnet50")
full = VAFFNet(cfg)
shared = sum(count_parameters(b) for b in full.first_blocks) + count_parameters(full.encoder)
print(f"encoder params shared {shared / 1e6:.1f}M vs independent {independent_encoder_parameter_count(cfg) / 1e6:.1f}M")
with torch.no_grad():
    grid = full.eval()(torch.rand(1, 3, 304, 304)).rvj_grid
print("304 x 304 input -> grid", tuple(grid.shape[1:]))
