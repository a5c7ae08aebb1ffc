"""Train the reduced model on four phantoms and score it on the training set.

Takes a few minutes on a laptop CPU.
Run: python demos/05_desk_training.py [out_dir]
"""
import sys
import time

from vaffnet.metrics import format_table, summarize
from vaffnet.phantom import PhantomConfig, generate_phantom
from vaffnet.training import TrainConfig, evaluate_model, load_model, read_log, train

out = sys.argv[1] if len(sys.argv) > 1 else "runs/desk_demo"
samples = [generate_phantom(PhantomConfig(image_size=(128, 128), rng_seed=s), sample_id=f"s{s}") for s in range(4)]
print("junctions per sample:", [len(s.annotations.junctions) for s in samples])

cfg = TrainConfig(
    epochs=300,
    lr_initial=2e-3,
    topology="reduced",
    n_ch=32,
    gate_hidden=16,
    augment=False,
    checkpoint_dir=out,
)
t0 = time.time()
last = train(cfg, samples=samples)
print(f"trained in {time.time() - t0:.0f}s -> {last}")

log = read_log(f"{out}/train_log.jsonl")
for rec in log[::50] + log[-1:]:
    print(rec["epoch"], f"lr {rec['lr']:.2e}", {k: round(v, 4) for k, v in rec["losses"].items()})

model, _ = load_model(last)
print(format_table({"train": summarize(evaluate_model(model, samples))}, title="Split"))
