"""Full permuted-image benchmark: 10 tasks on real MNIST via IDX files.

Needs the four classic IDX files (not bundled, not downloaded):
  train-images-idx3-ubyte  train-labels-idx1-ubyte
  t10k-images-idx3-ubyte   t10k-labels-idx1-ubyte

Usage: python demos/07_pmnist.py /path/to/mnist_dir [method]

Equivalent CLI invocation:
  trgp run --config configs/pmnist.cfg --method trgp,gpm --seed 0
"""

import sys
import time
from pathlib import Path

from trgp import RunConfig, StreamConfig, TrainerConfig, run_experiment

if len(sys.argv) < 2:
    print(__doc__)
    sys.exit(0)

root = Path(sys.argv[1])
method = sys.argv[2] if len(sys.argv) > 2 else "trgp"
paths = {
    "train_images": str(root / "train-images-idx3-ubyte"),
    "train_labels": str(root / "train-labels-idx1-ubyte"),
    "test_images": str(root / "t10k-images-idx3-ubyte"),
    "test_labels": str(root / "t10k-labels-idx1-ubyte"),
}

rc = RunConfig(
    trainer=TrainerConfig(method=method, epochs=5, batch_size=10, lr=0.01,
                          epsilon_l=0.5, top_k=2, eps_th=0.97,
                          rep_samples=300, head="single", seed=0),
    stream=StreamConfig(kind="permuted_mnist", num_tasks=10,
                        train_limit=10000, **paths),
    hidden=(100, 100),
    out_dir=f"runs/pmnist/{method}_seed0")

start = time.monotonic()
matrix, report, out = run_experiment(rc)
elapsed = (time.monotonic() - start) / 60

print(f"\n{method}: ACC {100 * report.acc:.2f}%  BWT {100 * report.bwt:+.2f}pp "
      f"({elapsed:.1f} min)")
print("per-task final:", ", ".join(f"{100 * v:.1f}" for v in report.per_task_final))
print("artifacts:", out)
