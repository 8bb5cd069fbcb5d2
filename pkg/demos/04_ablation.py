"""cycle vs. seg vs. seg_sm on the ambiguous toy world.

Run from the repository root:  python3 demos/04_ablation.py [n_seeds]
The full three-seed table takes about 20 minutes on one CPU core. Finished
runs are reused, so the script can be interrupted and restarted.
"""
import logging
import sys
from pathlib import Path

from semgan import ablation
from semgan.config import TrainConfig
from semgan.toyworld import ToyWorldCfg, generate_toy_domains

logging.basicConfig(level=logging.INFO, format="%(message)s")
n_seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 3

out = Path("demo_out/ablation")
data = out / "data"
if not (data / "manifest.json").exists():
    generate_toy_domains(ToyWorldCfg(image_size=32, counts=(48, 8, 32), ambiguity=True), data, force=True)

base = TrainConfig.from_file("configs/ablation_desk.cfg").replace(data_root=str(data))
results = ablation.run_ablation(base, out / "runs", ablation.VARIANTS, range(n_seeds))
rows = ablation.summarize(results)
print(ablation.format_table(rows))
print("seg_sm >= seg >= cycle in both directions:", ablation.ordering_holds(rows))
