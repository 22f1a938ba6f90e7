"""Is one forecast significantly better than another?

Two forecasts of the same synthetic data are compared cell by cell
(plant and observation time).  Block bootstrap intervals show the
uncertainty of each mean score, and one-sided Diebold-Mariano tests with a
Benjamini-Hochberg correction count in how many cells one method wins.

Run with ``python3 demos/compare_methods.py``; it takes a few seconds.
"""

import numpy as np

from pvpost.dataset import SynthConfig, daytime_filter, synth_generate
from pvpost.inference import block_bootstrap_ci, cell_series, dm_matrix
from pvpost.pipeline import raw_ensemble_quantiles
from pvpost.report import format_minutes
from pvpost.scoring import crps_ensemble

data = daytime_filter(synth_generate(SynthConfig(days=200, bias=0.05, deflation=0.7), seed=3))
raw = raw_ensemble_quantiles(data)
# a crude correction: remove the known bias and widen around the median
median = np.median(raw, axis=1, keepdims=True)
fixed = np.clip(median - 0.05 + 1.4 * (raw - median), 0, 1)

scores = {"raw": crps_ensemble(raw, data.obs), "fixed": crps_ensemble(fixed, data.obs)}
minutes = data.time_of_day

print("95% intervals of mean CRPS at three observation times")
for t in (480, 720, 960):
    sel = minutes == t
    for name, s in scores.items():
        ci = block_bootstrap_ci(s[sel], seed=t)
        print(f"  {format_minutes(t)} {name:5s} {ci.mean:.4f} [{ci.lo:.4f}, {ci.hi:.4f}]")

cells = {n: cell_series(s, data.plant_ids, minutes, n) for n, s in scores.items()}
dm = dm_matrix(cells)
print("\nshare of cells where the row method is significantly better")
print("         " + " ".join(f"{m:>6s}" for m in dm.methods))
for i, m in enumerate(dm.methods):
    print(f"  {m:6s} " + " ".join(f"{v:6.2f}" for v in dm.proportion[i]))
print(f"({dm.n_tests[0, 1]} tests per ordered pair)")
