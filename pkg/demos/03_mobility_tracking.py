"""
Keeping a walking user on the beam
==================================

The UE walks 60 -> 20 -> 60 degrees around the surface. Three controllers
are compared over the same noisy measurements:

* none     - sweep once to attach, then leave the surface alone
* neighbor - probe the adjacent codewords every few reports
* trend    - probe only when the recent RSRP shows a falling trend
"""

import numpy as np

from risoran.harness import detach_count, run_mobility, scenario_codebook, summarize, xapp_config_for
from risoran.scenario import load_scenario

sc = load_scenario("outdoor", "sweep_return")
codebook = scenario_codebook(sc, 2)

for algorithm in ("none", "neighbor", "trend"):
    trace = run_mobility(sc, xapp_config_for(sc, codebook, algorithm=algorithm), codebook=codebook)
    s = summarize(trace)
    attached = trace.attached
    print(f"{algorithm:8s}  reports {len(trace)}  detaches {detach_count(trace)}  "
          f"attached {100 * attached.mean():5.1f}%  RIS commands {s['commands']['RIS']:5d}  "
          f"mean RSRP {np.mean(trace.column('rsrp_dbm')):6.1f} dBm")

# the trace is a plain table: show every 400th row of the last run
print("\n  t [s]  azimuth  codeword  optimum  RSRP")
for row in trace.rows[::400]:
    print(f"{row.timestamp_ms / 1000:7.1f}  {row.true_azimuth_deg:7.1f}  {row.tracked_ris_index:8d}  "
          f"{row.optimal_ris_index:7d}  {row.rsrp_dbm:6.1f}")
