"""Fill the result cache with every desk-profile row the acceptance suite reads.

Rows run one at a time in a fixed priority order and land in
``results/cache`` (override with ``VTSS_CACHE_DIR``).  Already cached rows
are skipped, so the script can be interrupted and restarted.

    VTSS_DATA_DIR=/path/to/data python scripts/run_desk.py
"""

import logging
import os
import sys
import time

from vtss.experiments import ExperimentConfig, random_feature_row, vtss_row

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def main():
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    cache = os.environ.get("VTSS_CACHE_DIR", os.path.join(ROOT, "results", "cache"))
    cfg = ExperimentConfig(name="desk", profile="desk", dataset="fmnist", task="rotation",
                           cache_dir=cache)
    inj = [[], ["rot:90"], ["rot:90", "rot:180"], ["rot:90", "rot:180", "rot:270"]]
    jobs = [
        ("exp1 run1", lambda: vtss_row(cfg, "exp1", "run1", injection=inj[0])),
        ("random control", lambda: random_feature_row(cfg)),
        ("exp1 run4", lambda: vtss_row(cfg, "exp1", "run4", injection=inj[3])),
        ("exp2 R", lambda: vtss_row(cfg, "exp2", "R", "rot", 5)),
        ("exp2 T", lambda: vtss_row(cfg, "exp2", "T", "trans", 5)),
        ("exp2 R+T", lambda: vtss_row(cfg, "exp2", "R+T", "rot+trans", 5)),
        ("exp1 run2", lambda: vtss_row(cfg, "exp1", "run2", injection=inj[1])),
        ("exp1 run3", lambda: vtss_row(cfg, "exp1", "run3", injection=inj[2])),
    ]
    only = set(sys.argv[1:])
    for name, job in jobs:
        if only and name not in only:
            continue
        start = time.time()
        rec = job()
        print(f"{name}: pretext={rec.pretext_acc:.2f} C={rec.semisup_acc:.2f} "
              f"({time.time() - start:.0f}s) {rec.fingerprint}", flush=True)


if __name__ == "__main__":
    main()
