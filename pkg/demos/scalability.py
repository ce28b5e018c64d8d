"""Iteration counts under mesh refinement at fixed subdomain count.

Substructuring methods with a coarse space and Dirichlet preconditioning
are expected to degrade only logarithmically as each subdomain is refined.
Here a 3x3 decomposition is kept fixed while the element count per
subdomain edge doubles from 4 to 8 to 16; iteration counts should creep,
not jump.
"""

import pathlib

from ddlab import ExperimentConfig, run_experiment, write_history_csv

out = pathlib.Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

print(f"{'elems/edge':>10s} {'dofs':>7s} {'iters':>6s} "
      f"{'oracle error':>13s} {'seconds':>8s}")

records = []
for ratio in (4, 8, 16):
    cfg = ExperimentConfig(
        elements_per_axis=(3 * ratio,), subdomains_per_axis=(3,),
        projector="superlumped", preconditioner="dirichlet",
        stopping="interface", tol=1e-6, oracle_tol=1e-6,
        label=f"refine-{ratio}",
    )
    rec = run_experiment(cfg)
    records.append((ratio, rec))
    print(f"{ratio:10d} {rec.problem.n_global:7d} {rec.iterations:6d} "
          f"{rec.oracle_error:13.3e} {rec.wall_seconds:8.2f}")
    write_history_csv(out / f"scalability_{ratio}.csv", rec)

growth = [records[i + 1][1].iterations / records[i][1].iterations
          for i in range(len(records) - 1)]
print("\ngrowth per doubling: " + ", ".join(f"{g:.2f}" for g in growth))
print(f"histories written to {out}/scalability_*.csv")
