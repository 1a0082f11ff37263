# The five-variant ablation, at desk scale.
#
#   full          shared + task subspaces, gate, null-space projection
#   shared_only   single shared subspace, projection kept
#   no_nullspace  shared + task subspaces, gate, projection off
#   subspace_only single shared subspace, projection off
#   dense_joint   plain dense Adam on the summed gradient
#
# A reduced configuration keeps this to roughly a minute; the acceptance
# suite runs the bigger benchmark with 3 seeds per variant.

import gems

config = gems.RunConfig(
    seed=0, steps=150, users=32, items=110, interactions_per_user=10,
    d_model=24, rank=4, refresh_every=25, gen_pairs=16, batch_size=8,
    favorite_prob=0.8, lr=2e-3,
)

report = gems.run_ablation(config, seeds=[0, 1])
print("variant        median hit@5   median applied-rho")
for variant, row in report["variants"].items():
    rho = row["median_applied_rho"]
    print("%-13s  %12.3f   %18s"
          % (variant, row["median_hit5"],
             "-" if rho != rho else "%.4f" % rho))

checks = report["checks"]
print("\nfull >= shared_only on hit@5:", checks["full_vs_shared_only_hit5"])
print("applied-conflict reduction vs dense joint: %.1f%%"
      % (100.0 * checks["conflict_reduction"]))
