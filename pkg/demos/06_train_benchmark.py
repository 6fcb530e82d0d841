"""Train the full hierarchical objective against the single-level
baseline on the frozen desk-scale benchmark (one seed; the acceptance
suite averages five).

Takes a few minutes on one CPU. Pass --quick for a shortened run that
shows the mechanics without the final accuracy.
"""

import sys

from seal.benchmark import BENCHMARK_EPOCHS, benchmark_dataset, run_arm

quick = "--quick" in sys.argv
epochs = 25 if quick else BENCHMARK_EPOCHS

spec, dataset, split = benchmark_dataset()
print(f"dataset: {len(dataset)} samples, counts {spec.counts}, "
      f"{len(split.old_classes)} known fine classes")

results = {}
for arm in ("baseline", "seal"):
    final, record = run_arm(arm, seed=0, epochs=epochs)
    results[arm] = final
    print(f"\n[{arm}] {epochs} epochs in {record.wall_clock:.0f}s")
    print(f"  unlabelled ACC  all={final['all']:.3f}  old={final['old']:.3f}  "
          f"new={final['new']:.3f}")
    if final["consistency"]:
        rates = ", ".join(f"level {h}: {r:.2f}" for h, r in sorted(final["consistency"].items()))
        print(f"  fine-coarse consistency  {rates}")

gap = results["seal"]["all"] - results["baseline"]["all"]
print(f"\nhierarchical objective vs single-level baseline: "
      f"{results['seal']['all']:.3f} vs {results['baseline']['all']:.3f} "
      f"({gap:+.3f} absolute)")
if quick:
    print("(quick mode: accuracies are not converged)")
