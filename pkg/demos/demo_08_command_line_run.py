"""
End-to-end run from the command line
====================================

The same pipeline is available as ``raredetect run``; here it is driven
through :func:`raredetect.cli.main` on a freshly generated dataset. The
output directory holds every artifact plus a manifest with checksums.
"""

import json
import tempfile
from pathlib import Path

from raredetect import SynthSpec, generate
from raredetect.cli import main

root = Path(tempfile.mkdtemp())
generate(SynthSpec(P=30, n_frequent=4, n_rare=2, frequent_samples=120, rare_samples=10)).write(root / "data")

config = {"M": 4, "n_pca": 20, "tsne_iterations": 500}
(root / "config.json").write_text(json.dumps(config))
code = main([
    "run", "--config", str(root / "config.json"),
    "--features", str(root / "data" / "features.csv"),
    "--labels", str(root / "data" / "labels.csv"),
    "--out", str(root / "run"), "--log-level", "WARNING",
])
print("exit code:", code)

manifest = json.loads((root / "run" / "manifest.json").read_text())
print("average AUC:", manifest["average_auc"], "rare:", manifest["average_auc_rare"])
for name in sorted(manifest["artifacts"]):
    print("  ", name)
