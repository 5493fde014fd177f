"""Export a static explorer bundle from a dataset.

Writes one grayscale PNG per slice plus a manifest.json that the web
explorer (frontend/) consumes. Point any static file server at the bundle
directory together with the frontend's index.html and dist/ output.
"""

import json
import tempfile
from pathlib import Path

from kneemri import export_explorer, generate_synthetic, scan_dataset

work = Path(tempfile.mkdtemp(prefix="kneemri-bundle-"))
data = work / "data"
generate_synthetic(12, seed=10, out=data, height=32, width=32,
                   valid_fraction=0.25)

manifest = scan_dataset(data, "valid")
bundle = work / "bundle"
doc = export_explorer(manifest, bundle)

print("exported", len(doc["cases"]), "cases to", bundle)
case = doc["cases"][0]
print("first case:", case["id"], "labels:", case["labels"])
for plane, info in case["planes"].items():
    print(f"    {plane:9s} {info['count']:3d} slices, first file {info['files'][0]}")

pngs = sum(1 for _ in bundle.rglob("*.png"))
print("total PNG files:", pngs)
print("\nmanifest.json head:")
print(json.dumps(doc["cases"][0]["planes"]["axial"]["files"][:3], indent=2))
print("\nview it: copy frontend/index.html and frontend/dist/ into", bundle,
      "and serve that directory")
