"""Smoke test for the nfseg extension module.

Build and install first:  maturin develop --release -m crates/python/Cargo.toml
"""

import sys
import tempfile
from pathlib import Path

import nfseg

SMALL = {"dims": [32, 128, 64], "spacing": [7.8, 1.25, 1.25]}


def check(cond, what):
    if not cond:
        sys.exit(f"FAIL: {what}")
    print(f"ok: {what}")


def main():
    tmp = Path(tempfile.mkdtemp(prefix="nfseg_smoke_"))

    a = nfseg.LabelVolume([4, 4, 4], [1.0, 1.0, 1.0], [1] * 32 + [0] * 32)
    b = nfseg.LabelVolume([4, 4, 4], [1.0, 1.0, 1.0], [1] * 16 + [0] * 48)
    m = nfseg.overlap_metrics(a, b)
    check(abs(m["dsc"] - 2 * 16 / 48) < 1e-12, "overlap metrics")
    labels, count = nfseg.label_components(a)
    check(count == 1 and labels.count_nonzero() == 32, "component labeling")

    w = nfseg.wilcoxon_signed_rank([1.0, 2.0, 3.0, 4.0, 5.0], [0.0, 0.0, 0.0, 0.0, 0.0])
    check(w["exact"] and abs(w["p_raw"] - 0.0625) < 1e-12, "exact wilcoxon")

    manifest = nfseg.simulate(str(tmp / "phantom"), dict(SMALL, seed=3))
    check(len(manifest["tumors"]) > 0, "phantom simulation")

    raw = nfseg.LabelVolume.read(str(tmp / "phantom" / "anatomy_raw.nii.gz"))
    refined, prior, partition, _ = nfseg.refine_anatomy(raw)
    check(partition == manifest["expected_partition"], "landmarks match construction")
    check(12 in prior.data, "high-risk zone present")

    members = [nfseg.ConfidenceVolume.read(str(p)) for p in sorted((tmp / "phantom" / "ensemble").glob("*.nii.gz"))]
    candidates, components = nfseg.extract_candidates(members, partition)
    image = nfseg.ImageVolume.read(str(tmp / "phantom" / "image.nii.gz"))
    first = nfseg.LabelVolume(components.dims, components.spacing, [int(v == candidates[0]["id"]) for v in components.data])
    features = nfseg.extract_features(first, image)
    check(sorted(features) == sorted(nfseg.feature_catalog()), "radiomics on a candidate")

    config = {
        "paths": {
            "image": str(tmp / "phantom" / "image.nii.gz"),
            "anatomy_raw": str(tmp / "phantom" / "anatomy_raw.nii.gz"),
            "ensemble_dir": str(tmp / "phantom" / "ensemble"),
            "gt": str(tmp / "phantom" / "gt_tumors.nii.gz"),
        },
    }
    (run,) = nfseg.run_pipeline(config, output_dir=str(tmp / "run"), classify=False)
    check(run["metrics"]["tp"] > 0, "pipeline run")

    bundle, selection = nfseg.train_classifier([str(tmp / "run" / "features.csv")], seed=1, n_trees=20)
    check(len(selection["selected_top_k"]) > 0 and bundle.regions, "classifier training")
    bundle.save(str(tmp / "model.json"))
    reloaded = nfseg.ClassifierBundle.load(str(tmp / "model.json"))
    r = reloaded.regions[0]
    row = {name: 0.0 for name in reloaded.feature_names(r)}
    check(reloaded.predict(r, row) == bundle.predict(r, row), "model round trip")

    try:
        nfseg.LabelVolume.read(str(tmp / "missing.nii.gz"))
        check(False, "missing file raises")
    except nfseg.DataError:
        check(True, "missing file raises DataError")

    print("smoke test passed")


if __name__ == "__main__":
    main()
