"""Candidate detection, proximity fusion and FROC scoring on synthetic phantoms.

Run with ``python3 demos/segment_phantom.py``. The proximity map here is built
from the phantom's own annotations, so it stands in for a perfectly trained
regressor; swap in ``predict_full`` to score a real model.
"""

import numpy as np

from hdogreg import (
    PhantomSpec,
    ScoredImage,
    detection_table,
    froc_from_table,
    generate,
    hdog_segment,
    label_components,
    operating_point,
    pauc_bootstrap,
    proximity_map,
)
from hdogreg.combiner import combine
from hdogreg.metrics import iou_per_object, match_objects


def main():
    spec = PhantomSpec(height=512, width=512, n_blobs=40)
    images = []
    for seed in range(5):
        ph = generate(spec, seed=seed)
        cand, blobs = hdog_segment(ph.image)
        prox = proximity_map(ph.annotations)
        print(f"phantom {seed}: {ph.n_objects} objects, {len(blobs)} blobs, {label_components(cand)[1]} candidates")
        images.append(ScoredImage(label_components(cand)[0], prox, ph.truth_labels, spec.pixel_spacing_mm))

    table = detection_table(images)
    curve = froc_from_table(table)
    op = operating_point(curve)
    boot = pauc_bootstrap(table, samples=100, seed=0)
    print(f"operating point: p_thr={op.p_thr:.2f} TPR={op.tpr:.3f} FP/cm2={op.fp_per_cm2:.3f}")
    print(f"pAUC {boot.pauc_mean:.3f} [{boot.pauc_low95:.3f}, {boot.pauc_high95:.3f}]")

    ious = []
    for img in images:
        final, _ = label_components(combine(img.candidates, img.proximity >= op.p_thr, 0.3))
        m = match_objects(final, img.reference)
        ious += iou_per_object(final, img.reference)[1]
        print(f"  TP {m.tp} FP {m.fp} FN {m.fn}")
    print(f"mean IoU per object {np.mean(ious):.3f}")


if __name__ == "__main__":
    main()
