"""Build a small labeled corpus with the mock backends.

Proposes (object, material, qualifier) triplets, drops implausible pairs,
renders each prompt a few times, segments the object noun and keeps the
regions that pass the area threshold.

    python demos/build_mock_corpus.py [out_dir]
"""
import sys
import tempfile
from pathlib import Path

from materialkit import (DenyList, DatasetManifest, MaterialTaxonomy, class_stats, filter_triplets,
                         generate_images, propose_triplets)
from materialkit.generation import MockGenerationBackend
from materialkit.labeling import MockSegmentationBackend, label_records
from materialkit.prompts import MockCandidateGenerator

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="materialkit-"))
taxonomy = MaterialTaxonomy.subset(["metal", "wood", "glass", "fabric"])

candidates = propose_triplets(taxonomy, objects_per_class=3, generator=MockCandidateGenerator())
print(f"{len(candidates)} candidates, e.g. {candidates[0]}")

# nobody makes a sponge out of metal
deny = DenyList([("sponge", "metal")])
triplets = filter_triplets(candidates, deny)

records = generate_images(triplets, images_per_prompt=4, backend=MockGenerationBackend(taxonomy.classes),
                          base_seed=0, out_dir=out, width=128, height=128)
print(f"rendered {len(records)} images; first prompt: {records[0].prompt_text!r}")

samples, rejected = label_records(records, MockSegmentationBackend(), out)
manifest = DatasetManifest(taxonomy, samples, root=out)
manifest.save(out / "manifest.jsonl")
print(f"kept {len(samples)}, rejected {len(rejected)}")
for cls, n in class_stats(manifest).counts.items():
    print(f"  {cls:8s} {n}")
print(f"manifest -> {out / 'manifest.jsonl'}")
