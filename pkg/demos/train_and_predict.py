"""Train the classifier head on a mock corpus and classify one region.

Features are frozen: the vision stream max-pools patch features inside the
mask, the language stream contributes one descriptor embedding per class.
"""
import tempfile
from pathlib import Path

import numpy as np

from materialkit import Encoders, MaterialTaxonomy, TrainConfig, predict, train
from materialkit.classifier import build_descriptor_bank, load_checkpoint, load_pair, save_checkpoint
from materialkit.dataset import build_test_split, train_remainder
from materialkit.encoders import MockTextEncoder, MockVisionEncoder
from materialkit.generation import MockGenerationBackend, generate_images
from materialkit.labeling import MockSegmentationBackend, label_records
from materialkit import DatasetManifest, DenyList, filter_triplets, propose_triplets
from materialkit.prompts import MockCandidateGenerator

out = Path(tempfile.mkdtemp(prefix="materialkit-"))
taxonomy = MaterialTaxonomy.subset(["metal", "wood", "glass", "fabric", "stone"])
triplets = filter_triplets(propose_triplets(taxonomy, 3, MockCandidateGenerator()), DenyList())
records = generate_images(triplets, 4, MockGenerationBackend(taxonomy.classes), 0, out, width=128, height=128)
samples, _ = label_records(records, MockSegmentationBackend(), out)
corpus = DatasetManifest(taxonomy, samples, root=out)

test = build_test_split(corpus, per_class=2, seed=0)
train_set = train_remainder(corpus, test)

encoders = Encoders(MockVisionEncoder(), MockTextEncoder())
bank = build_descriptor_bank(taxonomy, encoders.text)
print("class descriptor:", bank.texts[0])

cfg = TrainConfig(epochs=20, learning_rate=1e-3, batch_size=16)
result = train(train_set, bank, encoders, cfg)
for entry in result.log[::5]:
    print(f"epoch {entry['epoch']:2d}  loss {entry['loss']:.3f}  acc {entry['train_accuracy']:.2f}")

save_checkpoint(out / "head.zip", result.head, taxonomy, encoders, bank, cfg, result.log)
ckpt = load_checkpoint(out / "head.zip")

hits = 0
for sample in test:
    image, mask = load_pair(test, sample)
    k, scores = predict(image, mask, ckpt.head, ckpt.bank, encoders)
    hits += taxonomy.classes[k] == sample.material
print(f"held-out: {hits}/{len(test)} correct")
print("scores for the last region:", np.round(scores, 3))
