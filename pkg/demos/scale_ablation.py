"""Accuracy as a function of corpus size on the mock data.

Features are extracted once; each fraction draws a stratified subset, trains
a fresh head and scores a fixed held-out split.
"""
import tempfile
from pathlib import Path

import numpy as np

from materialkit import DatasetManifest, DenyList, EvalReport, MaterialTaxonomy, TrainConfig
from materialkit import filter_triplets, propose_triplets, scale_ablation
from materialkit.classifier import (Encoders, build_descriptor_bank, extract_features,
                                    predict_features, train_head)
from materialkit.dataset import build_test_split, train_remainder
from materialkit.encoders import MockTextEncoder, MockVisionEncoder
from materialkit.evaluation import scale_curve_csv
from materialkit.generation import MockGenerationBackend, generate_images
from materialkit.labeling import MockSegmentationBackend, label_records
from materialkit.prompts import FMD_CLASSES, MockCandidateGenerator

out = Path(tempfile.mkdtemp(prefix="materialkit-"))
taxonomy = MaterialTaxonomy.subset(FMD_CLASSES)
triplets = filter_triplets(propose_triplets(taxonomy, 4, MockCandidateGenerator()), DenyList())
records = generate_images(triplets, 3, MockGenerationBackend(taxonomy.classes), 0, out, width=96, height=96)
samples, _ = label_records(records, MockSegmentationBackend(), out)
corpus = DatasetManifest(taxonomy, samples, root=out)
test = build_test_split(corpus, 2, seed=0)
pool = train_remainder(corpus, test)

encoders = Encoders(MockVisionEncoder(), MockTextEncoder())
bank = build_descriptor_bank(taxonomy, encoders.text)
feats = dict(zip(corpus.ids, extract_features(corpus, encoders)))
labels = dict(zip(corpus.ids, corpus.labels()))
cfg = TrainConfig(epochs=10, learning_rate=1e-3, batch_size=16)


def trainer(subset):
    x = np.stack([feats[i] for i in subset.ids])
    y = np.array([labels[i] for i in subset.ids])
    return train_head(x, y, bank.embeddings, cfg).head


def evaluator(head):
    preds, _ = predict_features(head, np.stack([feats[i] for i in test.ids]), bank)
    return EvalReport.from_predictions(preds, [labels[i] for i in test.ids], list(taxonomy.classes), "ours")


points = scale_ablation(pool, [0.2, 0.4, 0.6, 0.8, 1.0], trainer, evaluator, seed=0)
print(scale_curve_csv(points))
