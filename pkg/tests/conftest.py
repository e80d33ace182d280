import numpy as np
import pytest

from materialkit.classifier import Encoders
from materialkit.dataset import DatasetManifest
from materialkit.encoders import MockDescriptorGenerator, MockTextEncoder, MockVisionEncoder
from materialkit.generation import MockGenerationBackend, generate_images
from materialkit.labeling import MockSegmentationBackend, label_records
from materialkit.prompts import (FMD_CLASSES, DenyList, MaterialTaxonomy, MockCandidateGenerator,
                                 filter_triplets, propose_triplets)


@pytest.fixture
def taxonomy():
    return MaterialTaxonomy.default()


@pytest.fixture
def fmd_taxonomy():
    return MaterialTaxonomy.subset(FMD_CLASSES)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_corpus(root, taxonomy, objects_per_class=2, images_per_prompt=2, seed=0):
    trips = filter_triplets(propose_triplets(taxonomy, objects_per_class, MockCandidateGenerator()),
                            DenyList())
    records = generate_images(trips, images_per_prompt, MockGenerationBackend(taxonomy.classes),
                              seed, root, width=128, height=128)
    samples, _ = label_records(records, MockSegmentationBackend(), root)
    return DatasetManifest(taxonomy, samples, root=root)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """4 classes x 2 prompts x 3 images at 128 px."""
    tax = MaterialTaxonomy.subset(("metal", "wood", "glass", "fabric"))
    root = tmp_path_factory.mktemp("corpus")
    return make_corpus(root, tax, 2, 3)


@pytest.fixture
def mock_encoders():
    return Encoders(MockVisionEncoder(), MockTextEncoder(), MockDescriptorGenerator())
