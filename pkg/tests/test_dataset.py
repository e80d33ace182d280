import json
import threading
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from materialkit.dataset import (DatasetManifest, ManifestWriter, build_test_split, class_stats,
                                 import_external, round_half_up, sample_subset, train_remainder,
                                 validate_manifest_file, with_splits)
from materialkit.errors import ConflictError, InsufficientDataError, LabelMappingError, PreconditionError
from materialkit.labeling import MaskedSample
from materialkit.prompts import MaterialTaxonomy

TAX = MaterialTaxonomy(("metal", "wood", "glass"))


def sample(i, material="metal", split="none"):
    return MaskedSample(f"s{i:05d}", f"images/{i}.png", f"masks/{i}.png", material,
                        object="cup", qualifier="plain", prompt="a photo", backend_id="mock",
                        seed=i, split=split)


def manifest_with(counts, tax=TAX):
    entries, i = [], 0
    for cls, n in counts.items():
        for _ in range(n):
            entries.append(sample(i, cls))
            i += 1
    return DatasetManifest(tax, entries)


def test_append_adds_one_and_rejects_duplicate():
    m = manifest_with({"metal": 2})
    m.append(sample(99, "wood"))
    assert len(m) == 3 and "s00099" in m
    with pytest.raises(ConflictError):
        m.append(sample(99, "glass"))
    assert len(m) == 3


def test_append_rejects_unknown_label():
    with pytest.raises(PreconditionError):
        DatasetManifest(TAX).append(sample(0, "fur"))


def test_save_load_round_trip(tmp_path):
    m = manifest_with({"metal": 2, "wood": 1})
    m.save(tmp_path / "m.jsonl")
    assert validate_manifest_file(tmp_path / "m.jsonl") == 3
    again = DatasetManifest.load(tmp_path / "m.jsonl", TAX)
    assert again.entries == m.entries
    line = json.loads((tmp_path / "m.jsonl").read_text().splitlines()[0])
    assert set(line) == {"id", "image_path", "mask_path", "object", "material", "qualifier",
                         "prompt", "backend_id", "seed", "source", "split"}


def test_schema_rejects_extra_field(tmp_path):
    m = manifest_with({"metal": 1})
    m.save(tmp_path / "m.jsonl")
    d = json.loads((tmp_path / "m.jsonl").read_text())
    d["extra"] = 1
    (tmp_path / "m.jsonl").write_text(json.dumps(d) + "\n")
    with pytest.raises(Exception):
        validate_manifest_file(tmp_path / "m.jsonl")


def test_concurrent_writer_keeps_every_sample(tmp_path):
    m = DatasetManifest(TAX)
    path = tmp_path / "m.jsonl"
    writer = ManifestWriter(m, path)

    def work(k):
        for i in range(k, 1000, 4):
            writer.submit(sample(i, TAX.classes[i % 3]))

    threads = [threading.Thread(target=work, args=(k,)) for k in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    writer.close()
    assert len(m) == 1000 and len(set(m.ids)) == 1000
    assert validate_manifest_file(path) == 1000
    assert sorted(DatasetManifest.load(path, TAX).ids) == sorted(m.ids)


def test_writer_reports_conflict():
    w = ManifestWriter(DatasetManifest(TAX))
    w.submit(sample(1))
    w.submit(sample(1))
    with pytest.raises(ConflictError):
        w.close()


def test_stats_sum_to_total():
    st_ = class_stats(manifest_with({"metal": 3, "glass": 5}))
    assert st_.counts == {"metal": 3, "wood": 0, "glass": 5} and st_.total == 8


def test_published_class_counts():
    # per-class counts of the released corpus
    counts = {"fabric": 1345, "foliage": 1000, "glass": 860, "leather": 875, "metal": 2330,
              "paper": 1000, "plastic": 2060, "stone": 730, "water": 1020, "wood": 1025,
              "rubber": 645, "ceramic": 740, "sponge": 725, "bone": 965, "cardboard": 1000,
              "concrete": 955, "fur": 620, "gemstone": 615, "soil": 985, "wax": 980,
              "wicker": 1000}
    assert len(counts) == 21 and min(counts.values()) == 615
    tax = MaterialTaxonomy.default()
    entries, i = [], 0
    for cls, n in counts.items():
        entries.extend(sample(i + j, cls) for j in range(n))
        i += n
    m = DatasetManifest(tax, entries)
    stats = class_stats(m)
    assert stats.counts["fabric"] == 1345 and stats.counts["wicker"] == 1000
    assert stats.total == sum(counts.values()) == 21475
    test = build_test_split(m, 50, seed=0)
    assert len(test) == 21 * 50 == 1050
    assert len(build_test_split(m, 30, seed=0)) == 630


def test_round_half_up():
    assert [round_half_up(Fraction(n, 2)) for n in range(6)] == [0, 1, 1, 2, 2, 3]
    assert round_half_up(Fraction("0.2") * 1345) == 269


def test_fraction_subset_sizes():
    m = manifest_with({"metal": 10, "wood": 5, "glass": 3})
    sub = sample_subset(m, fraction=0.5, seed=3)
    assert class_stats(sub).counts == {"metal": 5, "wood": 3, "glass": 2}
    assert set(sub.ids) <= set(m.ids)


def test_insufficient_class_named():
    m = manifest_with({"metal": 10, "wood": 5, "glass": 3})
    with pytest.raises(InsufficientDataError) as info:
        build_test_split(m, 4, seed=0)
    assert info.value.class_name == "glass"


def test_split_disjoint_and_reproducible():
    m = manifest_with({"metal": 10, "wood": 8, "glass": 6})
    test = build_test_split(m, 3, seed=5)
    assert test.ids == build_test_split(m, 3, seed=5).ids
    train = train_remainder(m, test)
    assert not set(train.ids) & set(test.ids)
    assert len(train) + len(test) == len(m)
    full = with_splits(m, test)
    assert len(full.by_split("test")) == 9 and len(full.by_split("train")) == 15


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 12), min_size=3, max_size=3), st.floats(0.05, 1.0), st.integers(0, 99))
def test_subset_is_stratified(counts, fraction, seed):
    m = manifest_with(dict(zip(TAX.classes, counts)))
    sub = sample_subset(m, fraction=fraction, seed=seed)
    f = Fraction(str(fraction))
    for cls, n in zip(TAX.classes, counts):
        assert class_stats(sub).counts[cls] == round_half_up(f * n)
    assert len(set(sub.ids)) == len(sub)
    assert sub.ids == sample_subset(m, fraction=fraction, seed=seed).ids


def test_import_maps_labels():
    got = import_external([("a.png", "a_m.png", "Wood"), ("b.png", "b_m.png", "steel")], "fmd", TAX,
                          {"steel": "metal"})
    assert [s.material for s in got] == ["wood", "metal"]
    assert all(s.source == "imported" and s.id.startswith("fmd-") for s in got)


def test_import_lists_every_offender():
    with pytest.raises(LabelMappingError) as info:
        import_external([("a", "b", "lava"), ("c", "d", "wood"), ("e", "f", "ash")], "x", TAX)
    assert info.value.offenders == ["ash", "lava"]
