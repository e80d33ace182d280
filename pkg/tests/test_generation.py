import numpy as np
import pytest

from materialkit.errors import PreconditionError, RunError
from materialkit.generation import (MockGenerationBackend, generate_images, load_image, read_records,
                                   seed_for, write_records)
from materialkit.prompts import PromptTriplet, render_prompt

T = [PromptTriplet("vase", "ceramic", "porcelain", True),
     PromptTriplet("pan", "metal", "steel", True),
     PromptTriplet("bowl", "wood", "oak", True)]


class RecordingBackend:
    backend_id = "recording"
    deterministic = True
    thread_safe = False

    def __init__(self, fail_prompts=()):
        self.calls = []
        self.fail_prompts = fail_prompts

    def generate(self, prompt, seed, width, height):
        self.calls.append((prompt, seed))
        if any(f in prompt for f in self.fail_prompts):
            raise RuntimeError("boom")
        return np.full((height, width, 3), seed % 256, dtype=np.uint8)


def test_full_scale_record_count():
    # arithmetic of the 1x scale corpus
    assert len([(t, r) for t in range(2448) for r in range(5)]) == 12240


def test_single_record_matches_backend_output(tmp_path):
    backend = MockGenerationBackend(["ceramic"])
    (rec,) = generate_images(T[:1], 1, backend, 42, tmp_path, width=64, height=64)
    expected = backend.generate(rec.prompt_text, 42, 64, 64)
    assert np.array_equal(load_image(tmp_path / rec.image_path), expected)
    assert rec.seed == 42 and rec.prompt_text == render_prompt(T[0])
    assert (rec.width, rec.height) == (64, 64)


def test_seed_offsets_unique(tmp_path):
    backend = RecordingBackend()
    recs = generate_images(T, 2, backend, 7, tmp_path, width=16, height=16)
    assert len(recs) == 6
    enumerated = {(ti, r): 7 + ti * 2 + r for ti in range(3) for r in range(2)}
    assert len(set(enumerated.values())) == 6
    assert [r.seed for r in recs] == [enumerated[(ti, r)] for ti in range(3) for r in range(2)]
    assert [s for _, s in backend.calls] == [r.seed for r in recs]
    assert seed_for(7, 2, 1, 2) == 12


def test_failures_skipped_and_counted(tmp_path):
    recs = generate_images(T, 2, RecordingBackend(fail_prompts=("metal",)), 0, tmp_path, width=8, height=8)
    assert len(recs) == 4
    assert all(r.triplet.material != "metal" for r in recs)


def test_retry_then_success(tmp_path):
    class Flaky(RecordingBackend):
        def generate(self, prompt, seed, width, height):
            self.calls.append(seed)
            if self.calls.count(seed) == 1:
                raise RuntimeError("transient")
            return np.zeros((height, width, 3), np.uint8)
    assert len(generate_images(T[:1], 2, Flaky(), 0, tmp_path, width=8, height=8, retries=1)) == 2


def test_all_failures_is_run_error(tmp_path):
    with pytest.raises(RunError):
        generate_images(T, 1, RecordingBackend(fail_prompts=("a",)), 0, tmp_path, width=8, height=8)


def test_preconditions(tmp_path):
    with pytest.raises(PreconditionError):
        generate_images([PromptTriplet("a", "metal", "b")], 1, RecordingBackend(), 0, tmp_path)
    with pytest.raises(PreconditionError):
        generate_images(T, 0, RecordingBackend(), 0, tmp_path)
    with pytest.raises(PreconditionError):
        generate_images([], 1, RecordingBackend(), 0, tmp_path)


def test_rerun_is_byte_identical(tmp_path):
    backend = MockGenerationBackend(["ceramic", "metal", "wood"])
    a = generate_images(T, 2, backend, 3, tmp_path / "a", width=64, height=64, jobs=3)
    b = generate_images(T, 2, backend, 3, tmp_path / "b", width=64, height=64, jobs=1)
    assert a == b
    for r in a:
        assert (tmp_path / "a" / r.image_path).read_bytes() == (tmp_path / "b" / r.image_path).read_bytes()
    write_records(tmp_path / "a.jsonl", a)
    write_records(tmp_path / "b.jsonl", b)
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert read_records(tmp_path / "a.jsonl") == a


def test_mock_images_are_rgb_png(tmp_path):
    from PIL import Image
    (rec,) = generate_images(T[:1], 1, MockGenerationBackend(), 0, tmp_path, width=32, height=32)
    with Image.open(tmp_path / rec.image_path) as im:
        assert im.format == "PNG" and im.mode == "RGB"


def test_mock_object_region_follows_class():
    backend = MockGenerationBackend(["metal", "wood"])
    a = backend.generate("a photo of a steel metal pan", 0, 64, 64)[16:48, 16:48].mean(axis=(0, 1))
    b = backend.generate("a photo of a brass metal cup", 5, 64, 64)[16:48, 16:48].mean(axis=(0, 1))
    c = backend.generate("a photo of a oak wood cup", 5, 64, 64)[16:48, 16:48].mean(axis=(0, 1))
    assert np.abs(a - b).max() < np.abs(a - c).max()
