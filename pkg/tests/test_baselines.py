import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from materialkit.baselines import (VLM_PROMPT, MockJointEmbedder, cosine_nearest, match_class_in_response,
                                   retrieval_classify, run_vlm_baseline, vlm_prompt_classify,
                                   zeroshot_nn_classify)
from materialkit.errors import NumericError, PreconditionError


class TableEmbedder:
    """Looks up fixed vectors: images by their first pixel value, texts by name."""

    adapter_id = "table"

    def __init__(self, images, texts):
        self.images, self.texts = images, texts
        self.dim = len(next(iter(texts.values())))

    def embed_image(self, image):
        return np.asarray(self.images[int(image.flat[0])], dtype=float)

    def embed_text(self, text):
        return np.asarray(self.texts[text], dtype=float)


def img(key):
    return np.full((2, 2, 3), key, dtype=np.uint8)


def unit(deg):
    return [math.cos(math.radians(deg)), math.sin(math.radians(deg))]


def test_self_match_and_scale_invariance():
    texts = {"metal": unit(0), "wood": unit(100), "glass": unit(200)}
    emb = TableEmbedder({1: unit(200), 2: [5 * c for c in unit(200)]}, texts)
    assert zeroshot_nn_classify(img(1), list(texts), emb) == 2
    assert zeroshot_nn_classify(img(2), list(texts), emb) == 2


def test_hand_cosines_at_known_angles():
    # class angles 0, 90, 180; image at 30 degrees -> cos 0.866, 0.5, -0.866
    texts = {"a": unit(0), "b": unit(90), "c": unit(180)}
    emb = TableEmbedder({1: unit(30), 2: unit(80), 3: unit(170)}, texts)
    hand = {k: [math.cos(math.radians(q - t)) for t in (0, 90, 180)] for k, q in ((1, 30), (2, 80), (3, 170))}
    for key, cos in hand.items():
        assert zeroshot_nn_classify(img(key), list(texts), emb) == cos.index(max(cos))


def test_zero_shot_tie_and_errors():
    emb = TableEmbedder({1: [1, 1], 0: [0, 0]}, {"a": [1, 0], "b": [0, 1]})
    assert zeroshot_nn_classify(img(1), ["a", "b"], emb) == 0
    with pytest.raises(NumericError):
        zeroshot_nn_classify(img(0), ["a", "b"], emb)
    with pytest.raises(PreconditionError):
        zeroshot_nn_classify(img(1), ["a"], emb)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 5), elements=st.floats(-5, 5)), arrays(np.float64, 5, elements=st.floats(-5, 5)),
       st.floats(0.01, 100))
def test_cosine_argmax_scale_invariant(cands, query, scale):
    if np.any(np.linalg.norm(cands, axis=1) < 1e-3) or np.linalg.norm(query) < 1e-3:
        return
    sims = (cands / np.linalg.norm(cands, axis=1, keepdims=True)) @ (query / np.linalg.norm(query))
    if np.sort(sims)[-1] - np.sort(sims)[-2] < 1e-9:
        return
    assert cosine_nearest(query, cands) == cosine_nearest(scale * query, cands) == int(np.argmax(sims))


def test_substring_rule_examples():
    classes = ["plastic", "metal", "wood", "glass"]
    assert match_class_in_response("This looks like polished metal.", classes) == "metal"
    assert match_class_in_response("wooden table", classes) == "wood"
    assert match_class_in_response("I cannot tell.", classes) is None
    assert match_class_in_response("Metal frame with GLASS panes", classes) == "metal"


def test_vlm_prompt_and_failure_accounting():
    class Scripted:
        adapter_id = "scripted"

        def __init__(self):
            self.prompts = []

        def respond(self, image, mask, prompt):
            self.prompts.append(prompt)
            if image.flat[0] == 9:
                raise TimeoutError("slow")
            return {1: "shiny metal", 2: "no idea"}[int(image.flat[0])]

    vlm = Scripted()
    m = np.ones((2, 2), bool)
    assert vlm_prompt_classify(img(1), m, vlm, ["metal", "wood"]) == "metal"
    preds, failed = run_vlm_baseline([(img(1), m), (img(2), m), (img(9), m)], vlm, ["metal", "wood"])
    assert preds == ["metal", None, False] and failed == 1
    assert set(vlm.prompts) == {VLM_PROMPT}
    assert VLM_PROMPT == "Please identify the material of the non-masked area."


def test_retrieval_identical_pair():
    f = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.1, 1.0]])
    assert retrieval_classify(f, [0, 0, 1, 1]).tolist() == [0, 0, 1, 1]


def test_retrieval_four_images_hand_table():
    f = np.array([[1.0, 0.1], [0.9, 0.5], [0.2, 1.0], [0.6, 0.8]])
    labels = np.array([0, 0, 1, 1])
    n = len(f)
    table = [[(f[i] @ f[j]) / math.hypot(*f[i]) / math.hypot(*f[j]) for j in range(n)] for i in range(n)]
    hand = [labels[max((j for j in range(n) if j != i), key=lambda j: table[i][j])] for i in range(n)]
    assert retrieval_classify(f, labels).tolist() == hand


def test_retrieval_never_picks_self():
    f = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    # image 0 duplicates image 1 under another label; self-match would return 0's own label
    assert retrieval_classify(f, [5, 7, 9]).tolist() == [7, 5, 5]


def test_eight_embedding_fixture():
    angles = [0, 10, 50, 95, 100, 180, 185, 270]
    f = np.array([unit(a) for a in angles])
    labels = np.array([0, 0, 1, 2, 2, 3, 3, 1])
    # nearest other angle for each (by hand): 10, 0, 10, 100, 95, 185, 180, 185
    assert retrieval_classify(f, labels).tolist() == [0, 0, 0, 2, 2, 3, 3, 3]
    texts = {c: unit(a) for c, a in zip("abcd", (0, 90, 180, 270))}
    emb = TableEmbedder({i: unit(a) for i, a in enumerate(angles)}, texts)
    got = [zeroshot_nn_classify(img(i), list(texts), emb) for i in range(8)]
    assert got == [0, 0, 1, 1, 1, 2, 2, 3]


def test_mock_joint_embedder_shared_space():
    emb = MockJointEmbedder(dim=16)
    assert emb.embed_image(img(1)).shape == emb.embed_text("metal").shape == (16,)
    assert np.array_equal(emb.embed_image(img(1)), emb.embed_image(img(1)))
