"""The three comparison protocols on hand-built embeddings.

Zero-shot: nearest class text in a joint space. Retrieval: each image takes
the label of its most similar other image. VLM: the reply must name a class.
"""
import math

import numpy as np

from materialkit.baselines import match_class_in_response, retrieval_classify, zeroshot_nn_classify


def unit(deg):
    return [math.cos(math.radians(deg)), math.sin(math.radians(deg))]


class Lookup:
    adapter_id = "lookup"
    dim = 2

    def __init__(self, images, texts):
        self.images, self.texts = images, texts

    def embed_image(self, image):
        return np.array(self.images[int(image.flat[0])])

    def embed_text(self, text):
        return np.array(self.texts[text])


texts = {"metal": unit(0), "wood": unit(90), "glass": unit(180)}
images = {0: unit(20), 1: unit(120), 2: unit(170)}
embedder = Lookup(images, texts)
for key in images:
    k = zeroshot_nn_classify(np.full((1, 1, 3), key, np.uint8), list(texts), embedder)
    print(f"image at {math.degrees(math.atan2(*images[key][::-1])):5.1f} deg -> {list(texts)[k]}")

features = np.array([unit(a) for a in (0, 10, 95, 100, 185)])
labels = np.array([0, 0, 1, 1, 2])
print("retrieval:", retrieval_classify(features, labels).tolist(), "truth:", labels.tolist())

classes = ["plastic", "metal", "wood"]
for reply in ("This looks like polished metal.", "A wooden table top.", "Hard to say."):
    print(f"{reply!r:36} -> {match_class_in_response(reply, classes)}")
