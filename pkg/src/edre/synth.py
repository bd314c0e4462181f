"""Seeded generator of synthetic labeled review comments.

Each comment is built from generic code-review filler words; with
probability ``plant_prob`` one keyword characteristic of its clarity class
is inserted at a random position.  Lengths follow a rounded normal around
13 words, and class frequencies default to 35% clear, 24% somewhat clear,
13% somewhat unclear and 29% unclear.
"""
from __future__ import annotations

from datetime import datetime, timedelta, timezone

import numpy as np

from edre.corpus import Clarity, LabeledReview, ReviewComment

CLASS_SHARES = {
    Clarity.CLEAR: 0.347,
    Clarity.SOMEWHAT_CLEAR: 0.240,
    Clarity.SOMEWHAT_UNCLEAR: 0.127,
    Clarity.UNCLEAR: 0.286,
}

KEYWORDS = {
    Clarity.CLEAR: ["docstring", "typo", "deduplicate", "assertion", "constant", "nullable"],
    Clarity.SOMEWHAT_CLEAR: ["readability", "simplify", "cleanup", "naming", "verbose", "consistent"],
    Clarity.SOMEWHAT_UNCLEAR: ["somehow", "weird", "odd", "iffy", "meh", "fishy"],
    Clarity.UNCLEAR: ["huh", "confusing", "unclear", "strange", "nope", "puzzling"],
}

FILLER = (
    "code function line file test value call return error list module change method "
    "class config check update loop index param type string import logic case path build "
    "output input field array object result query cache request response handler client "
    "server buffer thread lock timeout retry branch merge commit review comment variable "
    "argument default option flag setting schema table column record payload event queue "
    "the this is to we should here it in a be of for on that can"
).split()

PROJECTS = ("Alpha", "Beta", "Gamma")


def generate_reviews(
    n: int = 2000,
    seed: int = 0,
    plant_prob: float = 0.9,
    mean_words: float = 13.0,
    sd_words: float = 4.0,
    shares: dict | None = None,
    id_prefix: str = "syn",
) -> list[LabeledReview]:
    rng = np.random.default_rng(seed)
    shares = shares or CLASS_SHARES
    classes = list(shares)
    probs = np.array([shares[c] for c in classes], dtype=float)
    probs /= probs.sum()
    start = datetime(2019, 1, 1, tzinfo=timezone.utc)
    width = len(str(n))
    reviews = []
    for i in range(n):
        clarity = classes[rng.choice(len(classes), p=probs)]
        length = int(np.clip(round(rng.normal(mean_words, sd_words)), 3, 40))
        words = [FILLER[j] for j in rng.integers(0, len(FILLER), size=length)]
        if rng.random() < plant_prob:
            pool = KEYWORDS[clarity]
            words[rng.integers(0, length)] = pool[rng.integers(0, len(pool))]
        body = " ".join(words)
        body = body[0].upper() + body[1:] + "."
        rid = f"{id_prefix}-{i:0{width}d}"
        comment = ReviewComment(
            id=rid,
            project=PROJECTS[i % len(PROJECTS)],
            author=f"dev{int(rng.integers(1, 45))}",
            created_at=start + timedelta(minutes=int(rng.integers(0, 60 * 24 * 330))),
            body=body,
            thread_url=f"https://example.invalid/{PROJECTS[i % len(PROJECTS)].lower()}/pull/{i // 10}#discussion_r{i}",
        )
        reviews.append(LabeledReview(comment, clarity, {clarity: 5}))
    return reviews
