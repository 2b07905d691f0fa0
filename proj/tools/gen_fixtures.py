#!/usr/bin/env python3
"""Regenerates the bundled synthetic fixtures under data/fixtures/.

Output is deterministic for a given --seed, so the committed files can be
rebuilt and diffed.
"""

import argparse
import json
import random
from pathlib import Path

COLORS = ["red", "blue", "green", "black", "white", "yellow", "pink", "brown", "gray", "orange"]
OBJECTS = ["hat", "car", "ball", "cup", "shoe", "box", "kite", "lamp", "chair", "bag", "book", "clock"]
PEOPLE = ["man", "woman", "boy", "girl", "child", "farmer", "doctor", "teacher"]
PLACES = ["window", "door", "tree", "table", "fence", "river", "bench", "wall"]
TIMES = ["morning", "evening", "night", "noon"]
ACTIONS = ["reading", "eating", "sleeping", "running", "singing", "waiting"]
FILLER = [
    "the sky above the street is clear",
    "some birds fly over the quiet park",
    "a bus passes by on the busy road",
    "the grass near the path is short",
]


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as out:
        for row in rows:
            out.write(json.dumps(row, sort_keys=True) + "\n")


def example(ex_id, sentences, question, answer, qtype, facts=None, **extra):
    row = {
        "id": ex_id,
        "description_sentences": sentences,
        "facts": facts or [],
        "question": question,
        "answers": [answer],
        "qtype": qtype,
    }
    row.update(extra)
    return row


def open_ended_set(rng):
    """32 examples over 4 question types and at most 20 answer classes."""
    rows = []
    templates = [
        ("what", lambda o, c, p, pl, t: (f"what color is the {o} ?", c)),
        ("where", lambda o, c, p, pl, t: (f"where is the {p} standing ?", pl)),
        ("who", lambda o, c, p, pl, t: (f"who is holding the {o} ?", p)),
        ("when", lambda o, c, p, pl, t: (f"when was the picture taken ?", t)),
    ]
    for i in range(32):
        o = OBJECTS[i % len(OBJECTS)]
        c = COLORS[i % 5]
        p = PEOPLE[(i // 2) % 5]
        pl = PLACES[(i // 3) % 5]
        t = TIMES[(i // 4) % 3]
        sentences = [
            f"a {p} is standing near the {pl}",
            f"the {p} is holding a {c} {o}",
            f"the picture was taken in the {t}",
        ]
        rng.shuffle(sentences)
        qtype, make = templates[i % len(templates)]
        question, answer = make(o, c, p, pl, t)
        rows.append(example(f"oe-{i:03d}", sentences, question, answer, qtype))
    return rows


def span_example(ex_id, rng):
    o, c = rng.choice(OBJECTS), rng.choice(COLORS)
    p, pl = rng.choice(PEOPLE), rng.choice(PLACES)
    act = rng.choice(ACTIONS)
    sentences = [f"the {o} on the ground is {c}", f"a {p} is {act} near the {pl}"]
    rng.shuffle(sentences)
    sentences.append(rng.choice(FILLER))
    kind = rng.randrange(4)
    if kind == 0:
        q, a, t = f"what color is the {o} ?", c, "what"
    elif kind == 1:
        q, a, t = f"who is {act} near the {pl} ?", p, "who"
    elif kind == 2:
        q, a, t = f"where is the {p} {act} ?", f"the {pl}", "where"
    else:
        q, a, t = f"what is the {p} doing ?", act, "what"
    return example(ex_id, sentences, q, a, t)


def mc_example(ex_id, rng):
    obj, answer = rng.choice(OBJECTS), rng.choice(COLORS)
    sentences = [rng.choice([f"there is a {answer} {obj} on the table", f"the {obj} beside it is {answer}"]),
                 rng.choice(FILLER)]
    rng.shuffle(sentences)
    wrong = rng.sample([c for c in COLORS if c != answer], 3)
    choices = wrong[:]
    correct = rng.randrange(4)
    choices.insert(correct, answer)
    return example(ex_id, sentences, f"what color is the {obj} ?", answer, "what",
                   choices=choices, correct_index=correct)


def word_vectors(rows, rng, dim=16, scale=0.4):
    """Seeded Gaussian stand-ins for pre-trained vectors, one row per fixture word."""
    words = set()
    for row in rows:
        for text in row["description_sentences"] + [row["question"]] + row.get("choices", []):
            words.update(text.lower().split())
    words.add(".")
    return [w + " " + " ".join(f"{rng.gauss(0.0, scale):.5f}" for _ in range(dim)) for w in sorted(words)]


FACTS = [
    ("water", "category", "drink", "Water belongs to the category of drink"),
    ("coffee", "category", "drink", "Coffee belongs to the category of drink"),
    ("apple", "category", "fruit", "Apple belongs to the category of fruit"),
    ("banana", "color", "yellow", "A banana is usually yellow"),
    ("dog", "ability", "bark", "A dog can bark loudly"),
    ("cat", "ability", "climb", "A cat can climb trees"),
    ("bicycle", "used_for", "ride", "A bicycle is used for riding"),
    ("umbrella", "used_for", "rain", "An umbrella protects people from rain"),
    ("snow", "season", "winter", "Snow falls in winter"),
    ("beach", "location", "sea", "A beach lies next to the sea"),
    ("knife", "used_for", "cut", "A knife is used to cut food"),
    ("pizza", "origin", "italy", "Pizza comes from Italy"),
    ("zebra", "pattern", "stripes", "A zebra has black and white stripes"),
    ("giraffe", "feature", "neck", "A giraffe has a very long neck"),
    ("clock", "used_for", "time", "A clock shows the time"),
    ("oven", "used_for", "bake", "An oven is used to bake bread"),
    ("cow", "product", "milk", "A cow gives milk"),
    ("bee", "product", "honey", "A bee makes honey"),
    ("train", "location", "track", "A train runs on a track"),
    ("kite", "needs", "wind", "A kite needs wind to fly"),
]

RETRIEVAL_QUERIES = [
    ("what category is water", ["water", "glass"], 0),
    ("what category does this fruit belong to", ["apple", "table"], 2),
    ("what color is this food usually", ["banana"], 3),
    ("what can this animal do", ["cat", "sofa"], 5),
    ("what is this object used for", ["umbrella", "street"], 7),
    ("in which season does this happen", ["snow", "mountain"], 8),
    ("where does this food come from", ["pizza", "plate"], 11),
    ("what pattern does this animal have", ["zebra", "grass"], 12),
    ("what does this animal produce", ["cow", "field"], 16),
    ("what does this toy need to fly", ["kite", "sky"], 19),
]


def eval_fixture():
    """12 examples with fixed ranked predictions; expected tables are
    computed by hand in the tests."""
    rows = [
        ("e01", "what", ["red"], ["red", "blue", "green"]),
        ("e02", "what", ["a dog"], ["cat", "dogs", "bird"]),
        ("e03", "what", ["blue"], ["red", "green", "white"]),
        ("e04", "where", ["the park"], ["Park.", "street", "home"]),
        ("e05", "where", ["kitchen"], ["bedroom", "garage", "yard"]),
        ("e06", "when", ["night"], ["day", "noon", "Night"]),
        ("e07", "who", ["the man"], ["man", "woman", "boy"]),
        ("e08", "who", ["girl"], ["boy", "girls", "woman"]),
        ("e09", "who", ["farmer"], ["doctor", "teacher", "pilot"]),
        ("e10", "why", ["to eat"], ["to eat", "to sleep", "to run"]),
        ("e11", "how", ["two"], ["three", "one", "four"]),
        ("e12", "how", ["fast"], ["slow", "fast", "quick"]),
    ]
    out = []
    for ex_id, qtype, answers, ranked in rows:
        row = example(ex_id, [f"context for {ex_id}"], f"question {ex_id} ?", answers[0], qtype)
        row["answers"] = answers
        row["ranked_predictions"] = ranked
        out.append(row)
    return out


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "data" / "fixtures"))
    parser.add_argument("--seed", type=int, default=20240517)
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    write_jsonl(out / "open_ended_train.jsonl", open_ended_set(random.Random(args.seed)))

    rng = random.Random(args.seed + 1)
    seen = set()
    span_rows = []
    while len(span_rows) < 320:
        row = span_example(f"span-{len(span_rows):03d}", rng)
        key = (tuple(row["description_sentences"]), row["question"])
        if key in seen:
            continue
        seen.add(key)
        span_rows.append(row)
    write_jsonl(out / "span_train.jsonl", span_rows[:256])
    write_jsonl(out / "span_test.jsonl", span_rows[256:])

    rng = random.Random(args.seed + 2)
    mc_rows = [mc_example(f"mc-{i:03d}", rng) for i in range(192)]
    write_jsonl(out / "mc_train.jsonl", mc_rows[:128])
    write_jsonl(out / "mc_test.jsonl", mc_rows[128:])
    (out / "mc_vectors.txt").write_text("\n".join(word_vectors(mc_rows, rng)) + "\n", encoding="utf-8")

    write_jsonl(out / "facts.jsonl",
                [{"subject": s, "relation": r, "object": o, "sentence": t} for s, r, o, t in FACTS])
    write_jsonl(out / "retrieval_queries.jsonl",
                [{"question": q, "visual_concepts": c, "gold_fact": g} for q, c, g in RETRIEVAL_QUERIES])
    write_jsonl(out / "eval_12.jsonl", eval_fixture())


if __name__ == "__main__":
    main()
