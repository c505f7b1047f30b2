#!/usr/bin/env python3
"""Independent reference values for the caption metrics.

Writes tests/fixtures/caption_fixture.json. Everything is computed from the
metric definitions with plain Python: BLEU-4 by explicit clipped counts,
CIDEr by explicit TF-IDF dictionaries, METEOR-lite by exhaustive search over
all maximal one-to-one exact-match alignments.
"""
import itertools
import json
import math
import string
import sys
from collections import Counter
from pathlib import Path

PAIRS = [
    ("the car stops", ["the red car stops now"]),
    ("the road is empty", ["the road is empty", "no traffic on the road"]),
    ("a busy street with a red light", ["the street is busy and the light is red"]),
    ("traffic is light. the light is green.", ["light traffic, green light ahead", "the light is green and traffic is light"]),
    ("two pedestrians are nearby", ["there are two pedestrians nearby", "two vulnerable road users are nearby"]),
    ("the ego vehicle turns left", ["the ego vehicle will turn left at the junction"]),
    ("stop stop stop", ["please stop the car"]),
    ("a cyclist is ahead on the right", ["cyclist ahead on the right side", "a cyclist rides ahead"]),
    ("the scene is a paved urban road", ["the scene is a paved urban road", "a paved road in the city"]),
    ("yellow light, slow down now", ["the light turns yellow so slow down", "slow down for the yellow light"]),
]


def tokenize(text):
    out = []
    for word in text.split():
        w = "".join(ch for ch in word if ch not in string.punctuation).lower()
        if w:
            out.append(w)
    return out


def grams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu4(cand, refs):
    c = tokenize(cand)
    if not c:
        return 0.0
    rs = [tokenize(r) for r in refs]
    logs = 0.0
    for n in range(1, 5):
        cg = grams(c, n)
        best = Counter()
        for r in rs:
            for g, k in grams(r, n).items():
                best[g] = max(best[g], k)
        total = sum(cg.values())
        clipped = sum(min(k, best[g]) for g, k in cg.items())
        p = clipped / total if total else 0.0
        logs += 0.25 * math.log(max(p, 1e-9))
    # closest reference length, shorter one on ties
    r_len = sorted((abs(len(r) - len(c)), len(r)) for r in rs)[0][1]
    bp = min(1.0, math.exp(1.0 - r_len / len(c)))
    return bp * math.exp(logs)


def cider(cands, refsets):
    n_docs = len(refsets)
    docfreq = [Counter() for _ in range(4)]
    for refs in refsets:
        for n in range(4):
            present = set()
            for r in refs:
                present |= set(grams(tokenize(r), n + 1))
            for g in present:
                docfreq[n][g] += 1

    def vec(tokens, n):
        return {g: k * (math.log(n_docs) - math.log(max(1, docfreq[n][g]))) for g, k in grams(tokens, n + 1).items()}

    def cos(a, b):
        na = math.sqrt(sum(v * v for v in a.values()))
        nb = math.sqrt(sum(v * v for v in b.values()))
        if na == 0 or nb == 0:
            return 0.0
        return sum(v * b.get(g, 0.0) for g, v in a.items()) / (na * nb)

    scores = []
    for cand, refs in zip(cands, refsets):
        s = 0.0
        for n in range(4):
            vc = vec(tokenize(cand), n)
            s += 10.0 * sum(cos(vc, vec(tokenize(r), n)) for r in refs) / len(refs)
        scores.append(s / 4.0)
    return scores


def chunks_of(pairs):
    pairs = sorted(pairs)
    chunks = 0
    prev = None
    for i, j in pairs:
        if prev is None or not (i == prev[0] + 1 and j == prev[1] + 1):
            chunks += 1
        prev = (i, j)
    return chunks


def meteor_single(cand, ref):
    c, r = tokenize(cand), tokenize(ref)
    if not c or not r:
        return 0.0
    slots = [[j for j, w in enumerate(r) if w == cw] for cw in c]
    best = None
    # every candidate position picks one reference slot or stays unmatched
    for choice in itertools.product(*[[None] + s for s in slots]):
        used = [j for j in choice if j is not None]
        if len(used) != len(set(used)):
            continue
        m = len(used)
        pairs = [(i, j) for i, j in enumerate(choice) if j is not None]
        key = (m, -chunks_of(pairs)) if m else (0, 0)
        if best is None or key > best:
            best = key
    m, neg_chunks = best
    if m == 0:
        return 0.0
    p, rec = m / len(c), m / len(r)
    f = 10 * p * rec / (rec + 9 * p)
    return f * (1 - 0.5 * (-neg_chunks / m) ** 3)


def meteor(cand, refs):
    return max(meteor_single(cand, r) for r in refs)


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "fixtures" / "caption_fixture.json"
    cands = [c for c, _ in PAIRS]
    refsets = [r for _, r in PAIRS]
    cid = cider(cands, refsets)
    rows = []
    for (c, refs), cs in zip(PAIRS, cid):
        rows.append({"candidate": c, "references": refs, "bleu4": bleu4(c, refs), "cider": cs,
                     "meteor_lite": meteor(c, refs)})
    doc = {"pairs": rows, "cider_corpus_mean": sum(cid) / len(cid)}
    out.write_text(json.dumps(doc, indent=2) + "\n")


if __name__ == "__main__":
    main()
