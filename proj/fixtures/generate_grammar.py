"""Regenerates the toy agreement-grammar corpus and its acceptability pairs.

Usage: python3 generate_grammar.py   (writes into this directory)

benchmark.jsonl opens with the generated pairs; the remaining items are
written by hand.
"""
import json
import random

DET = {("m", "sg"): "il", ("m", "pl"): "i", ("f", "sg"): "la", ("f", "pl"): "le"}
ANIMATE = [("m", "bambino", "bambini"), ("f", "mamma", "mamme")]
THINGS = [("m", "libro", "libri"), ("f", "palla", "palle")]
# First-conjugation verbs only, so number agreement is one regular ending.
INTRANSITIVE = [("salta", "saltano"), ("gioca", "giocano")]
TRANSITIVE = [("guarda", "guardano"), ("porta", "portano")]
ADJ = [{("m", "sg"): "rosso", ("f", "sg"): "rossa", ("m", "pl"): "rossi", ("f", "pl"): "rosse"},
       {("m", "sg"): "piccolo", ("f", "sg"): "piccola", ("m", "pl"): "piccoli", ("f", "pl"): "piccole"}]
COPULA = {"sg": "è", "pl": "sono"}


LINES_PER_SOURCE = 100


def np(rng, pool):
    gender, sg, pl = rng.choice(pool)
    number = rng.choice(["sg", "pl"])
    return f"{DET[(gender, number)]} {sg if number == 'sg' else pl}", gender, number


def verb(pair, number):
    return pair[0] if number == "sg" else pair[1]


def other(number):
    return "pl" if number == "sg" else "sg"


def sentence(rng, broken=False):
    kind = rng.randrange(4)
    subj, gender, number = np(rng, ANIMATE)
    agree = other(number) if broken else number
    if kind == 0:
        body = f"{subj} {verb(rng.choice(INTRANSITIVE), agree)}"
        tag = "subject_verb_agreement"
    elif kind == 1:
        obj, _, _ = np(rng, THINGS)
        body = f"{subj} {verb(rng.choice(TRANSITIVE), agree)} {obj}"
        tag = "subject_verb_agreement"
    elif kind == 2:
        subj, gender, number = np(rng, THINGS)
        adj = rng.choice(ADJ)
        agree = other(number) if broken else number
        body = f"{subj} {COPULA[number]} {adj[(gender, agree)]}"
        tag = "adjective_agreement"
    else:
        body = f"{subj} non {verb(rng.choice(INTRANSITIVE), agree)}"
        tag = "negation"
    return body[0].upper() + body[1:] + ".", tag


def pair(rng):
    state = rng.getstate()
    good, tag = sentence(rng)
    rng.setstate(state)
    bad, _ = sentence(rng, broken=True)
    return good, bad, tag


def main():
    rng = random.Random(20240501)
    lines = []
    while len(lines) < 2 * LINES_PER_SOURCE:
        s, _ = sentence(rng)
        lines.append(s)
    with open("grammar_home.txt", "w") as f:
        f.write("\n".join(lines[:LINES_PER_SOURCE]) + "\n")
    with open("grammar_media.txt", "w") as f:
        f.write("\n".join(lines[LINES_PER_SOURCE:]) + "\n")

    pairs = []
    prng = random.Random(7)
    while len(pairs) < 16:
        good, bad, tag = pair(prng)
        if good != bad and all(good != p[0] for p in pairs):
            pairs.append((good, bad, tag))
    with open("acceptability_pairs.jsonl", "w") as f:
        for i, (good, bad, tag) in enumerate(pairs):
            f.write(json.dumps({"id": f"acc-{i + 1:02d}", "task": "acceptability", "source_test": "BVL",
                                "structure_tag": tag, "grammatical": good, "ungrammatical": bad},
                               ensure_ascii=False) + "\n")


if __name__ == "__main__":
    main()
