"""Writes the test fixtures and the golden mock-scored file.

The golden values come from a direct re-implementation of the mock teacher
and the positional confidence score, independent of the Rust code.
Run from this directory: python3 make_fixtures.py
"""
import json
import math
import string

TRIPLETS = [
    ("t01", "what is the capital of france", "paris", "Paris is the capital and largest city of France."),
    ("t02", "what is the capital of france", "paris", "Lyon is known for its cuisine and silk history."),
    ("t03", "what is the capital of france", "paris", "The Seine flows through Paris before reaching the sea."),
    ("t04", "who wrote the origin of species", "charles darwin wrote it in eighteen fifty nine",
     "Charles Darwin published On the Origin of Species in eighteen fifty nine."),
    ("t05", "who wrote the origin of species", "charles darwin wrote it in eighteen fifty nine",
     "Gregor Mendel studied inheritance in pea plants."),
    ("t06", "who wrote the origin of species", "charles darwin wrote it in eighteen fifty nine",
     "Darwin sailed on the Beagle and later wrote about natural selection."),
    ("t07", "how do plants make energy", "plants use photosynthesis to turn sunlight into sugar",
     "Photosynthesis lets plants turn sunlight, water and carbon dioxide into sugar."),
    ("t08", "how do plants make energy", "plants use photosynthesis to turn sunlight into sugar",
     "Mushrooms are fungi and do not photosynthesize."),
    ("t09", "how do plants make energy", "plants use photosynthesis to turn sunlight into sugar",
     "Leaves are green because of chlorophyll."),
    ("t10", "what is the boiling point of water", "one hundred degrees celsius at sea level",
     "At sea level water boils at one hundred degrees Celsius."),
    ("t11", "what is the boiling point of water", "one hundred degrees celsius at sea level",
     "Mount Everest is the highest mountain above sea level."),
    ("t12", "what is the boiling point of water", "one hundred degrees celsius at sea level",
     "Ice melts at zero degrees."),
]

CORPUS = [
    ("d01", "Paris is the capital and largest city of France."),
    ("d02", "Lyon is known for its cuisine and silk history."),
    ("d03", "The Seine flows through Paris before reaching the sea."),
    ("d04", "Charles Darwin published On the Origin of Species in 1859."),
    ("d05", "Gregor Mendel studied inheritance in pea plants."),
    ("d06", "Darwin sailed on the Beagle and later wrote about natural selection."),
    ("d07", "Photosynthesis lets plants turn sunlight, water and carbon dioxide into sugar."),
    ("d08", "Mushrooms are fungi and do not photosynthesize."),
    ("d09", "Leaves are green because of chlorophyll."),
    ("d10", "At sea level water boils at one hundred degrees Celsius."),
    ("d11", "Mount Everest is the highest mountain above sea level."),
    ("d12", "Ice melts at zero degrees."),
    ("d13", "The Louvre in Paris is the most visited museum in the world."),
    ("d14", "France borders Spain, Italy, Germany and Belgium."),
    ("d15", "Water is made of hydrogen and oxygen."),
    ("d16", "Sunlight reaches Earth in about eight minutes."),
]


def tokenize(text):
    out = []
    for raw in text.split():
        t = "".join(c for c in raw if c not in string.punctuation).lower()
        if t:
            out.append(t)
    return out


def logistic(x):
    return 1.0 / (1.0 + math.exp(-x))


def mock_logprobs(query, answer, doc, a0=-1.0, a1=2.5, a2=0.5, eps=0.01):
    doc_terms = set(tokenize(doc)) if doc is not None else set()
    query_terms = set(tokenize(query))
    out = []
    for t in tokenize(answer):
        p = logistic(a0 + a1 * (t in doc_terms) + a2 * (t in query_terms))
        out.append((t, math.log(min(max(p, eps), 1.0 - eps))))
    return out


def positional_conf(lps, k=0.2, c=1.5, peak=5.0):
    w = [max(0.0, -k * (i - peak) ** 2 + c) for i in range(1, len(lps) + 1)]
    if sum(w) == 0.0:
        w = [1.0] * len(lps)
    return math.exp(sum(wi * lp for wi, lp in zip(w, lps)))


def dump(path, rows):
    with open(path, "w") as f:
        for r in rows:
            f.write(json.dumps(r) + "\n")


triplets = [dict(id=i, query=q, answer=a, document=d, attachments=[]) for i, q, a, d in TRIPLETS]
triplets[0]["attachments"] = ["file:///images/eiffel.jpg"]
dump("triplets.jsonl", triplets)
dump("corpus.jsonl", [dict(id=i, text=t, attachments=[]) for i, t in CORPUS])

golden = []
for t in triplets:
    with_doc = [lp for _, lp in mock_logprobs(t["query"], t["answer"], t["document"])]
    without = [lp for _, lp in mock_logprobs(t["query"], t["answer"], None)]
    cw, co = positional_conf(with_doc), positional_conf(without)
    golden.append(dict(id=t["id"], conf_with=cw, conf_without=co, mig=cw - co))
dump("golden_mock_scored.jsonl", golden)

# Hand-made teacher output: the mock never lowers confidence, so these
# records include distracting documents that do.
SHIFT = {"t01": 1.2, "t02": -1.1, "t03": 0.1, "t04": 0.9, "t05": -0.8, "t06": 0.05,
         "t07": 1.0, "t08": -1.3, "t09": -0.05, "t10": 0.7, "t11": -0.6, "t12": 0.0}
records = []
for t in triplets:
    toks = tokenize(t["answer"])
    w = [max(0.0, -0.2 * (i - 5.0) ** 2 + 1.5) for i in range(1, len(toks) + 1)]
    total = sum(w) or len(toks)
    # every baseline lands at confidence exp(-1.3) ~ 0.27
    base = [round(-1.3 / total, 6)] * len(toks)
    scale = math.exp(-2.0 * SHIFT[t["id"]])
    shifted = [round(b * scale, 6) for b in base]
    records.append(dict(triplet_id=t["id"], variant="with_doc", tokens=toks, logprobs=shifted))
    records.append(dict(triplet_id=t["id"], variant="without_doc", tokens=toks, logprobs=base))
dump("logprobs.jsonl", records)
