#!/usr/bin/env python3
"""Writes the toy fixture and its golden cluster table.

The golden table is computed here with plain Python, independently of the
Rust implementation. Rerun only when the fixture itself changes:

    python3 make_fixture.py
"""
import json
import math
import os

HERE = os.path.dirname(os.path.abspath(__file__))

# question_id -> (answer_type, answer multiset as {answer: count}, cluster)
QUESTIONS = {
    101: ("yes/no", {"yes": 10}, 0),
    102: ("yes/no", {"no": 9, "yes": 1}, 0),
    103: ("yes/no", {"yes": 7, "no": 3}, 0),
    104: ("number", {"2": 10}, 0),
    105: ("other", {"red": 6, "maroon": 3, "pink": 1}, 0),
    106: ("yes/no", {"no": 10}, 0),
    107: ("other", {"tennis": 4, "baseball": 3, "golf": 2, "polo": 1}, 1),
    108: ("number", {"3": 5, "4": 5}, 1),
    109: ("other", {"dog": 2, "cat": 2, "wolf": 2, "fox": 2, "bear": 1, "lion": 1}, 1),
    110: ("other", {"a%d" % i: 1 for i in range(10)}, 1),
    111: ("number", {"7": 8, "six": 2}, 1),
    112: ("other", {"blue": 10}, 1),
}

# model -> question_id -> (entropy, top_answer)
PREDICTIONS = {
    "toy_i": {q: (3.5 + 0.125 * (q - 101), "yes") for q in QUESTIONS},
    "toy_q": {
        101: (0.4, "yes"), 102: (0.5, "no"), 103: (0.3, "yes"), 104: (0.9, "3"),
        105: (0.7, "red"), 106: (0.6, "yes"), 107: (3.9, "golf"), 108: (3.1, "3"),
        109: (4.2, "cat"), 110: (4.4, "a3"), 111: (2.9, "7"), 112: (4.0, "green"),
    },
    "toy_qi": {
        101: (0.1, "yes"), 102: (0.2, "no"), 103: (0.3, "no"), 104: (0.15, "2"),
        105: (0.45, "maroon"), 106: (0.05, "no"), 107: (2.5, "tennis"), 108: (2.2, "4"),
        109: (3.3, "fox"), 110: (3.6, "z"), 111: (2.1, "six"), 112: (2.8, "blue"),
    },
    "alpha": {
        101: (0.2, "yes"), 102: (0.1, "no"), 103: (0.6, "yes"), 104: (0.3, "2"),
        105: (0.9, "pink"), 106: (0.4, "no"), 107: (2.0, "baseball"), 108: (1.75, "5"),
        109: (2.6, "dog"), 110: (3.0, "a9"), 111: (1.5, "7"), 112: (2.25, "blue"),
    },
    "beta": {
        101: (0.5, "no"), 102: (0.25, "no"), 103: (0.35, "yes"), 104: (0.8, "two"),
        105: (1.1, "red"), 106: (0.3, "no"), 107: (2.9, "tennis"), 108: (2.4, "3"),
        109: (3.5, "lion"), 110: (3.8, "a1"), 111: (2.6, "6"), 112: (3.1, "navy"),
    },
}

LEVELS = ["L1", "L3"]
BASE = [("I", "toy_i"), ("Q", "toy_q"), ("QI", "toy_qi")]
EVAL = ["alpha", "beta"]


def answers_list(counts):
    out = []
    for a in sorted(counts):
        out += [a] * counts[a]
    return out


def norm(s):
    return " ".join(s.lower().split())


def mean_std(xs):
    if not xs:
        return None
    m = sum(xs) / len(xs)
    v = sum((x - m) ** 2 for x in xs) / len(xs)
    return m, math.sqrt(v)


def gt_entropy(answers):
    counts = {}
    for a in answers:
        counts[norm(a)] = counts.get(norm(a), 0) + 1
    h = 0.0
    for a in sorted(counts):
        p = counts[a] / len(answers)
        h -= p * math.log(p)
    return h


def acc(pred, answers):
    m = sum(1 for a in answers if norm(a) == norm(pred))
    return min(m / 3.0, 1.0) * 100.0


def f4(x):
    s = "%.4f" % x
    return "0.0000" if s == "-0.0000" else s


def cells(ms):
    return ["n/a", "n/a"] if ms is None else [f4(ms[0]), f4(ms[1])]


def main():
    with open(os.path.join(HERE, "annotations.jsonl"), "w") as f:
        for q, (t, counts, _) in sorted(QUESTIONS.items()):
            f.write(json.dumps({
                "question_id": q, "question": "toy question %d?" % q,
                "answers": answers_list(counts), "answer_type": t, "split": "val",
            }) + "\n")
    for model, preds in PREDICTIONS.items():
        with open(os.path.join(HERE, "pred_%s.jsonl" % model), "w") as f:
            for q, (h, top) in sorted(preds.items()):
                f.write(json.dumps({
                    "question_id": q, "model_id": model, "entropy": h,
                    "top_answer": top, "top_prob": 0.5,
                }) + "\n")

    with open(os.path.join(HERE, "model.json"), "w") as f:
        json.dump({
            "format_version": 1, "k": 2, "feature_names": ["H_I", "H_Q", "H_QI"],
            "centroids": [[3.8125, 0.5666666666666667, 0.20833333333333334],
                          [4.5625, 3.75, 2.75]],
            "ordering": [0, 1], "levels": LEVELS,
            "config": {"k": 2, "max_iters": 300, "tol": 1e-6, "n_restarts": 10,
                       "seed": 0, "level_q_threshold": 1.0, "level_qi_threshold": 2.0},
            "seed": 0, "inertia": 0.0,
        }, f, indent=2)
        f.write("\n")

    with open(os.path.join(HERE, "assignments.csv"), "w") as f:
        f.write("question_id,cluster,level,distance\n")
        for q, (_, _, c) in sorted(QUESTIONS.items()):
            f.write("%d,%d,%s,0.0000\n" % (q, c, LEVELS[c]))

    header = ["cluster", "level", "total"]
    labels = [l for l, _ in BASE] + EVAL
    ids = [m for _, m in BASE] + EVAL
    for l in labels:
        header += ["entropy_%s_mean" % l, "entropy_%s_std" % l]
    for l in labels:
        header += ["accuracy_%s_mean" % l, "accuracy_%s_std" % l]
    header += ["gt_entropy_mean", "gt_entropy_std", "unique_answers_mean",
               "unique_answers_std", "yes_no", "number", "other", "n_agree", "n_disagree"]
    rows = [",".join(header)]
    for c in range(2):
        members = [q for q in sorted(QUESTIONS) if QUESTIONS[q][2] == c]
        answers = {q: answers_list(QUESTIONS[q][1]) for q in members}
        row = [str(c), LEVELS[c], str(len(members))]
        for m in ids:
            row += cells(mean_std([PREDICTIONS[m][q][0] for q in members]))
        for m in ids:
            row += cells(mean_std([acc(PREDICTIONS[m][q][1], answers[q]) for q in members]))
        row += cells(mean_std([gt_entropy(answers[q]) for q in members]))
        uniq = [len(set(norm(a) for a in answers[q])) for q in members]
        row += cells(mean_std([float(u) for u in uniq]))
        for t in ("yes/no", "number", "other"):
            row.append(str(sum(1 for q in members if QUESTIONS[q][0] == t)))
        agree = sum(1 for u in uniq if u == 1)
        row += [str(agree), str(len(members) - agree)]
        rows.append(",".join(row))
    with open(os.path.join(HERE, "cluster_table.golden.csv"), "w") as f:
        f.write("\n".join(rows) + "\n")


if __name__ == "__main__":
    main()
