"""Freezes the reference fixtures used by the unit tests.

Usage: python3 scripts/make_oracles.py TOY_JSONL OUT_DIR

TOY_JSONL holds {"id", "source"} records from the toy corpus generator.
Token streams come from the standard tokenize module, identifier maps from
an ast walk. BLEU scores come from reference_bleu below; where every
hypothesis has at least four tokens it is cross-checked against nltk's
corpus_bleu with method2 smoothing (nltk counts at least one n-gram per
sentence, so the two differ on shorter hypotheses).
"""

import ast
import io
import json
import keyword
import math
import random
import sys
import tokenize

from nltk.translate.bleu_score import SmoothingFunction, corpus_bleu

from extra_functions import FUNCTIONS

KEPT = {
    tokenize.NAME: "NAME",
    tokenize.NUMBER: "NUMBER",
    tokenize.STRING: "STRING",
    tokenize.OP: "OP",
    tokenize.NEWLINE: "NEWLINE",
    tokenize.INDENT: "INDENT",
    tokenize.DEDENT: "DEDENT",
}
LAYOUT_TEXT = {"NEWLINE": "[NL]", "INDENT": "[INDENT]", "DEDENT": "[DEDENT]"}


def reference_tokens(source):
    out = []
    for tok in tokenize.generate_tokens(io.StringIO(source).readline):
        kind = KEPT.get(tok.type)
        if kind is None:
            continue
        if kind == "NAME" and keyword.iskeyword(tok.string):
            kind = "KEYWORD"
        text = LAYOUT_TEXT.get(kind, tok.string)
        out.append({"kind": kind, "text": text, "start": list(tok.start)})
    return out


def reference_identifiers(source):
    toks = reference_tokens(source)
    at = {tuple(t["start"]): i for i, t in enumerate(toks)}
    tree = ast.parse(source)
    fn = tree.body[0]
    bound = set()
    occurrences = {}

    def note(name, line, col):
        # Names inside f-string fields have no token of their own.
        if (line, col) in at:
            occurrences.setdefault(name, set()).add(at[(line, col)])

    for node in ast.walk(fn):
        if isinstance(node, ast.arg):
            bound.add(node.arg)
            note(node.arg, node.lineno, node.col_offset)
        elif isinstance(node, ast.Name):
            if isinstance(node.ctx, ast.Store):
                bound.add(node.id)
            note(node.id, node.lineno, node.col_offset)
        elif isinstance(node, ast.ExceptHandler) and node.name:
            bound.add(node.name)
            start = at[(node.lineno, node.col_offset)]
            k = start
            while not (toks[k]["text"] == "as" and toks[k + 1]["text"] == node.name):
                k += 1
            occurrences.setdefault(node.name, set()).add(k + 1)
    return {name: sorted(occurrences.get(name, ())) for name in sorted(bound)}


def ngrams(words, n):
    return [tuple(words[i:i + n]) for i in range(len(words) - n + 1)]


def reference_bleu(refs, hyps):
    """Corpus BLEU-4, add-one smoothing for n >= 2, scaled to 100."""
    num = [0] * 4
    den = [0] * 4
    ref_len = sum(len(r) for r in refs)
    hyp_len = sum(len(h) for h in hyps)
    for ref, hyp in zip(refs, hyps):
        for n in range(1, 5):
            ref_counts = {}
            for g in ngrams(ref, n):
                ref_counts[g] = ref_counts.get(g, 0) + 1
            hyp_counts = {}
            for g in ngrams(hyp, n):
                hyp_counts[g] = hyp_counts.get(g, 0) + 1
            num[n - 1] += sum(min(c, ref_counts.get(g, 0)) for g, c in hyp_counts.items())
            den[n - 1] += sum(hyp_counts.values())
    if hyp_len == 0 or num[0] == 0:
        return 0.0
    log_p = math.log(num[0] / den[0])
    for n in range(1, 4):
        log_p += math.log((num[n] + 1) / (den[n] + 1))
    bp = math.exp(min(0.0, 1.0 - ref_len / hyp_len))
    return 100.0 * bp * math.exp(log_p / 4)


def main():
    toy_path, out_dir = sys.argv[1], sys.argv[2]
    with open(toy_path) as fh:
        toy = [json.loads(line)["source"] for line in fh if line.strip()]

    lex_sources = FUNCTIONS + toy[: 100 - len(FUNCTIONS)]
    with open(f"{out_dir}/tokenize_oracle.jsonl", "w") as fh:
        for src in lex_sources:
            toks = [{"kind": t["kind"], "text": t["text"]} for t in reference_tokens(src)]
            fh.write(json.dumps({"source": src, "tokens": toks}) + "\n")

    id_sources = [s for s in FUNCTIONS if "CONFIG" not in s][:25] + toy[:25]
    with open(f"{out_dir}/identifier_oracle.jsonl", "w") as fh:
        for src in id_sources:
            fh.write(json.dumps({"source": src, "identifiers": reference_identifiers(src)}) + "\n")

    rng = random.Random(20240611)
    checked = 0
    words = ["load", "data", "get", "user", "set", "file", "read", "parse", "config", "item",
             "the", "a", "of", "to", "from", "disk", "safely", "train", "name", "value"]
    with open(f"{out_dir}/bleu_oracle.jsonl", "w") as fh:
        for _ in range(20):
            refs, hyps = [], []
            for _ in range(rng.randint(1, 6)):
                refs.append([rng.choice(words) for _ in range(rng.randint(1, 12))])
                hyps.append([rng.choice(words) for _ in range(rng.randint(1, 12))])
            score = reference_bleu(refs, hyps)
            if all(len(h) >= 4 for h in hyps):
                nltk_score = 100.0 * corpus_bleu([[r] for r in refs], hyps,
                                                 smoothing_function=SmoothingFunction().method2)
                assert abs(nltk_score - score) < 1e-9, (nltk_score, score)
                checked += 1
            fh.write(json.dumps({"references": refs, "hypotheses": hyps, "bleu": score}) + "\n")
    print(f"bleu: {checked} of 20 cases also matched nltk")


if __name__ == "__main__":
    main()
