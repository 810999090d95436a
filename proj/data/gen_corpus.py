#!/usr/bin/env python3
"""Deterministically regenerate the bundled synthetic corpus and vocabulary.

The corpus is an English-like language with a Zipfian unigram distribution
and a sharply peaked bigram chain, so a small masked-language model can make
real progress on it within a few hundred steps. Sentences end in terminal
punctuation, paragraphs end in a blank line, and every word is covered by
the vocabulary (single characters and ## continuations provide a fallback
for anything else).

Running this script rewrites data/vocab.txt and data/corpus/part*.txt.
"""

import math
import os
import numpy as np

SEED = 1234
N_WORDS = 1880
ZIPF_EXP = 1.35
ZIPF_SHIFT = 2.7
N_SUCC = 20          # candidate successors per word
SUCC_TEMP = 1.3      # peakedness of the successor distribution
TARGET_BYTES = 100_000
N_FILES = 4

CONSONANTS = list("bcdfghjklmnprstvwz")
VOWELS = list("aeiou")
CODAS = ["", "", "", "n", "r", "s", "l", "t"]


def make_words(rng):
    words = set()
    out = []
    while len(out) < N_WORDS:
        n_syll = rng.integers(1, 4)
        w = ""
        for _ in range(n_syll):
            w += rng.choice(CONSONANTS) + rng.choice(VOWELS)
            w += rng.choice(CODAS)
        if 3 <= len(w) <= 12 and w not in words:
            words.add(w)
            out.append(w)
    return out


def main():
    rng = np.random.default_rng(SEED)
    words = make_words(rng)

    ranks = np.arange(N_WORDS)
    uni = 1.0 / (ranks + ZIPF_SHIFT) ** ZIPF_EXP
    uni /= uni.sum()
    h_uni = -(uni * np.log(uni)).sum()

    # peaked successor sets: each word transitions to a few likely words;
    # most candidates are drawn by frequency, a few uniformly for coverage
    succ_ids = np.empty((N_WORDS, N_SUCC), dtype=np.int64)
    succ_p = np.empty((N_WORDS, N_SUCC))
    for i in range(N_WORDS):
        seen = {i}
        cand = []
        while len(cand) < N_SUCC - 6:
            c = int(rng.choice(N_WORDS, p=uni))
            if c not in seen:
                seen.add(c)
                cand.append(c)
        while len(cand) < N_SUCC:
            c = int(rng.integers(N_WORDS))
            if c not in seen:
                seen.add(c)
                cand.append(c)
        cand = np.array(cand)
        w = uni[cand] ** (1.0 / SUCC_TEMP)
        w[: N_SUCC - 6] = 0.88 * w[: N_SUCC - 6] / w[: N_SUCC - 6].sum()
        w[N_SUCC - 6 :] = 0.12 / 6.0  # coverage floor for the uniform draws
        succ_ids[i] = cand
        succ_p[i] = w
    h_bi = float(-(succ_p * np.log(succ_p)).sum(axis=1) @ uni[np.arange(N_WORDS)])

    os.makedirs(os.path.join(os.path.dirname(__file__) or ".", "corpus"), exist_ok=True)
    base = os.path.dirname(__file__) or "."

    texts = [[] for _ in range(N_FILES)]
    sizes = [0] * N_FILES
    fi = 0
    total_tokens = 0
    word_counts = np.zeros(N_WORDS, dtype=np.int64)
    while sum(sizes) < TARGET_BYTES:
        para = []
        n_sent = rng.integers(3, 9)
        for _ in range(n_sent):
            n_tok = rng.integers(5, 14)
            cur = int(rng.choice(N_WORDS, p=uni))
            sent = [words[cur]]
            word_counts[cur] += 1
            for _ in range(n_tok - 1):
                nxt = int(rng.choice(succ_ids[cur], p=succ_p[cur]))
                sent.append(words[nxt])
                word_counts[nxt] += 1
                cur = nxt
            u = rng.random()
            punct = "." if u < 0.9 else ("!" if u < 0.95 else "?")
            para.append(" ".join(sent) + punct)
            total_tokens += n_tok + 1
        block = " ".join(para) + "\n\n"
        total_tokens += 1  # the newline token
        texts[fi].append(block)
        sizes[fi] += len(block)
        fi = (fi + 1) % N_FILES

    for i in range(N_FILES):
        with open(os.path.join(base, "corpus", f"part{i}.txt"), "w") as f:
            f.write("".join(texts[i]))

    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "\\n"]
    vocab += list(".!?,;:'\"()-")
    vocab += [c for c in "abcdefghijklmnopqrstuvwxyz0123456789"]
    vocab += ["##" + c for c in "abcdefghijklmnopqrstuvwxyz0123456789"]
    order = np.argsort(-word_counts, kind="stable")
    vocab += [words[i] for i in order]
    with open(os.path.join(base, "vocab.txt"), "w") as f:
        f.write("\n".join(vocab) + "\n")

    used = int((word_counts > 0).sum())
    emp = word_counts[word_counts > 0] / word_counts.sum()
    h_emp = float(-(emp * np.log(emp)).sum())
    print(f"vocab size          : {len(vocab)}")
    print(f"word types used     : {used}/{N_WORDS}")
    print(f"corpus bytes        : {sum(sizes)} across {N_FILES} files")
    print(f"corpus word tokens  : {total_tokens}")
    print(f"unigram H (design)  : {h_uni:.3f} nats")
    print(f"unigram H (empiric) : {h_emp:.3f} nats")
    print(f"bigram H (design)   : {h_bi:.3f} nats")
    print(f"ln(vocab)           : {math.log(len(vocab)):.3f} nats")


if __name__ == "__main__":
    main()
