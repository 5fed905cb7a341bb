"""Reference corpus BLEU for the fixtures in tests/unit/test_evalstats.cpp.

Uses sacrebleu with whitespace tokenization and no smoothing; every fixture has at least
one match at each n-gram order, so smoothing never applies.
"""
import sacrebleu

FIXTURES = {
    "pair": (["the cat sat on the mat"], ["the cat sat on a mat"]),
    "corpus": (
        ["Yara is from Egypt and likes tea", "the red fox jumps over the dog", "one two three four"],
        ["Yara is from Egypt and she likes tea", "the quick red fox jumps over the lazy dog", "one two three four five"],
    ),
}

for name, (hyp, ref) in FIXTURES.items():
    s = sacrebleu.corpus_bleu(hyp, [ref], tokenize="none", smooth_method="none", force=True)
    print(f"{name} {s.score:.12f}")
