"""Shared test machinery: finite-difference gradient checking with relu
kink clearing, and deterministic synthetic corpora."""

import numpy as np

import titleforge.tensor
import titleforge.tensor as T
from titleforge.corpus import Language, PostTriplet

FD_EPS = 1e-3
FD_RTOL = 1e-4
# Absolute slack for the central-difference oracle itself: its truncation
# error at eps=1e-3 measures ~1e-6 on these landscapes, so coordinates
# with near-zero gradients are compared against that noise floor.
FD_ATOL = 5e-6
KINK_CLEARANCE = 2e-2  # 20x the FD step


def clear_relu_kinks(run_forward, b1_params, clearance=KINK_CLEARANCE, rounds=12):
    """Nudge FFN biases so no relu input sits within ``clearance`` of zero.

    Central differences are only a valid oracle where the loss is smooth
    on the whole [theta-eps, theta+eps] interval; this picks an evaluation
    point where every relu is locally linear. ``run_forward`` is called
    with a spy list that receives each relu input array in call order,
    which must align with ``b1_params`` (one entry per FFN application).
    """
    relu_orig = titleforge.tensor.relu

    def capture():
        seen = []

        def relu_spy(x):
            seen.append(x.data)
            return relu_orig(x)

        titleforge.tensor.relu = relu_spy
        try:
            T.active_tape().reset()
            with T.no_grad():
                run_forward()
        finally:
            titleforge.tensor.relu = relu_orig
        return seen

    grid = np.linspace(-8 * clearance, 8 * clearance, 321)
    for _ in range(rounds):
        seen = capture()
        assert len(seen) == len(b1_params), "spy/param alignment broke"
        nudged = 0
        for arr, b1 in zip(seen, b1_params):
            cols = arr.reshape(-1, arr.shape[-1])
            for j in range(cols.shape[1]):
                col = cols[:, j]
                if np.abs(col).min() < clearance:
                    scores = [np.abs(col + d).min() for d in grid]
                    b1.data[j] += grid[int(np.argmax(scores))]
                    nudged += 1
        if nudged == 0:
            break
    final = capture()
    min_clear = min(float(np.abs(a).min()) for a in final)
    assert min_clear >= clearance, f"could not clear relu kinks ({min_clear:.2e})"
    return min_clear


def finite_difference_check(named_params, build_loss, eps=FD_EPS,
                            rtol=FD_RTOL, atol=FD_ATOL):
    """Analytic grads vs 64-bit central differences over every parameter.

    Passes when |analytic - fd| <= atol + rtol * max(|analytic|, |fd|)
    elementwise. Returns (worst_ratio, max_abs_diff, strict_rel) where
    worst_ratio is the largest |a-f| / (atol + rtol*max(|a|,|f|)) (<= 1
    means pass) and strict_rel is the plain relative error over
    coordinates with magnitude >= 1e-2.
    """
    named_params = list(named_params)
    T.active_tape().reset()
    loss = build_loss()
    T.backward(loss)
    grads = {}
    for name, p in named_params:
        assert p.grad is not None, f"no gradient reached {name}"
        grads[name] = p.grad.copy()

    def value():
        T.active_tape().reset()
        with T.no_grad():
            return float(build_loss().data)

    worst_ratio = 0.0
    max_abs_diff = 0.0
    strict_rel = 0.0
    for name, p in named_params:
        flat = p.data.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = value()
            flat[i] = orig - eps
            lo = value()
            flat[i] = orig
            fd[i] = (hi - lo) / (2 * eps)
        g = grads[name].reshape(-1)
        diff = np.abs(g - fd)
        mag = np.maximum(np.abs(g), np.abs(fd))
        worst_ratio = max(worst_ratio, float((diff / (atol + rtol * mag)).max()))
        max_abs_diff = max(max_abs_diff, float(diff.max()))
        big = mag >= 1e-2
        if big.any():
            strict_rel = max(strict_rel, float((diff[big] / mag[big]).max()))
    return worst_ratio, max_abs_diff, strict_rel


def ffn_bias_params(model):
    """b1 tensors in forward call order for one encode+decode pass."""
    c = model.config
    encoder = [model.params[f"encoder.{i}.ffn.b1"] for i in range(c.n_layers)]
    decoder = [model.params[f"decoder.{i}.ffn.b1"] for i in range(c.n_layers)]
    return encoder + decoder


# --- independent metric oracles ----------------------------------------------


def rouge_n_oracle(cand, ref, n):
    """Brute-force multiset n-gram intersection by greedy matching."""
    cand_ngrams = [tuple(cand[i:i + n]) for i in range(len(cand) - n + 1)]
    ref_ngrams = [tuple(ref[i:i + n]) for i in range(len(ref) - n + 1)]
    if not cand_ngrams or not ref_ngrams:
        return (0.0, 0.0, 0.0)
    remaining = list(ref_ngrams)
    overlap = 0
    for g in cand_ngrams:
        if g in remaining:
            remaining.remove(g)
            overlap += 1
    p = overlap / len(cand_ngrams)
    r = overlap / len(ref_ngrams)
    f1 = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return (p, r, f1)


def lcs_oracle(a, b):
    """Memoized recursive LCS, structurally unlike the iterative DP."""
    from functools import lru_cache

    @lru_cache(maxsize=None)
    def go(i, j):
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + go(i + 1, j + 1)
        return max(go(i + 1, j), go(i, j + 1))

    return go(0, 0)


def bm25_oracle_scores(docs, query, k1=1.2, b=0.75):
    """Everything recomputed from raw docs in one double loop."""
    import math

    n = len(docs)
    avgdl = sum(len(d) for d in docs) / n
    scores = []
    for doc in docs:
        s = 0.0
        for term in query:
            tf = doc.count(term)
            if tf == 0:
                continue
            df = sum(1 for d in docs if term in d)
            idf = math.log((n - df + 0.5) / (df + 0.5) + 1.0)
            s += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(doc) / avgdl))
        scores.append(s)
    return scores


# --- synthetic corpora -------------------------------------------------------

VERBS = ["parse", "sort", "merge", "filter", "cache", "encode", "split", "join"]
NOUNS = ["list", "map", "string", "stream", "buffer", "array", "queue", "graph"]
LIBS = {
    Language.JAVA: ["guava", "spring", "jackson", "junit"],
    Language.CSHARP: ["linq", "efcore", "nunit", "aspnet"],
    Language.PYTHON: ["pandas", "numpy", "flask", "pytest"],
    Language.JAVASCRIPT: ["react", "lodash", "express", "jest"],
}


def memorization_triplets(n_per_language=16):
    """Distinct, short, fully learnable posts for overfit smoke tests.

    Titles reuse words that appear verbatim in the description and code,
    so a small model can map inputs to titles exactly.
    """
    corpora = {}
    next_id = 1
    for lang in Language:
        triplets = []
        libs = LIBS[lang]
        for i in range(n_per_language):
            verb = VERBS[i % len(VERBS)]
            noun = NOUNS[(i // len(VERBS)) % len(NOUNS)]
            lib = libs[i % len(libs)]
            triplets.append(PostTriplet(
                post_id=next_id,
                language=lang,
                description=f"how can i {verb} a {noun} using {lib}",
                code=f"{lib}.{verb}({noun});",
                title=f"{verb} {noun} with {lib}",
            ))
            next_id += 1
        corpora[lang] = triplets
    return corpora


def modality_split_triplets(n_per_language, seed=0):
    """Posts whose titles lean mostly on description words.

    The description contains every title word; the code carries only a
    mangled echo of some of them plus one extra title word, so
    description-only inputs beat code-only inputs and both together beat
    either.
    """
    rng = np.random.default_rng(seed)
    corpora = {}
    next_id = 1
    for lang in Language:
        libs = LIBS[lang]
        triplets = []
        for _ in range(n_per_language):
            verb = VERBS[rng.integers(len(VERBS))]
            noun = NOUNS[rng.integers(len(NOUNS))]
            lib = libs[rng.integers(len(libs))]
            flag = ["async", "static", "global", "lazy"][rng.integers(4)]
            title = f"{verb} {noun} {flag} with {lib}"
            desc = f"i want to {verb} a {noun} using {lib} here"
            code = f"{lib}.api({flag}_{noun[:3]}x)"
            triplets.append(PostTriplet(next_id, lang, desc, code, title))
            next_id += 1
        corpora[lang] = triplets
    return corpora


def as_split_corpora(corpora, validation_fraction=0.25):
    """Wrap triplet lists as {'train': ..., 'validation': ...} maps."""
    out = {}
    for lang, triplets in corpora.items():
        n_val = max(1, int(len(triplets) * validation_fraction))
        out[lang] = {"train": triplets, "validation": triplets[:n_val], "test": triplets}
    return out
