"""Evaluation metrics: navigation (TL/NE/SR/OSR/SPL/GP), grounding
(RGS/RGSPL), and text generation (EM, BLEU-4, ROUGE-L, CIDEr, METEOR-lite).

Text metrics share one normalization (lowercase, whitespace tokens; EM also
strips terminal punctuation). CIDEr is corpus-scoped: document frequencies
come from the reference sets of the whole batch. METEOR-lite aligns exact
matches only, maximizing matches then minimizing chunks.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import DataError, EmptyReportError


@dataclass
class NavReport:
    TL: float
    NE: float
    SR: int
    OSR: int
    SPL: float
    GP: float


def nav_metrics(world, episode, trajectory, threshold: float) -> NavReport:
    visited = trajectory.visited
    if not visited:
        raise DataError("trajectory is empty")
    if visited[0] != episode.start:
        raise DataError("trajectory start does not match the episode")
    goals = list(episode.goal_viewpoints)

    tl = 0.0
    for a, b in zip(visited, visited[1:]):
        if b not in dict(world.neighbors(a)):
            raise DataError(f"trajectory hops over non-edge {a}->{b}")
        tl += world.edge_length(a, b)

    from_start = world.distances_from(episode.start)
    l = min(float(from_start[g]) for g in goals)
    from_final = world.distances_from(visited[-1])
    ne = min(float(from_final[g]) for g in goals)
    sr = 1 if ne <= threshold else 0

    osr = 0
    for g in goals:
        dist_g = world.distances_from(g)
        if min(float(dist_g[v]) for v in visited) <= threshold:
            osr = 1
            break

    p = max(tl, l)
    spl = float(sr) * (l / p if p > 0 else 1.0)
    gp = l - ne
    return NavReport(TL=tl, NE=ne, SR=sr, OSR=osr, SPL=spl, GP=gp)


def grounding_metrics(world, episode, trajectory, selected_object: int,
                      threshold: float):
    """(RGS, RGSPL): correct object chosen at a successful endpoint, and its
    path-length-weighted form."""
    report = nav_metrics(world, episode, trajectory, threshold)
    correct = episode.target_object is not None and selected_object == episode.target_object[1]
    rgs = 1 if (report.SR == 1 and correct) else 0
    from_start = world.distances_from(episode.start)
    l = min(float(from_start[g]) for g in episode.goal_viewpoints)
    p = max(report.TL, l)
    rgspl = float(rgs) * (l / p if p > 0 else 1.0)
    return rgs, rgspl


# -- text metrics ---------------------------------------------------------------

_TERMINAL_PUNCT = ".?!,:;"


def normalize_em(text: str) -> str:
    text = " ".join(text.lower().split())
    while text and text[-1] in _TERMINAL_PUNCT:
        text = text[:-1].rstrip()
    return text


def _tokens(text: str) -> list:
    return text.lower().split()


def em(candidate: str, references) -> int:
    cand = normalize_em(candidate)
    return 1 if any(cand == normalize_em(r) for r in references) else 0


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu4(candidate: str, references) -> float:
    """Sentence BLEU: clipped precisions n=1..4, add-one smoothing for
    n >= 2, brevity penalty against the closest reference length."""
    cand = _tokens(candidate)
    refs = [_tokens(r) for r in references]
    if not cand or not refs:
        return 0.0
    log_sum = 0.0
    for n in range(1, 5):
        hyp = _ngrams(cand, n)
        total = sum(hyp.values())
        clipped = 0
        for g, c in hyp.items():
            best = max(r_counts.get(g, 0) for r_counts in (_ngrams(r, n) for r in refs))
            clipped += min(c, best)
        if n == 1:
            if clipped == 0:
                return 0.0
            p = clipped / total
        else:
            p = (clipped + 1.0) / (total + 1.0)
        log_sum += np.log(p)
    c = len(cand)
    r = min((abs(len(r) - c), len(r)) for r in refs)[1]
    bp = np.exp(1.0 - r / c) if c < r else 1.0
    return float(bp * np.exp(log_sum / 4.0))


def _lcs_len(a, b) -> int:
    m, n = len(a), len(b)
    dp = np.zeros((m + 1, n + 1), dtype=np.int64)
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            if a[i - 1] == b[j - 1]:
                dp[i, j] = dp[i - 1, j - 1] + 1
            else:
                dp[i, j] = max(dp[i - 1, j], dp[i, j - 1])
    return int(dp[m, n])


ROUGE_BETA = 1.2


def rouge_l(candidate: str, references) -> float:
    """Max over references of the LCS F-measure with beta = 1.2."""
    cand = _tokens(candidate)
    if not cand:
        return 0.0
    best = 0.0
    b2 = ROUGE_BETA ** 2
    for ref in references:
        r_toks = _tokens(ref)
        if not r_toks:
            continue
        lcs = _lcs_len(cand, r_toks)
        if lcs == 0:
            continue
        prec = lcs / len(cand)
        rec = lcs / len(r_toks)
        f = (1 + b2) * prec * rec / (rec + b2 * prec)
        best = max(best, f)
    return best


def cider(items) -> list:
    """Plain CIDEr over a corpus of (candidate, references) items.

    For n = 1..4: cosine between tf-idf n-gram vectors of the candidate and
    each reference, averaged over references and n, scaled by 10. idf is
    ln(N / df) with df counted over items whose reference set contains the
    n-gram.
    """
    n_items = len(items)
    if n_items == 0:
        return []
    dfs = [Counter() for _ in range(4)]
    for _, references in items:
        for n in range(1, 5):
            seen = set()
            for ref in references:
                seen.update(_ngrams(_tokens(ref), n).keys())
            for g in seen:
                dfs[n - 1][g] += 1

    def tfidf(counts, n):
        return {g: c * np.log(n_items / dfs[n - 1][g])
                for g, c in counts.items() if dfs[n - 1].get(g, 0) > 0}

    def cosine(a, b):
        if not a or not b:
            return 0.0
        dot = sum(w * b[g] for g, w in a.items() if g in b)
        na = np.sqrt(sum(w * w for w in a.values()))
        nb = np.sqrt(sum(w * w for w in b.values()))
        if na == 0.0 or nb == 0.0:
            return 0.0
        return dot / (na * nb)

    scores = []
    for candidate, references in items:
        cand = _tokens(candidate)
        acc = 0.0
        for n in range(1, 5):
            vec_c = tfidf(_ngrams(cand, n), n)
            sims = [cosine(vec_c, tfidf(_ngrams(_tokens(r), n), n)) for r in references]
            acc += float(np.mean(sims)) if sims else 0.0
        scores.append(10.0 * acc / 4.0)
    return scores


METEOR_ALPHA = 0.9
METEOR_GAMMA = 0.5
METEOR_BETA = 3.0
_METEOR_NODE_CAP = 250000


def _meteor_alignment(cand, ref):
    """(matches, min_chunks) of a maximal exact-match alignment.

    Exhaustive branch-and-bound over duplicate-word pairings; texts in this
    domain are short with few duplicates, so the cap is never the limit in
    practice (greedy in-order pairing on overflow).
    """
    c_counts = Counter(cand)
    r_counts = Counter(ref)
    matches = sum(min(c, r_counts[w]) for w, c in c_counts.items() if w in r_counts)
    if matches == 0:
        return 0, 0
    quota = {w: min(c_counts[w], r_counts[w]) for w in c_counts if w in r_counts}

    best = [matches + 1]  # upper bound on chunks
    nodes = [0]

    def dfs(i, remaining, used_ref, last_c, last_r, chunks):
        if chunks >= best[0]:
            return
        nodes[0] += 1
        if nodes[0] > _METEOR_NODE_CAP:
            return
        if sum(remaining.values()) == 0:
            best[0] = min(best[0], chunks)
            return
        if i >= len(cand):
            return
        w = cand[i]
        if remaining.get(w, 0) > 0:
            surplus = sum(1 for j in range(i, len(cand)) if cand[j] == w) > remaining[w]
            for j, rw in enumerate(ref):
                if rw != w or j in used_ref:
                    continue
                remaining[w] -= 1
                used_ref.add(j)
                contiguous = last_c == i - 1 and last_r == j - 1
                dfs(i + 1, remaining, used_ref, i, j,
                    chunks + (0 if contiguous else 1))
                used_ref.discard(j)
                remaining[w] += 1
            if surplus:
                dfs(i + 1, remaining, used_ref, last_c, last_r, chunks)
        else:
            dfs(i + 1, remaining, used_ref, last_c, last_r, chunks)

    dfs(0, dict(quota), set(), -2, -2, 0)
    chunks = best[0] if best[0] <= matches else _greedy_chunks(cand, ref, quota)
    return matches, chunks


def _greedy_chunks(cand, ref, quota):
    remaining = dict(quota)
    used_ref = set()
    pairs = []
    for i, w in enumerate(cand):
        if remaining.get(w, 0) <= 0:
            continue
        for j, rw in enumerate(ref):
            if rw == w and j not in used_ref:
                pairs.append((i, j))
                used_ref.add(j)
                remaining[w] -= 1
                break
    chunks = 0
    last = (-2, -2)
    for i, j in pairs:
        if not (i == last[0] + 1 and j == last[1] + 1):
            chunks += 1
        last = (i, j)
    return chunks


def meteor_lite(candidate: str, references) -> float:
    """METEOR without stemming or synonymy: exact-match alignment, harmonic
    precision/recall mean (alpha 0.9), chunk penalty gamma (ch/m)^beta."""
    cand = _tokens(candidate)
    if not cand:
        return 0.0
    best = 0.0
    for ref in references:
        r_toks = _tokens(ref)
        if not r_toks:
            continue
        matches, chunks = _meteor_alignment(cand, r_toks)
        if matches == 0:
            continue
        prec = matches / len(cand)
        rec = matches / len(r_toks)
        f_mean = prec * rec / (METEOR_ALPHA * prec + (1 - METEOR_ALPHA) * rec)
        penalty = METEOR_GAMMA * (chunks / matches) ** METEOR_BETA
        best = max(best, f_mean * (1.0 - penalty))
    return best


# -- aggregation -----------------------------------------------------------------

_PERCENT_FIELDS = {"SR", "OSR", "SPL", "RGS", "RGSPL", "EM", "ACC", "format_valid"}


def aggregate(reports) -> dict:
    """Means per kind and overall; rate-like fields reported as percentages.

    reports: list of dicts with a "kind" key and numeric metric fields.
    """
    reports = list(reports)
    if not reports:
        raise EmptyReportError("nothing to aggregate")

    def summarize(rows):
        fields = sorted({k for row in rows for k in row if k != "kind"
                         and isinstance(row[k], (int, float))})
        out = {"count": len(rows)}
        for f in fields:
            vals = [row[f] for row in rows if f in row]
            mean = float(np.mean(vals))
            out[f] = mean * 100.0 if f in _PERCENT_FIELDS else mean
        return out

    kinds = sorted({r["kind"] for r in reports})
    return {
        "overall": summarize(reports),
        "per_kind": {k: summarize([r for r in reports if r["kind"] == k]) for k in kinds},
    }
