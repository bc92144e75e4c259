"""Text-generation metrics: METEOR, chrF, TER, ROUGE-1, BLEU-4, mean token
probability, and average word frequency.

All functions are pure and deterministic.  METEOR uses exact + Porter-stem
matching stages with the classic recall-weighted harmonic mean and a
fragmentation penalty; chrF and TER are provided as drop-in replacements for
the agreement term in ablation runs.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations, permutations, product

from .stemmer import porter_stem
from .tokenizer import TokenSequence


@dataclass(frozen=True)
class MetricScore:
    """A metric value with its declared range and computation details."""

    value: float
    metric_name: str
    range_low: float = 0.0
    range_high: float = 1.0
    details: dict = field(default_factory=dict)


@dataclass(frozen=True)
class AlignmentResult:
    """Unigram alignment statistics between a hypothesis and a reference."""

    matches: int
    chunks: int
    pred_len: int
    ref_len: int
    stage_counts: dict[str, int] = field(default_factory=dict)


@dataclass(frozen=True)
class MeteorParams:
    """METEOR parameters: recall-weighted F-mean (9:1), fragmentation penalty
    0.5 * frag^3, exact then stem matching."""

    recall_weight: float = 9.0
    gamma: float = 0.5
    beta: float = 3.0
    stages: tuple[str, ...] = ("exact", "stem")


_STAGE_KEYS = {
    "exact": lambda tok: tok,
    "stem": porter_stem,
}

# Upper bound on full alignments examined when minimizing chunk count; beyond
# this the deterministic in-order pairing is used instead.
_ALIGN_SEARCH_LIMIT = 20000


def _chunk_count(pairs: list[tuple[int, int]]) -> int:
    if not pairs:
        return 0
    ordered = sorted(pairs)
    chunks = 1
    for (pp, pr), (cp, cr) in zip(ordered, ordered[1:]):
        if cp != pp + 1 or cr != pr + 1:
            chunks += 1
    return chunks


def _stage_groups(tokens: list[str], unmatched: list[int], key_fn) -> dict[str, list[int]]:
    groups: dict[str, list[int]] = {}
    for i in unmatched:
        groups.setdefault(key_fn(tokens[i]), []).append(i)
    return groups


def align(pred: TokenSequence, ref: TokenSequence, stages: tuple[str, ...] = ("exact", "stem")) -> AlignmentResult:
    """Align hypothesis and reference unigrams stage by stage.

    Each stage matches as many remaining tokens as possible (per-key multiset
    minimum).  Among the maximal alignments, the one with the fewest chunks is
    selected by bounded exhaustive search over which occurrences pair up and
    how; past the search budget a deterministic in-order pairing is used.
    """
    pred_toks = list(pred.tokens)
    ref_toks = list(ref.tokens)
    stage_counts: dict[str, int] = {}

    # Per-stage match counts are fixed by the multisets, independent of which
    # occurrences are chosen; only the chunk count varies with the choice.
    best: tuple[int, tuple[tuple[int, int], ...]] | None = None
    leaves = 0
    aborted = False

    def recurse(stage_i: int, un_p: list[int], un_r: list[int], pairs: list[tuple[int, int]]) -> None:
        nonlocal best, leaves, aborted
        if aborted:
            return
        if stage_i == len(stages):
            leaves += 1
            if leaves > _ALIGN_SEARCH_LIMIT:
                aborted = True
                return
            key = (_chunk_count(pairs), tuple(sorted(pairs)))
            if best is None or key < best:
                best = key
            return
        key_fn = _STAGE_KEYS[stages[stage_i]]
        p_groups = _stage_groups(pred_toks, un_p, key_fn)
        r_groups = _stage_groups(ref_toks, un_r, key_fn)
        shared = sorted(set(p_groups) & set(r_groups))
        options = []
        for key in shared:
            pp, rr = p_groups[key], r_groups[key]
            k = min(len(pp), len(rr))
            options.append(
                [
                    (pc, rp)
                    for pc in combinations(pp, k)
                    for rc in combinations(rr, k)
                    for rp in permutations(rc)
                ]
            )
        for combo in product(*options):
            new_pairs = list(pairs)
            used_p, used_r = set(), set()
            for pc, rc in combo:
                new_pairs.extend(zip(pc, rc))
                used_p.update(pc)
                used_r.update(rc)
            recurse(
                stage_i + 1,
                [i for i in un_p if i not in used_p],
                [i for i in un_r if i not in used_r],
                new_pairs,
            )
            if aborted:
                return

    recurse(0, list(range(len(pred_toks))), list(range(len(ref_toks))), [])

    if aborted or best is None:
        # Deterministic fallback: first-k occurrences per key, in order.
        pairs: list[tuple[int, int]] = []
        un_p = list(range(len(pred_toks)))
        un_r = list(range(len(ref_toks)))
        for stage in stages:
            key_fn = _STAGE_KEYS[stage]
            p_groups = _stage_groups(pred_toks, un_p, key_fn)
            r_groups = _stage_groups(ref_toks, un_r, key_fn)
            for key in sorted(set(p_groups) & set(r_groups)):
                pp, rr = p_groups[key], r_groups[key]
                k = min(len(pp), len(rr))
                pairs.extend(zip(pp[:k], rr[:k]))
            used_p = {p for p, _ in pairs}
            used_r = {r for _, r in pairs}
            un_p = [i for i in un_p if i not in used_p]
            un_r = [i for i in un_r if i not in used_r]
        chosen = tuple(sorted(pairs))
        chunks = _chunk_count(list(chosen))
    else:
        chunks, chosen = best

    # Recover per-stage counts (choice-independent).
    un_p = list(range(len(pred_toks)))
    un_r = list(range(len(ref_toks)))
    for stage in stages:
        key_fn = _STAGE_KEYS[stage]
        p_groups = _stage_groups(pred_toks, un_p, key_fn)
        r_groups = _stage_groups(ref_toks, un_r, key_fn)
        count = 0
        for key in set(p_groups) & set(r_groups):
            k = min(len(p_groups[key]), len(r_groups[key]))
            count += k
            p_groups[key] = p_groups[key][k:]
            r_groups[key] = r_groups[key][k:]
        stage_counts[stage] = count
        un_p = [i for group in p_groups.values() for i in group]
        un_r = [i for group in r_groups.values() for i in group]

    return AlignmentResult(
        matches=len(chosen),
        chunks=chunks,
        pred_len=len(pred_toks),
        ref_len=len(ref_toks),
        stage_counts=stage_counts,
    )


def meteor(pred: TokenSequence, ref: TokenSequence, params: MeteorParams = MeteorParams()) -> MetricScore:
    """METEOR: recall-weighted F-mean discounted by a fragmentation penalty.

    score = Fmean * (1 - gamma * (chunks / matches) ** beta), with
    Fmean = (1 + w) * P * R / (w * P + R) for recall weight w.
    Zero when nothing aligns.
    """
    alignment = align(pred, ref, params.stages)
    details: dict = {
        "matches": alignment.matches,
        "chunks": alignment.chunks,
        "stage_counts": alignment.stage_counts,
    }
    if alignment.matches == 0:
        return MetricScore(0.0, "meteor", details=details)
    precision = alignment.matches / alignment.pred_len
    recall = alignment.matches / alignment.ref_len
    w = params.recall_weight
    fmean = (1 + w) * precision * recall / (w * precision + recall)
    penalty = params.gamma * (alignment.chunks / alignment.matches) ** params.beta
    details.update(precision=precision, recall=recall, fmean=fmean, penalty=penalty)
    return MetricScore(fmean * (1 - penalty), "meteor", details=details)


def _char_ngrams(text: str, n: int) -> Counter:
    stripped = "".join(text.split())
    return Counter(stripped[i : i + n] for i in range(len(stripped) - n + 1))


def chrf(pred: str, ref: str, max_n: int = 6, beta: float = 2.0) -> MetricScore:
    """Character n-gram F-beta averaged over orders 1..max_n.

    Whitespace is removed before n-gramming.  Orders where neither side has
    any n-grams are skipped; identical non-empty strings score 1.
    """
    f_scores = []
    for n in range(1, max_n + 1):
        pred_grams = _char_ngrams(pred, n)
        ref_grams = _char_ngrams(ref, n)
        pred_total = sum(pred_grams.values())
        ref_total = sum(ref_grams.values())
        if pred_total == 0 and ref_total == 0:
            continue
        overlap = sum((pred_grams & ref_grams).values())
        p = overlap / pred_total if pred_total else 0.0
        r = overlap / ref_total if ref_total else 0.0
        if p + r == 0:
            f_scores.append(0.0)
        else:
            f_scores.append((1 + beta**2) * p * r / (beta**2 * p + r))
    value = sum(f_scores) / len(f_scores) if f_scores else 0.0
    return MetricScore(value, "chrf", details={"orders_used": len(f_scores)})


def _edit_distance(a: list[str], b: list[str]) -> int:
    prev = list(range(len(b) + 1))
    for i, tok_a in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, tok_b in enumerate(b, start=1):
            cost = 0 if tok_a == tok_b else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev = cur
    return prev[-1]


def _is_sublist(needle: list[str], haystack: list[str]) -> bool:
    n = len(needle)
    return any(haystack[i : i + n] == needle for i in range(len(haystack) - n + 1))


def ter(pred: TokenSequence, ref: TokenSequence) -> MetricScore:
    """Translation edit rate: (edits + shifts) / reference length.

    Edits come from exact dynamic-programming edit distance; shifts from the
    greedy heuristic of moving a hypothesis span (one that occurs verbatim in
    the reference) wherever it most reduces the edit distance, repeated until
    no move helps.
    """
    if len(ref) == 0:
        raise ValueError("undefined TER: empty reference")
    hyp = list(pred.tokens)
    ref_toks = list(ref.tokens)
    edits = _edit_distance(hyp, ref_toks)
    shifts = 0
    while edits > 0:
        best_edits = edits
        best_hyp = None
        for i in range(len(hyp)):
            for j in range(i + 1, len(hyp) + 1):
                span = hyp[i:j]
                if not _is_sublist(span, ref_toks):
                    continue
                rest = hyp[:i] + hyp[j:]
                for pos in range(len(rest) + 1):
                    if pos == i:
                        continue
                    candidate = rest[:pos] + span + rest[pos:]
                    e = _edit_distance(candidate, ref_toks)
                    if e < best_edits:
                        best_edits = e
                        best_hyp = candidate
        if best_hyp is None:
            break
        hyp = best_hyp
        edits = best_edits
        shifts += 1
    value = (edits + shifts) / len(ref_toks)
    return MetricScore(value, "ter", range_high=math.inf, details={"edits": edits, "shifts": shifts})


def rouge1(pred: TokenSequence, ref: TokenSequence) -> MetricScore:
    """Unigram-overlap F1 with clipped counts; 0 when either side is empty."""
    if len(pred) == 0 or len(ref) == 0:
        return MetricScore(0.0, "rouge1")
    pred_counts = Counter(pred.tokens)
    ref_counts = Counter(ref.tokens)
    overlap = sum((pred_counts & ref_counts).values())
    if overlap == 0:
        return MetricScore(0.0, "rouge1")
    precision = overlap / len(pred)
    recall = overlap / len(ref)
    f1 = 2 * precision * recall / (precision + recall)
    return MetricScore(f1, "rouge1", details={"overlap": overlap, "precision": precision, "recall": recall})


def _ngrams(tokens: tuple[str, ...], n: int) -> Counter:
    return Counter(tokens[i : i + n] for i in range(len(tokens) - n + 1))


def bleu4(pred: TokenSequence, refs: list[TokenSequence], smoothing: str = "add_one") -> MetricScore:
    """BLEU-4: geometric mean of clipped n-gram precisions times brevity penalty.

    With the default "add_one" policy a zero count at order n >= 2 is smoothed
    to (m + 1) / (total + 1); a zero unigram precision always yields 0.
    The smoothing orders actually applied are recorded in details.
    """
    if not refs:
        raise ValueError("bleu4 requires at least one reference")
    if smoothing not in ("add_one", "none"):
        raise ValueError(f"unknown smoothing policy {smoothing!r}")
    c = len(pred)
    details: dict = {"smoothing": smoothing, "smoothed_orders": []}
    if c == 0:
        return MetricScore(0.0, "bleu4", details=details)

    log_sum = 0.0
    for n in range(1, 5):
        pred_grams = _ngrams(pred.tokens, n)
        total = max(c - n + 1, 0)
        max_ref: Counter = Counter()
        for ref in refs:
            for gram, cnt in _ngrams(ref.tokens, n).items():
                if cnt > max_ref[gram]:
                    max_ref[gram] = cnt
        matched = sum(min(cnt, max_ref[gram]) for gram, cnt in pred_grams.items())
        if n == 1:
            if matched == 0:
                return MetricScore(0.0, "bleu4", details=details)
            p = matched / total
        elif matched == 0 and smoothing == "add_one":
            p = (matched + 1) / (total + 1)
            details["smoothed_orders"].append(n)
        elif total == 0 or matched == 0:
            return MetricScore(0.0, "bleu4", details=details)
        else:
            p = matched / total
        log_sum += 0.25 * math.log(p)

    ref_len = min((len(r) for r in refs), key=lambda rl: (abs(rl - c), rl))
    bp = 1.0 if c > ref_len else math.exp(1 - ref_len / c)
    details.update(brevity_penalty=bp, pred_len=c, ref_len=ref_len)
    return MetricScore(bp * math.exp(log_sum), "bleu4", details=details)


def mean_token_prob(probs: list[float]) -> float:
    """Arithmetic mean of per-token probabilities; each must lie in (0, 1]."""
    if not probs:
        raise ValueError("no generated tokens")
    for p in probs:
        if not (0.0 < p <= 1.0):
            raise ValueError(f"token probability {p!r} outside (0, 1]")
    return math.fsum(probs) / len(probs)


@dataclass(frozen=True)
class WordFrequencyTable:
    """Relative unigram frequencies with a positive floor for unknown tokens."""

    frequencies: dict[str, float]
    floor_frequency: float = 1e-8
    corpus_name: str = ""

    def __post_init__(self):
        if self.floor_frequency <= 0:
            raise ValueError("floor_frequency must be positive")
        for token, freq in self.frequencies.items():
            if freq <= 0:
                raise ValueError(f"non-positive frequency for token {token!r}")
        if self.frequencies and self.floor_frequency > min(self.frequencies.values()):
            raise ValueError("floor_frequency exceeds the smallest stored frequency")

    def lookup(self, token: str) -> float:
        return self.frequencies.get(token, self.floor_frequency)

    @classmethod
    def from_counts(cls, counts: dict[str, int], floor_frequency: float = 1e-8, corpus_name: str = "") -> "WordFrequencyTable":
        total = sum(counts.values())
        if total <= 0:
            raise ValueError("empty table")
        freqs = {tok: cnt / total for tok, cnt in counts.items() if cnt > 0}
        floor = min([floor_frequency] + list(freqs.values()))
        return cls(frequencies=freqs, floor_frequency=floor, corpus_name=corpus_name)


def avg_word_frequency(tokens: TokenSequence, table: WordFrequencyTable) -> float:
    """Mean relative corpus frequency of the tokens, flooring unknown words."""
    if len(tokens) == 0:
        raise ValueError("cannot average word frequency of an empty token sequence")
    return math.fsum(table.lookup(tok) for tok in tokens) / len(tokens)
