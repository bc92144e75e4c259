"""Tour of the text metrics: tokenization, METEOR, chrF, TER, ROUGE-1, BLEU-4.

Run with:  python demos/metrics_tour.py
"""

from selective_rag import bleu4, chrf, meteor, rouge1, ter, tokenize

# Tokenization lowercases, splits punctuation, and collapses whitespace.
print("tokens:", tokenize("Who was named African footballer of the year 2014?").tokens)
print()

# METEOR aligns unigrams exactly and then by Porter stem, scores the
# alignment with a recall-weighted harmonic mean, and discounts fragmented
# (out-of-order) matches.
pred = tokenize("patrick wilson played raoul in the phantom of the opera")
ref = tokenize("raoul was played by patrick wilson")
score = meteor(pred, ref)
print(f"METEOR     {score.value:.4f}   matches={score.details['matches']} chunks={score.details['chunks']}")

# Identical sequences of length m score exactly 1 - 0.5 * (1/m)^3: the tiny
# residual penalty comes from the single aligned chunk.
same = tokenize("a b c d")
print(f"identity   {meteor(same, same).value:.7f}  (= 1 - 0.5 * (1/4)^3)")
print()

# chrF works on character n-grams, so it is gentler on morphology...
print(f"chrF       {chrf('he is walking', 'she was walking').value:.4f}")
# ...and TER counts edits plus block shifts, normalized by reference length.
shifted = ter(tokenize("quickly he ran"), tokenize("he ran quickly"))
print(f"TER        {shifted.value:.4f}   edits={shifted.details['edits']} shifts={shifted.details['shifts']}")
print()

# ROUGE-1 and BLEU-4 are the aggregate answer-quality metrics.
pred = tokenize("the nile is the longest river in africa")
refs = [tokenize("the nile is the longest river in the world")]
print(f"ROUGE-1    {rouge1(pred, refs[0]).value:.4f}")
result = bleu4(pred, refs)
print(f"BLEU-4     {result.value:.4f}   smoothed orders: {result.details['smoothed_orders']}")
