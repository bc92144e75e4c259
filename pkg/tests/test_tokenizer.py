from hypothesis import given
from hypothesis import strategies as st

from selective_rag.tokenizer import count_tokens, token_spans, tokenize, truncate_to_tokens


def test_empty_text_yields_empty_sequence():
    assert tokenize("").tokens == ()


def test_lowercases_and_splits_words():
    assert tokenize("The Phantom of the Opera").tokens == ("the", "phantom", "of", "the", "opera")


def test_punctuation_becomes_standalone_tokens():
    assert tokenize("footballer, 2014!").tokens == ("footballer", ",", "2014", "!")


def test_punctuation_rule_table():
    cases = {
        "a,b": ("a", ",", "b"),
        "it's": ("it", "'", "s"),
        "(x)": ("(", "x", ")"),
        "end.": ("end", "."),
        "one  two\tthree\n": ("one", "two", "three"),
        "semi;colon:dash-done": ("semi", ";", "colon", ":", "dash", "-", "done"),
        "50%+2": ("50", "%", "+", "2"),
        '"quoted"': ('"', "quoted", '"'),
    }
    for text, expected in cases.items():
        assert tokenize(text).tokens == expected, text


def test_source_text_retokenizes_to_same_tokens():
    seq = tokenize("Hello, World! 42")
    assert tokenize(seq.source_text).tokens == seq.tokens


@given(st.text(max_size=80))
def test_tokens_never_empty_or_whitespace(text):
    seq = tokenize(text)
    for tok in seq.tokens:
        assert tok
        assert not any(ch.isspace() for ch in tok)


@given(st.text(max_size=80))
def test_retokenizing_source_is_idempotent(text):
    seq = tokenize(text)
    assert tokenize(seq.source_text).tokens == seq.tokens


@given(st.text(max_size=80))
def test_spans_agree_with_tokens(text):
    seq = tokenize(text)
    spans = token_spans(text)
    assert len(spans) == len(seq.tokens) == count_tokens(text)
    assert [text[a:b].lower() for a, b in spans] == list(seq.tokens)


@given(st.text(max_size=80), st.integers(min_value=0, max_value=100))
def test_truncation_keeps_exact_token_prefix(text, n):
    truncated = truncate_to_tokens(text, n)
    original = tokenize(text).tokens
    assert tokenize(truncated).tokens == original[: min(n, len(original))]
