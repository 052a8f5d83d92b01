"""Hypothesis strategies for randomized triplet corpora."""

from __future__ import annotations

from hypothesis import strategies as st

from sgtriplets.core import AlignedTriplet, Lexicon, LexiconKind, RawTriplet, Source

ENTITY_WORDS = ("man", "dog", "table", "cup", "tree")
PRED_WORDS = ("on", "near", "lying on", "has", "covered in", "covering", "under", "with")


@st.composite
def predicate_lexicons(draw, max_size=8):
    """Small predicate lexicons whose index order differs from name order."""
    names = draw(st.permutations(PRED_WORDS))[: draw(st.integers(1, max_size))]
    return Lexicon(LexiconKind.PREDICATE, tuple(names), "random")


@st.composite
def aligned_triplets(draw, n_predicates, max_images=10, allow_none=False, max_entities=5):
    def idx(n):
        s = st.integers(1, n)
        return st.one_of(st.none(), s) if allow_none else s

    image = draw(st.integers(1, max_images))
    s_cls = draw(idx(max_entities))
    o_cls = draw(idx(max_entities))
    p_cls = draw(idx(n_predicates))
    s_word = ENTITY_WORDS[(s_cls or 1) - 1]
    # same class can come from two different mentions ("man" vs "men")
    o_word = ENTITY_WORDS[(o_cls or 1) - 1] + draw(st.sampled_from(["", "s"]))
    raw = RawTriplet(s_word, PRED_WORDS[(p_cls or 1) - 1], o_word,
                     draw(st.sampled_from(list(Source))), str(image))
    return AlignedTriplet(s_cls, p_cls, o_cls, raw)


@st.composite
def corpora(draw, max_triplets=50, allow_none=False):
    lex = draw(predicate_lexicons())
    items = draw(st.lists(aligned_triplets(len(lex), allow_none=allow_none), max_size=max_triplets))
    return lex, items
