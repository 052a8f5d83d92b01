"""Conventional comparator: heuristic caption parser plus synonym-KB alignment.

The parser is deliberately simple. It models how rule-based scene-graph
parsers reduce a verb + preposition pair to the bare preposition
("lying on" becomes "on"), and how a static knowledge base drops
anything it cannot bridge to a target class. It is not a port of any
particular parser.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Union

from .core import CaptionRecord, Lexicon, RawTriplet, Source, normalize_lexeme
from .io import resolve_path

DETERMINERS = frozenset(
    "a an the some this these those his her their its my our your another each every several many few "
    "one two three four five six seven eight nine ten eleven twelve dozen couple pair group bunch".split()
)
PREPOSITIONS = frozenset(
    "on in at with near under above behind by of beside besides over across along against from into onto "
    "through to around inside below between underneath beneath atop toward towards outside up down for "
    "among upon off".split()
)
CONJUNCTIONS = frozenset("and while but or as where which who that whilst , ;".split())
AUXILIARIES = frozenset("is are was were be been being am".split())
# adverbial fillers inside multiword prepositions ("next to", "on top of", "in front of")
FILLERS = frozenset("next top front side middle edge very also just there here".split())
VERBS = frozenset(
    """sit sits sat stand stands stood hold holds held ride rides rode eat eats ate carry carries carried
    wear wears wore walk walks walked run runs ran lie lies lay lays laid look looks looked watch watches
    watched play plays played fly flies flew hang hangs hung graze grazes grazed has have cover covers
    covered top topped fill filled park parks parked make makes made stack stacked paint painted mount
    mounted attach attached surround surrounds surrounded display displayed place placed seat seated talk
    talks use uses used drive drives drove pull pulls pulled throw throws threw catch catches caught cut
    cuts kick kicks kicked lean leans leaned rest rests rested wait waits waited swing swings swung
    contain contains contained hit hits fill fills perch perches perched""".split()
)
NOT_VERBS = frozenset(
    """building ceiling painting clothing evening morning wedding king ring string thing something nothing
    everything anything sibling railing awning icing frosting topping stuffing pudding spring wing swing
    sling ding ping bing living dining parking sewing""".split()
)
IRREGULAR = {
    "sat": "sitting", "stood": "standing", "held": "holding", "ate": "eating", "wore": "wearing",
    "rode": "riding", "ran": "running", "lay": "laying", "laid": "laying", "hung": "hanging",
    "flew": "flying", "made": "making", "drove": "driving", "threw": "throwing", "caught": "catching",
    "swung": "swinging", "lie": "lying", "lies": "lying", "tied": "tying", "has": "has", "have": "has",
}
_CVC = re.compile(r"^[^aeiou]*[aeiou][^aeiouwxy]$")
_TOKEN = re.compile(r"[a-z]+(?:'[a-z]+)?|[,;]")


def participle(verb: str) -> str:
    """Untensed ``-ing`` form of a verb token via suffix stripping."""
    verb = verb.lower()
    if verb in IRREGULAR:
        return IRREGULAR[verb]
    if verb.endswith("ing"):
        return verb
    stem = verb
    # "-ed" forms only double when the written form already did (topped vs placed)
    may_double = True
    if stem.endswith("ies") and len(stem) > 4:
        stem = stem[:-3] + "y"
    elif stem.endswith(("ches", "shes", "sses", "xes", "zes")):
        stem = stem[:-2]
    elif stem.endswith("s") and not stem.endswith("ss"):
        stem = stem[:-1]
    elif stem.endswith("ied") and len(stem) > 4:
        stem = stem[:-3] + "y"
        may_double = False
    elif stem.endswith("ed") and len(stem) > 4:
        stem = stem[:-2]
        may_double = len(stem) > 2 and stem[-1] == stem[-2] and stem[-1] not in "aeiouls"
        if may_double:
            stem = stem[:-1]
    if stem.endswith("ie"):
        return stem[:-2] + "ying"
    if stem.endswith("e") and not stem.endswith(("ee", "ye", "oe")):
        return stem[:-1] + "ing"
    if may_double and _CVC.match(stem):
        return stem + stem[-1] + "ing"
    return stem + "ing"


def _is_verb(token: str) -> bool:
    if token in VERBS:
        return True
    return token.endswith("ing") and len(token) >= 5 and token not in NOT_VERBS


def _classify(token: str) -> str:
    if token in CONJUNCTIONS:
        return "CONJ"
    if token in AUXILIARIES:
        return "AUX"
    if token in DETERMINERS or token.endswith("'s") or token.isdigit():
        return "DET"
    if token in PREPOSITIONS:
        return "PREP"
    if token in FILLERS:
        return "SKIP"
    if _is_verb(token):
        return "VERB"
    return "NOUN"


def _chunks(tokens: list[str]) -> list[tuple[str, str]]:
    """Collapse a clause into (kind, value) chunks; noun phrases keep their head."""
    chunks: list[tuple[str, str]] = []
    for tok in tokens:
        kind = _classify(tok)
        if kind in ("DET", "AUX", "SKIP"):
            if kind == "DET" and chunks and chunks[-1][0] == "NP":
                # a determiner opens a new noun phrase
                chunks.append(("BREAK", ""))
            continue
        if kind == "NOUN":
            if chunks and chunks[-1][0] == "NP":
                chunks[-1] = ("NP", tok)
            else:
                chunks.append(("NP", tok))
        else:
            chunks.append((kind, tok))
    return [c for c in chunks if c[0] != "BREAK"]


def _clauses(text: str) -> list[list[str]]:
    clauses: list[list[str]] = [[]]
    for tok in _TOKEN.findall(text.lower()):
        if tok in CONJUNCTIONS:
            if clauses[-1]:
                clauses.append([])
        else:
            clauses[-1].append(tok)
    return [c for c in clauses if c]


def rule_parse(caption: CaptionRecord) -> list[RawTriplet]:
    """Subject-verb-object triplets from one caption by word-class heuristics.

    A verb directly followed by a noun phrase becomes the predicate in its
    ``-ing`` form; a preposition after the verb replaces it. Every emitted
    predicate is a single token. Captions with no pattern give ``[]``.
    """
    text = caption.text if isinstance(caption, CaptionRecord) else str(caption)
    image_id = getattr(caption, "image_id", "")
    caption_id = getattr(caption, "caption_id", "")
    out: list[RawTriplet] = []
    seen: set[tuple[str, str, str]] = set()
    first_subject: Optional[str] = None
    for clause in _clauses(text):
        subject: Optional[str] = None
        pending: Optional[str] = None
        chunks = _chunks(clause)
        if chunks and chunks[0][0] == "VERB" and first_subject is not None:
            subject = first_subject
        for kind, value in chunks:
            if kind == "NP":
                if subject is not None and pending is not None:
                    key = (subject, pending, value)
                    if key not in seen and subject != value:
                        seen.add(key)
                        out.append(RawTriplet(subject, pending, value, Source.BASELINE_PARSER, image_id, caption_id))
                    pending = None
                subject = value
                if first_subject is None:
                    first_subject = value
            elif kind == "VERB" and subject is not None:
                pending = participle(value)
            elif kind == "PREP" and subject is not None:
                # a preposition after a verb swallows it: "lying on" -> "on"
                if pending is None or pending not in PREPOSITIONS:
                    pending = value
    return out


@dataclass(frozen=True)
class SynonymKB:
    """Flattened synonym / hypernym / hyponym relations, one hop."""

    entries: Mapping[str, frozenset[str]] = field(default_factory=dict)
    source: str = ""

    def __post_init__(self) -> None:
        clean: dict[str, frozenset[str]] = {}
        for key, rels in self.entries.items():
            k = normalize_lexeme(key)
            if not k:
                continue
            related = frozenset(r for r in (normalize_lexeme(x) for x in rels) if r and r != k)
            clean[k] = clean.get(k, frozenset()) | related
        object.__setattr__(self, "entries", clean)

    def related(self, lexeme: str) -> frozenset[str]:
        return self.entries.get(lexeme, frozenset())


def parse_kb(lines: Iterable[str], source: str = "") -> SynonymKB:
    entries: dict[str, set[str]] = {}
    for line in lines:
        line = line.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, _, rels = line.partition("\t")
        entries.setdefault(key, set()).update(r for r in rels.split(",") if r.strip())
    return SynonymKB({k: frozenset(v) for k, v in entries.items()}, source)


def load_kb(path: Union[str, Path]) -> SynonymKB:
    """Read a ``lexeme<TAB>rel1,rel2,...`` file."""
    resolved = resolve_path(path)
    with resolved.open(encoding="utf-8") as fh:
        return parse_kb(fh, str(path))


def kb_align(lexeme: str, lexicon: Lexicon, kb: SynonymKB) -> Optional[int]:
    """Exact class index, else the lowest-indexed class one KB hop away, else None."""
    exact = lexicon.index_of(lexeme)
    if exact is not None:
        return exact
    hits = [i for i in (lexicon.index_of(r) for r in kb.related(lexeme)) if i is not None]
    return min(hits) if hits else None
