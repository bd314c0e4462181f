"""Text normalization for review comments.

The pipeline is tokenize -> remove_stopwords -> pos_tag -> lemmatize ->
extract_ngrams.  Every stage is a pure function of its input and the
:class:`PrepConfig`.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources
from typing import Iterable, Sequence

from edre.corpus import ReviewComment

STOPLIST_VERSION = 1


class PosTag(str, Enum):
    NOUN = "NOUN"
    VERB = "VERB"
    ADJ = "ADJ"
    OTHER = "OTHER"


def _read_data(name: str) -> str:
    return resources.files("edre.data").joinpath(name).read_text(encoding="utf-8")


def parse_stoplist(text: str) -> frozenset[str]:
    words = set()
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip().lower()
        if line:
            words.add(line)
    return frozenset(words)


@lru_cache(maxsize=None)
def default_stopwords() -> frozenset[str]:
    return parse_stoplist(_read_data("stopwords_en.txt"))


def load_stoplist(path) -> frozenset[str]:
    with open(path, encoding="utf-8") as fh:
        return parse_stoplist(fh.read())


@dataclass(frozen=True)
class PrepConfig:
    lowercase: bool = True
    stopword_list: frozenset = field(default_factory=default_stopwords)
    ngram_orders: tuple = (1, 2, 3)
    keep_contractions: bool = True

    def __post_init__(self):
        orders = tuple(sorted({int(n) for n in self.ngram_orders}))
        if not orders or orders[0] < 1:
            raise ValueError(f"ngram orders must be a nonempty set of integers >= 1, got {self.ngram_orders!r}")
        object.__setattr__(self, "ngram_orders", orders)
        object.__setattr__(self, "stopword_list", frozenset(self.stopword_list))

    def to_dict(self) -> dict:
        return {
            "lowercase": self.lowercase,
            "stopwords": sorted(self.stopword_list),
            "ngram_orders": list(self.ngram_orders),
            "keep_contractions": self.keep_contractions,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "PrepConfig":
        return cls(
            lowercase=obj["lowercase"],
            stopword_list=frozenset(obj["stopwords"]),
            ngram_orders=tuple(obj["ngram_orders"]),
            keep_contractions=obj["keep_contractions"],
        )


@dataclass(frozen=True)
class TokenDoc:
    review_id: str
    lemmas: tuple
    features: tuple

    @property
    def is_empty(self) -> bool:
        return not self.features


# --------------------------------------------------------------------------
# tokenize

# A token is a run of letters/digits.  With contractions kept, letter runs
# joined by an apostrophe ("don't", "i'll") stay one token.
_CONTRACTION_TOKEN = re.compile(r"[^\W\d_]+(?:'[^\W\d_]+)+|[^\W_]+")
_PLAIN_TOKEN = re.compile(r"[^\W_]+")
_APOSTROPHES = str.maketrans({"’": "'", "‘": "'", "ʼ": "'"})


def tokenize(text: str, config: PrepConfig | None = None) -> list[str]:
    config = config or PrepConfig()
    if config.lowercase:
        text = text.lower()
    pattern = _CONTRACTION_TOKEN if config.keep_contractions else _PLAIN_TOKEN
    return pattern.findall(text.translate(_APOSTROPHES))


def remove_stopwords(tokens: Sequence[str], config: PrepConfig | None = None) -> list[str]:
    stop = (config or PrepConfig()).stopword_list
    return [t for t in tokens if t not in stop]


# --------------------------------------------------------------------------
# part of speech

_AUX_VERBS = frozenset(
    "am is are was were be been being has have had having do does did doing "
    "can could shall should will would may might must".split()
)
_FUNCTION_WORDS = frozenset(
    "a an the this that these those i me my we our you your he him his she her it its "
    "they them their what which who whom whose and or but nor if then else so because "
    "as until while of at by for with about against between into through during before "
    "after above below to from up down in out on off over under again further once here "
    "there when where why how all any both each few more most other some such no not only "
    "own same than too very just also maybe perhaps please still yet already even ever "
    "never always often sometimes instead though although however".split()
)

_VERB_BASES = (
    "add allow apply avoid break build bump cache call catch change check clean close "
    "comment commit compare compute configure consider convert copy create debug define "
    "delete deprecate disable document drop duplicate enable ensure extract fail fetch "
    "fix format get guard handle ignore implement import improve include initialize "
    "inline keep log maintain make merge move need parse pass prefer put read refactor "
    "remove rename reorder replace reply resolve return reuse revert run set simplify "
    "skip sort split squash stop store support swap test throw trim try update use "
    "validate wrap write"
).split()
# short verbs that double their final consonant when inflected
_DOUBLING = frozenset("commit drop get log put run set skip split stop swap trim wrap".split())
_IRREGULAR = {
    "made": "make", "wrote": "write", "written": "write", "ran": "run", "broke": "break",
    "broken": "break", "kept": "keep", "built": "build", "threw": "throw", "thrown": "throw",
    "got": "get", "gotten": "get", "caught": "catch", "better": "good", "best": "good",
    "worse": "bad", "worst": "bad",
}
_ADJ_BASES = (
    "bad big clean clear close consistent easy fast good hard large long nice new old "
    "readable redundant safe short simple slow small strict unnecessary unused wrong"
).split()


def _verb_forms(base: str) -> Iterable[str]:
    if base.endswith(("s", "x", "z", "ch", "sh")):
        yield base + "es"
    elif base.endswith("y") and base[-2] not in "aeiou":
        yield base[:-1] + "ies"
    else:
        yield base + "s"
    if base.endswith("e"):
        stem = base[:-1]
    elif base.endswith("y") and base[-2] not in "aeiou":
        stem = base[:-1] + "i"
    elif base in _DOUBLING:
        stem = base + base[-1]
    else:
        stem = base
    yield stem + "ed"
    yield (stem if not stem.endswith("i") else base) + "ing"


def _adj_forms(base: str) -> Iterable[str]:
    if base.endswith("e"):
        stem = base[:-1]
    elif base.endswith("y"):
        stem = base[:-1] + "i"
    elif base in ("big",):
        stem = base + "g"
    else:
        stem = base
    yield stem + "er"
    yield stem + "est"


@lru_cache(maxsize=None)
def _lexicon() -> tuple[dict, dict]:
    """(word -> tag, inflected word -> lemma) for the bundled closed lexicon."""
    tags: dict[str, PosTag] = {}
    lemmas: dict[str, str] = {}
    for w in _FUNCTION_WORDS:
        tags[w] = PosTag.OTHER
        lemmas[w] = w
    for w in _AUX_VERBS:
        tags[w] = PosTag.VERB
        lemmas[w] = w
    for base in _ADJ_BASES:
        for form in (base, *_adj_forms(base)):
            tags.setdefault(form, PosTag.ADJ)
            lemmas.setdefault(form, base)
    for base in _VERB_BASES:
        for form in (base, *_verb_forms(base)):
            tags.setdefault(form, PosTag.VERB)
            lemmas.setdefault(form, base)
    for form, base in _IRREGULAR.items():
        tags.setdefault(form, PosTag.ADJ if base in _ADJ_BASES else PosTag.VERB)
        lemmas.setdefault(form, base)
    return tags, lemmas


_ADJ_SUFFIXES = ("able", "ible", "ous", "ful", "ive", "less", "ical", "ic", "al")


def _tag_word(token: str) -> PosTag:
    word = token.lower()
    tag = _lexicon()[0].get(word)
    if tag is not None:
        return tag
    if any(ch.isdigit() for ch in word):
        return PosTag.OTHER
    if word.endswith("ly"):
        return PosTag.OTHER
    if word.endswith("ing"):
        # gerunds outside the verb lexicon behave as nouns ("naming", "logging")
        return PosTag.NOUN
    if word.endswith("ed"):
        return PosTag.VERB
    if word.endswith(_ADJ_SUFFIXES):
        return PosTag.ADJ
    return PosTag.NOUN


def pos_tag(tokens: Sequence[str]) -> list[tuple[str, PosTag]]:
    return [(t, _tag_word(t)) for t in tokens]


# --------------------------------------------------------------------------
# lemmatize

@dataclass(frozen=True)
class LemmaRule:
    suffix: str
    replacement: str
    tags: frozenset | None = None

    def applies(self, word: str, tag: PosTag) -> bool:
        if self.tags is not None and tag not in self.tags:
            return False
        return word.endswith(self.suffix) and len(word) - len(self.suffix) >= 2


_RULE_LINE = re.compile(r"^(\S+)\s*->\s*(\S+)(?:\s*\[([A-Z,\s]+)\])?$")


def parse_rule_table(text: str) -> list[LemmaRule]:
    rules = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _RULE_LINE.match(line)
        if m is None:
            raise ValueError(f"lemma rule line {lineno}: cannot parse {raw!r}")
        suffix, repl, tags = m.groups()
        tagset = frozenset(PosTag(t.strip()) for t in tags.split(",")) if tags else None
        rules.append(LemmaRule(suffix, "" if repl == "-" else repl, tagset))
    return rules


@lru_cache(maxsize=None)
def default_rules() -> tuple[LemmaRule, ...]:
    return tuple(parse_rule_table(_read_data("lemma_rules.txt")))


def _reduce_once(word: str, tag: PosTag, rules: Sequence[LemmaRule]) -> str:
    lex = _lexicon()[1]
    if word in lex:
        return lex[word]
    for rule in rules:
        if rule.applies(word, tag):
            return word[: len(word) - len(rule.suffix)] + rule.replacement
    return word


def lemma(word: str, tag: PosTag, rules: Sequence[LemmaRule] | None = None) -> str:
    rules = default_rules() if rules is None else rules
    # Reduce to a fixed point so that lemmatizing a lemma changes nothing.
    for _ in range(8):
        reduced = _reduce_once(word, tag, rules)
        if reduced == word:
            break
        word = reduced
    return word


def lemmatize(tagged: Sequence[tuple[str, PosTag]], rules: Sequence[LemmaRule] | None = None) -> list[str]:
    return [lemma(tok, tag, rules) for tok, tag in tagged]


# --------------------------------------------------------------------------
# n-grams and the full pipeline

def extract_ngrams(lemmas: Sequence[str], orders: Iterable[int]) -> list[str]:
    feats = []
    n_items = len(lemmas)
    for n in sorted(set(orders)):
        if n < 1:
            raise ValueError(f"ngram order must be >= 1, got {n}")
        feats.extend(" ".join(lemmas[i : i + n]) for i in range(n_items - n + 1))
    return feats


def preprocess_text(text: str, config: PrepConfig | None = None, review_id: str = "") -> TokenDoc:
    config = config or PrepConfig()
    tokens = remove_stopwords(tokenize(text, config), config)
    lemmas = lemmatize(pos_tag(tokens))
    return TokenDoc(review_id, tuple(lemmas), tuple(extract_ngrams(lemmas, config.ngram_orders)))


def preprocess(comment: ReviewComment, config: PrepConfig | None = None) -> TokenDoc:
    return preprocess_text(comment.body, config, review_id=comment.id)
