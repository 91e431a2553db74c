"""
Closed lexicon of the synthetic grounded world.

Contains the word lists the generator draws from, the part-of-speech
table used by the noun-phrase chunker, the bilingual word table used to
produce targets, and a small out-of-domain (news-style) vocabulary for
domain-mismatch diagnostics.

Word order rule of the target language: inside a noun phrase the head
noun comes before its modifiers ("a black car" -> "ein auto schwarz").
"""

import logging
from typing import Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

# Head nouns, in class order (the first `head_classes` are used)
HEAD_NOUNS = [
    "dog",
    "car",
    "man",
    "woman",
    "ball",
    "bike",
    "horse",
    "tree",
    "boat",
    "child",
    "cat",
    "shirt",
]

# Modifiers, in class order (the first `modifier_classes` are used)
MODIFIERS = [
    "black",
    "white",
    "red",
    "blue",
    "small",
    "big",
    "young",
    "old",
    "green",
    "yellow",
]

VERBS = ["stands", "sits", "runs", "waits", "plays", "rests"]

PREPOSITIONS = ["near", "behind", "beside", "under", "on", "with"]

DETERMINERS = ["a", "the"]

# Nouns known to the chunker but never emitted by the generator
EXTRA_NOUNS = ["person", "people", "dogs", "cars", "children", "men"]

# News-style vocabulary for out-of-domain queries
NEWS_MODIFIERS = ["federal", "economic", "foreign", "annual", "senior", "local", "major", "new"]
NEWS_NOUNS = ["government", "minister", "market", "policy", "report", "election", "budget", "court"]

SENTENCE_END = "."

# Source word -> target word (bijective)
TRANSLATIONS = {
    # heads
    "dog": "hund",
    "car": "auto",
    "man": "mann",
    "woman": "frau",
    "ball": "kugel",
    "bike": "rad",
    "horse": "pferd",
    "tree": "baum",
    "boat": "boot",
    "child": "kind",
    "cat": "katze",
    "shirt": "hemd",
    # modifiers
    "black": "schwarz",
    "white": "weiss",
    "red": "rot",
    "blue": "blau",
    "small": "klein",
    "big": "gross",
    "young": "jung",
    "old": "alt",
    "green": "gruen",
    "yellow": "gelb",
    # verbs
    "stands": "steht",
    "sits": "sitzt",
    "runs": "rennt",
    "waits": "wartet",
    "plays": "spielt",
    "rests": "ruht",
    # prepositions
    "near": "nahe",
    "behind": "hinter",
    "beside": "neben",
    "under": "unter",
    "on": "auf",
    "with": "mit",
    # determiners
    "a": "ein",
    "the": "das",
    # extra nouns
    "person": "mensch",
    "people": "leute",
    "dogs": "hunde",
    "cars": "autos",
    "children": "kinder",
    "men": "maenner",
    ".": ".",
}

DET = "DET"
ADJ = "ADJ"
NOUN = "NOUN"
VERB = "VERB"
PREP = "PREP"
PUNCT = "PUNCT"


def get_pos_lexicon() -> dict[str, str]:
    """Source token -> part-of-speech tag for every word the chunker knows."""
    table: dict[str, str] = {}
    for word in DETERMINERS:
        table[word] = DET
    for word in MODIFIERS + NEWS_MODIFIERS:
        table[word] = ADJ
    for word in HEAD_NOUNS + EXTRA_NOUNS + NEWS_NOUNS:
        table[word] = NOUN
    for word in VERBS:
        table[word] = VERB
    for word in PREPOSITIONS:
        table[word] = PREP
    table[SENTENCE_END] = PUNCT
    return table


def get_inverse_translations() -> dict[str, str]:
    """Target word -> source word."""
    return {target: source for source, target in TRANSLATIONS.items()}


def _swap_adjective_runs(tokens: Sequence[str], adjectives: set[str], nouns: set[str], adjectives_first: bool) -> list[str]:
    """
    Reorder ADJ+ NOUN <-> NOUN ADJ+ around each noun.

    adjectives_first=True rewrites "ADJ.. NOUN" as "NOUN ADJ..";
    False rewrites "NOUN ADJ.." as "ADJ.. NOUN".
    """
    out: list[str] = []
    i = 0
    n = len(tokens)
    while i < n:
        if adjectives_first and tokens[i] in adjectives:
            j = i
            while j < n and tokens[j] in adjectives:
                j += 1
            if j < n and tokens[j] in nouns:
                out.append(tokens[j])
                out.extend(tokens[i:j])
                i = j + 1
                continue
            out.extend(tokens[i:j])
            i = j
        elif not adjectives_first and tokens[i] in nouns:
            j = i + 1
            while j < n and tokens[j] in adjectives:
                j += 1
            out.extend(tokens[i + 1:j])
            out.append(tokens[i])
            i = j
        else:
            out.append(tokens[i])
            i += 1
    return out


def translate_tokens(tokens: Sequence[str]) -> list[str]:
    """
    Translate a source sentence word by word, then move each head noun
    in front of its modifiers. Unknown words are copied unchanged.
    """
    pos = get_pos_lexicon()
    adjectives = {TRANSLATIONS[w] for w, tag in pos.items() if tag == ADJ and w in TRANSLATIONS}
    nouns = {TRANSLATIONS[w] for w, tag in pos.items() if tag == NOUN and w in TRANSLATIONS}
    words = [TRANSLATIONS.get(t, t) for t in tokens]
    return _swap_adjective_runs(words, adjectives, nouns, adjectives_first=True)


def invert_translation(tokens: Sequence[str]) -> list[str]:
    """Undo translate_tokens on generator output (restores source order and words)."""
    pos = get_pos_lexicon()
    inverse = get_inverse_translations()
    adjectives = {TRANSLATIONS[w] for w, tag in pos.items() if tag == ADJ and w in TRANSLATIONS}
    nouns = {TRANSLATIONS[w] for w, tag in pos.items() if tag == NOUN and w in TRANSLATIONS}
    reordered = _swap_adjective_runs(tokens, adjectives, nouns, adjectives_first=False)
    return [inverse.get(t, t) for t in reordered]


def out_of_domain_phrases(n: int, seed: int = 0, rng: Optional[np.random.Generator] = None) -> list[list[str]]:
    """
    Sample news-style noun phrases ("the federal budget") that share no
    content words with the synthetic world.

    Args:
        n: Number of phrases
        seed: Seed used when rng is not given
        rng: Optional numpy generator
    """
    rng = rng if rng is not None else np.random.default_rng(seed)
    phrases = []
    for _ in range(n):
        det = DETERMINERS[int(rng.integers(len(DETERMINERS)))]
        modifier = NEWS_MODIFIERS[int(rng.integers(len(NEWS_MODIFIERS)))]
        noun = NEWS_NOUNS[int(rng.integers(len(NEWS_NOUNS)))]
        phrases.append([det, modifier, noun])
    logger.debug(f"Sampled {n} out-of-domain phrases (seed={seed})")
    return phrases
