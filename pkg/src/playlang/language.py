"""Instructions: tokenization, vocabulary, templates, and a frozen
general-purpose sentence embedder stand-in.

Sentences are produced from slot templates. A slot like {c_door} is filled
from the synonym lexicon; at annotation time and for standard evaluation it
draws from the train synonyms, for the out-of-distribution probe it draws
from held-out synonyms that never appear in training data. Literal template
words pass through untouched, and evaluation templates only use literal
words that training templates also use, so a fresh sentence pattern never
smuggles in unseen filler vocabulary.

The frozen embedder maps each synonym class to one fixed random vector
(longest lexicon phrase wins during matching) and any other word to a
hash-seeded vector, then mean-pools and normalizes. Synonym invariance is
exact by construction, which is the property transfer experiments lean on.
"""

from __future__ import annotations

import json
import re
from importlib import resources

import numpy as np

from .seeding import rng_for, stable_hash

OOV_BUCKETS = 64
PAD_ID = 0
MAX_TOKENS = 12
PRETRAINED_DIM = 64


class LanguageError(ValueError):
    pass


_WORD_RE = re.compile(r"[a-z']+")


def tokenize(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


class SynonymLexicon:
    def __init__(self, classes: dict):
        self.classes = classes
        seen = {}
        for name, lists in classes.items():
            for mode in ("train", "holdout"):
                for phrase in lists[mode]:
                    key = tuple(tokenize(phrase))
                    if key in seen:
                        raise LanguageError(
                            f"{phrase!r} appears in {seen[key]} and {name}")
                    seen[key] = name
        self._phrase_to_class = seen
        self._max_len = max(len(k) for k in seen)

    @staticmethod
    def load() -> "SynonymLexicon":
        raw = resources.files("playlang.assets").joinpath("lexicon.json").read_text()
        return SynonymLexicon(json.loads(raw)["classes"])

    def synonyms(self, cls: str, mode: str) -> list:
        try:
            return self.classes[cls][mode]
        except KeyError:
            raise LanguageError(f"no {mode!r} synonyms for {cls!r}") from None

    def match(self, words: list) -> list:
        """Greedy longest-first scan. Returns ('class', name) or ('word', w)
        items covering the word list."""
        out = []
        i = 0
        while i < len(words):
            hit = None
            for n in range(min(self._max_len, len(words) - i), 0, -1):
                cls = self._phrase_to_class.get(tuple(words[i:i + n]))
                if cls is not None:
                    hit = (cls, n)
                    break
            if hit is not None:
                out.append(("class", hit[0]))
                i += hit[1]
            else:
                out.append(("word", words[i]))
                i += 1
        return out

    def classes_in(self, text: str) -> set:
        return {name for kind, name in self.match(tokenize(text)) if kind == "class"}


# ---- templates ---------------------------------------------------------------

TRAIN_TEMPLATES = {
    "open_door": [
        "{c_open} the {c_door}",
        "{c_slide} the {c_door} {c_right}",
        "{c_slide} the {c_door} open",
        "{c_open} up the {c_door}",
    ],
    "close_door": [
        "{c_close} the {c_door}",
        "{c_slide} the {c_door} {c_left}",
        "{c_slide} the {c_door} closed",
        "{c_move} the {c_door} {c_left}",
    ],
    "open_drawer": [
        "{c_open} the {c_drawer}",
        "{c_slide} the {c_drawer} open",
        "{c_open} up the {c_drawer}",
        "{c_slide} the {c_drawer} {c_down}",
    ],
    "close_drawer": [
        "{c_close} the {c_drawer}",
        "{c_slide} the {c_drawer} closed",
        "{c_slide} the {c_drawer} {c_up}",
        "{c_close} up the {c_drawer}",
    ],
    "press_red": [
        "{c_press} the {c_red} {c_button}",
        "{c_press} {c_red}",
        "{c_press} the {c_red} one",
        "go {c_press} the {c_red} {c_button}",
    ],
    "press_green": [
        "{c_press} the {c_green} {c_button}",
        "{c_press} {c_green}",
        "{c_press} the {c_green} one",
        "go {c_press} the {c_green} {c_button}",
    ],
    "press_blue": [
        "{c_press} the {c_blue} {c_button}",
        "{c_press} {c_blue}",
        "{c_press} the {c_blue} one",
        "go {c_press} the {c_blue} {c_button}",
    ],
    "lift_block": [
        "{c_lift} the {c_block}",
        "{c_grab} the {c_block} and {c_lift} it",
        "{c_lift} the {c_block} {c_up}",
        "{c_lift} {c_up} the {c_block}",
    ],
    "block_in_drawer": [
        "{c_put} the {c_block} in the {c_drawer}",
        "{c_move} the {c_block} to the {c_drawer}",
        "{c_grab} the {c_block} and {c_put} it in the {c_drawer}",
        "{c_put} the {c_block} back in the {c_drawer}",
    ],
    "block_in_trash": [
        "{c_put} the {c_block} in the {c_trash}",
        "{c_move} the {c_block} to the {c_trash}",
        "{c_put} the {c_block} into the {c_trash}",
        "{c_grab} the {c_block} and {c_put} it in the {c_trash}",
    ],
    "motion_right": [
        "{c_move} your {c_hand} {c_right}",
        "{c_move} {c_right}",
        "{c_slide} your {c_hand} {c_right}",
        "{c_move} your {c_hand} to the {c_right}",
    ],
    "motion_left": [
        "{c_move} your {c_hand} {c_left}",
        "{c_move} {c_left}",
        "{c_slide} your {c_hand} {c_left}",
        "{c_move} your {c_hand} to the {c_left}",
    ],
    "motion_up": [
        "{c_move} your {c_hand} {c_up}",
        "{c_move} {c_up}",
        "{c_slide} your {c_hand} {c_up}",
        "{c_move} your {c_hand} {c_up} a bit",
    ],
    "motion_down": [
        "{c_move} your {c_hand} {c_down}",
        "{c_move} {c_down}",
        "{c_slide} your {c_hand} {c_down}",
        "{c_move} your {c_hand} {c_down} a bit",
    ],
    "do_nothing": [
        "do nothing",
        "hold still",
        "stay there",
        "wait a moment",
    ],
}

EVAL_TEMPLATES = {
    "open_door": [
        "go {c_open} the {c_door}",
        "{c_slide} the {c_door} to the {c_right}",
    ],
    "close_door": [
        "go {c_close} the {c_door}",
        "{c_slide} the {c_door} to the {c_left}",
    ],
    "open_drawer": [
        "go {c_open} the {c_drawer}",
        "{c_slide} the {c_drawer} {c_down} and {c_open} it",
    ],
    "close_drawer": [
        "go {c_close} the {c_drawer}",
        "{c_slide} the {c_drawer} back {c_up}",
    ],
    "press_red": [
        "go {c_press} {c_red}",
        "{c_press} your {c_red} {c_button}",
    ],
    "press_green": [
        "go {c_press} {c_green}",
        "{c_press} your {c_green} {c_button}",
    ],
    "press_blue": [
        "go {c_press} {c_blue}",
        "{c_press} your {c_blue} {c_button}",
    ],
    "lift_block": [
        "go {c_lift} the {c_block}",
        "{c_grab} the {c_block} and {c_lift} it {c_up}",
    ],
    "block_in_drawer": [
        "go {c_put} the {c_block} in the {c_drawer}",
        "{c_move} the {c_block} back into the {c_drawer}",
    ],
    "block_in_trash": [
        "go {c_put} the {c_block} in the {c_trash}",
        "{c_move} the {c_block} into the {c_trash}",
    ],
}

_SLOT_RE = re.compile(r"\{(c_[a-z_]+)\}")


def instantiate(template: str, lexicon: SynonymLexicon, rng, mode="train") -> str:
    def fill(m):
        options = lexicon.synonyms(m.group(1), mode)
        return options[int(rng.integers(len(options)))]

    return _SLOT_RE.sub(fill, template)


def make_phrase_fn(lexicon: SynonymLexicon):
    """Annotator sentence writer for data.pair_with_language."""
    def phrase(label, rng):
        templates = TRAIN_TEMPLATES[label]
        return instantiate(templates[int(rng.integers(len(templates)))], lexicon, rng)
    return phrase


def eval_instruction(label: str, lexicon: SynonymLexicon, rng, ood=False) -> str:
    templates = EVAL_TEMPLATES[label]
    t = templates[int(rng.integers(len(templates)))]
    text = instantiate(t, lexicon, rng, mode="train")
    if ood:
        text, swapped = ood_substitute(text, lexicon, rng)
        if not swapped:
            raise LanguageError(f"no substitutable phrase in {text!r}")
    return text


def ood_substitute(instruction: str, lexicon: SynonymLexicon, rng):
    """Swap every lexicon phrase for a held-out synonym from its class.
    Returns (text, swapped); swapped is False when nothing matched. Held-out
    synonyms never appear in training text, so a swapped sentence always
    carries at least one out-of-vocabulary token."""
    parts = []
    swapped = False
    for kind, name in lexicon.match(tokenize(instruction)):
        if kind == "class":
            options = lexicon.synonyms(name, "holdout")
            parts.append(options[int(rng.integers(len(options)))])
            swapped = True
        else:
            parts.append(name)
    return " ".join(parts), swapped


# ---- vocabulary ---------------------------------------------------------------


class Vocabulary:
    """Word ids for the from-scratch encoder. 0 pads; unknown words land in
    one of OOV_BUCKETS hash buckets past the known range."""

    def __init__(self, words):
        self.words = sorted(set(words))
        self._ids = {w: i + 1 for i, w in enumerate(self.words)}

    @property
    def size(self) -> int:
        return 1 + len(self.words) + OOV_BUCKETS

    def word_id(self, w: str) -> int:
        wid = self._ids.get(w)
        if wid is not None:
            return wid
        return 1 + len(self.words) + stable_hash(w) % OOV_BUCKETS

    def is_known(self, w: str) -> bool:
        return w in self._ids

    def encode(self, text: str, max_tokens: int = MAX_TOKENS) -> np.ndarray:
        ids = [self.word_id(w) for w in tokenize(text)][:max_tokens]
        out = np.full(max_tokens, PAD_ID, dtype=np.int32)
        out[:len(ids)] = ids
        return out

    def to_dict(self) -> dict:
        return {"words": self.words}

    @staticmethod
    def from_dict(d) -> "Vocabulary":
        v = Vocabulary(d["words"])
        if v.words != d["words"]:
            raise LanguageError("vocabulary word list was not sorted/unique")
        return v


def training_vocabulary(lexicon: SynonymLexicon) -> Vocabulary:
    """Every train synonym plus every literal word in the train templates."""
    words = set()
    for lists in lexicon.classes.values():
        for phrase in lists["train"]:
            words.update(tokenize(phrase))
    for templates in TRAIN_TEMPLATES.values():
        for t in templates:
            words.update(tokenize(_SLOT_RE.sub(" ", t)))
    return Vocabulary(words)


# ---- frozen sentence embedder ---------------------------------------------------

_EMBED_CACHE = {}


def _item_vector(kind: str, name: str) -> np.ndarray:
    key = (kind, name)
    v = _EMBED_CACHE.get(key)
    if v is None:
        v = rng_for("pretrained-embed", kind, name).normal(0.0, 1.0, PRETRAINED_DIM)
        _EMBED_CACHE[key] = v.astype(np.float32)
        v = _EMBED_CACHE[key]
    return v


def pretrained_embed(text: str, lexicon: SynonymLexicon) -> np.ndarray:
    """Frozen sentence vector: mean of per-item vectors, unit norm. Items
    are lexicon classes where they match, raw words elsewhere."""
    items = lexicon.match(tokenize(text))
    if not items:
        raise LanguageError(f"nothing to embed in {text!r}")
    acc = np.zeros(PRETRAINED_DIM, dtype=np.float64)
    for kind, name in items:
        acc += _item_vector(kind, name)
    acc /= len(items)
    norm = float(np.linalg.norm(acc))
    if norm < 1e-12:
        raise LanguageError("degenerate embedding")
    return (acc / norm).astype(np.float32)


# ---- instruction understanding (service-side labeling only) ---------------------


def infer_label(text: str, lexicon: SynonymLexicon):
    """Best-effort mapping from a sentence to a task or motion label, used
    to mark instruction outcomes in the UI. Returns None when unsure."""
    classes = lexicon.classes_in(text)
    if "c_block" in classes:
        if "c_drawer" in classes:
            return "block_in_drawer"
        if "c_trash" in classes:
            return "block_in_trash"
        if "c_lift" in classes:
            return "lift_block"
        return None
    if "c_press" in classes or "c_button" in classes:
        for color in ("red", "green", "blue"):
            if f"c_{color}" in classes:
                return f"press_{color}"
        return None
    if "c_door" in classes:
        if "c_open" in classes or "c_right" in classes:
            return "open_door"
        if "c_close" in classes or "c_left" in classes:
            return "close_door"
        return None
    if "c_drawer" in classes:
        if "c_open" in classes or "c_down" in classes:
            return "open_drawer"
        if "c_close" in classes or "c_up" in classes:
            return "close_drawer"
        return None
    if "c_hand" in classes or "c_move" in classes or "c_slide" in classes:
        for d in ("right", "left", "up", "down"):
            if f"c_{d}" in classes:
                return f"motion_{d}"
    words = set(tokenize(text))
    if words & {"nothing", "still", "stay", "wait"}:
        return "do_nothing"
    return None
