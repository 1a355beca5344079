"""Closed vocabulary, tokenizer, and the template catalog.

The token set is frozen by construction order: specials, punctuation,
numerals 0..99, template words, landmark words, object words. Golden
stream files and checkpoints depend on this order staying put.
"""

from __future__ import annotations

import re

from .errors import ParseError

BOS = "<bos>"
EOS = "<eos>"

PUNCT = ["(", ")", ".", ",", ":", "?"]

MAX_NUMERAL = 99

# Structural things an instruction can steer by.
LANDMARK_WORDS = [
    "arch", "piano", "fountain", "mirror", "staircase", "fireplace",
    "bookshelf", "chandelier", "doorway", "column", "statue", "painting",
    "rug", "clock", "lamp", "fern", "cabinet", "railing", "alcove", "bench",
    "curtain", "sofa", "hearth", "pillar", "mural", "tapestry", "aquarium",
    "banister", "skylight", "archway", "balcony", "pergola", "trellis",
    "niche", "mantel", "wardrobe", "dresser", "bunk", "easel", "organ",
    "harp", "loom", "anvil", "forge", "kiln", "turret", "gazebo", "obelisk",
]

# Small localizable items placed at viewpoints.
OBJECT_WORDS = [
    "sink", "kettle", "mug", "plate", "bowl", "candle", "basket", "jug",
    "teapot", "ladle", "whisk", "tray", "goblet", "flask", "lantern",
    "globe", "hourglass", "inkwell", "quill", "scroll", "chisel", "mallet",
    "spool", "thimble", "bellows", "compass", "sextant", "abacus", "prism",
    "gourd", "urn", "vase",
]

TEMPLATE_WORDS = [
    "task", "follow", "the", "landmarks", "question", "which", "way",
    "answer", "head", "to", "find", "near", "describe", "your", "route",
    "what", "object", "is", "how", "many", "objects", "are", "walk",
    "closest", "there", "history", "candidates", "means", "stop", "missing",
    "panorama", "scene", "views", "hint", "candidate", "number", "landmark",
    "list", "one", "word",
]

# (kind, part) -> fixed text. Parts: "task" prefixes the instruction,
# "history"/"observation" head their schema blocks, "hint" closes the
# prompt. Kept terse: headers recur in every stream.
TEMPLATES = {
    "history": "history :",
    ("VLN", "task"): "task :",
    ("VLN", "observation"): "candidates , ( 0 ) means stop :",
    ("VLN", "hint"): "hint : candidate number .",
    ("OBJLOC", "task"): "task :",
    ("OBJLOC", "observation"): "objects , ( 0 ) means missing :",
    ("OBJLOC", "hint"): "hint : object number .",
    ("SUMM", "task"): "task :",
    ("SUMM", "observation"): "panorama :",
    ("SUMM", "hint"): "hint : landmark list .",
    ("QA", "task"): "task :",
    ("QA", "observation"): "scene views :",
    ("QA", "hint"): "hint : one word .",
}

_SPLIT_RE = re.compile(r"([()\.,:\?])")


def tokenize_text(text: str) -> list[str]:
    """Whitespace + punctuation split; no vocabulary check."""
    return _SPLIT_RE.sub(r" \1 ", text).split()


class Vocabulary:
    """Closed word list with stable integer ids."""

    def __init__(self):
        words = [BOS, EOS]
        words += PUNCT
        words += [str(i) for i in range(MAX_NUMERAL + 1)]
        words += TEMPLATE_WORDS
        words += LANDMARK_WORDS
        words += OBJECT_WORDS
        assert len(set(words)) == len(words), "vocabulary words must be unique"
        self.id2word = list(words)
        self.word2id = {w: i for i, w in enumerate(words)}
        self.bos_id = self.word2id[BOS]
        self.eos_id = self.word2id[EOS]
        self.open_paren_id = self.word2id["("]
        self.close_paren_id = self.word2id[")"]

    def __len__(self) -> int:
        return len(self.id2word)

    def numeral_id(self, value: int) -> int:
        if not 0 <= value <= MAX_NUMERAL:
            raise ParseError(f"numeral out of range: {value}")
        return self.word2id[str(value)]

    def numeral_value(self, token_id: int) -> int | None:
        """Integer value of a numeral token, else None."""
        word = self.id2word[token_id]
        return int(word) if word.isdigit() else None

    def encode(self, text: str) -> list[int]:
        ids = []
        for word in tokenize_text(text):
            if word not in self.word2id:
                raise ParseError(f"word not in closed vocabulary: {word!r}")
            ids.append(self.word2id[word])
        return ids

    def decode(self, ids) -> str:
        return " ".join(self.id2word[i] for i in ids)


_VOCAB = None


def get_vocab() -> Vocabulary:
    global _VOCAB
    if _VOCAB is None:
        _VOCAB = Vocabulary()
    return _VOCAB
