"""Assembly of mixed token/embedding prompt streams.

A stream interleaves discrete vocabulary tokens with continuous embedding
slots in a fixed order: task text, optional history block, observation
block, output hint, and (in train mode) the supervised target. Every
embedded vector is announced by a rendered id marker "( i )", markers
strictly increasing within a block.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import SchemaError
from .vocabulary import TEMPLATES, Vocabulary

SLOT_TAGS = ("VIEW", "HISTORY", "OBJECT", "SCENE")

OBS_TAG = {"VLN": "VIEW", "EQA": "VIEW", "OBJLOC": "OBJECT", "SUMM": "VIEW", "QA": "SCENE"}
USES_HISTORY = {"VLN": True, "EQA": True, "OBJLOC": True, "SUMM": True, "QA": False}
OBS_FIRST_ID = {"VLN": 0, "EQA": 0, "OBJLOC": 0, "SUMM": 1, "QA": 1}


def schema_kind(kind: str) -> str:
    """Template family for a task kind; EQA navigation reuses VLN schemas."""
    return "VLN" if kind == "EQA" else kind


@dataclass
class TextEl:
    token: int
    marker: bool = False  # numeral inside an id marker


@dataclass
class SlotEl:
    vector: np.ndarray
    tag: str
    source: tuple | None = None  # provenance for encoder gradients


@dataclass
class TokenStream:
    elements: list
    target_span: tuple | None = None  # half-open [start, end)

    def __len__(self):
        return len(self.elements)

    def slots(self):
        return [e for e in self.elements if isinstance(e, SlotEl)]

    def token_at(self, idx: int) -> int:
        el = self.elements[idx]
        if not isinstance(el, TextEl):
            raise SchemaError(f"element {idx} is not a text token")
        return el.token

    def validate(self, d_model=None):
        if not self.elements:
            raise SchemaError("stream must not be empty")
        if self.target_span is not None:
            s, e = self.target_span
            if not (0 <= s < e <= len(self.elements)):
                raise SchemaError(f"target_span {self.target_span} out of bounds")
            for i in range(s, e):
                if not isinstance(self.elements[i], TextEl):
                    raise SchemaError("target_span must cover only text elements")
        for el in self.elements:
            if isinstance(el, SlotEl):
                if el.tag not in SLOT_TAGS:
                    raise SchemaError(f"unknown slot tag {el.tag!r}")
                if d_model is not None and el.vector.shape != (d_model,):
                    raise SchemaError(f"slot vector shape {el.vector.shape} != ({d_model},)")
        return self


@dataclass
class PromptParts:
    kind: str
    task_text: str
    history: list = field(default_factory=list)      # [(vector, source)] step order
    observation: list = field(default_factory=list)  # [(id, vector, source)]
    output_hint: str | None = None                   # template default when None


def render_id_marker(i: int, vocab: Vocabulary) -> list[int]:
    """Token ids of the literal text "( i )"."""
    if i < 0:
        raise SchemaError(f"id markers are non-negative, got {i}")
    return [vocab.open_paren_id, vocab.numeral_id(i), vocab.close_paren_id]


def _marker_elements(i: int, vocab: Vocabulary) -> list:
    o, n, c = render_id_marker(i, vocab)
    return [TextEl(o), TextEl(n, marker=True), TextEl(c)]


def parse_id_marker(tokens, vocab: Vocabulary) -> int | None:
    """Value of a leading well-formed marker "( i )", else None."""
    if len(tokens) < 3 or tokens[0] != vocab.open_paren_id or tokens[2] != vocab.close_paren_id:
        return None
    return vocab.numeral_value(tokens[1])


def target_for(kind: str, supervision, vocab: Vocabulary) -> list[int]:
    """Supervised token ids: id marker + EOS for selection tasks, tokenized
    reference text + EOS for generation tasks."""
    if schema_kind(kind) in ("VLN", "OBJLOC"):
        return render_id_marker(int(supervision), vocab) + [vocab.eos_id]
    return vocab.encode(str(supervision)) + [vocab.eos_id]


def _target_elements(kind: str, supervision, vocab: Vocabulary) -> list:
    if schema_kind(kind) in ("VLN", "OBJLOC"):
        return _marker_elements(int(supervision), vocab) + [TextEl(vocab.eos_id)]
    return [TextEl(t) for t in vocab.encode(str(supervision))] + [TextEl(vocab.eos_id)]


def assemble(parts: PromptParts, vocab: Vocabulary, target=None) -> TokenStream:
    """Build the full prompt stream; with ``target`` the supervised tokens
    are appended and marked as the target span."""
    kind = schema_kind(parts.kind)
    if kind not in OBS_TAG:
        raise SchemaError(f"unknown task kind {parts.kind!r}")
    if not USES_HISTORY[kind] and parts.history:
        raise SchemaError(f"{parts.kind} schema takes no history block")

    first_id = OBS_FIRST_ID[kind]
    expected = first_id
    for oid, _, _ in parts.observation:
        if oid != expected:
            raise SchemaError(
                f"observation ids must be contiguous from {first_id}, got {oid} wanting {expected}")
        expected += 1
    if not parts.observation:
        raise SchemaError("observation must not be empty")

    els = [TextEl(vocab.bos_id)]
    els += [TextEl(t) for t in vocab.encode(TEMPLATES[(kind, "task")])]
    els += [TextEl(t) for t in vocab.encode(parts.task_text)]
    if USES_HISTORY[kind]:
        els += [TextEl(t) for t in vocab.encode(TEMPLATES["history"])]
        for i, (vec, source) in enumerate(parts.history):
            els += _marker_elements(i + 1, vocab)
            els.append(SlotEl(vec, "HISTORY", source))
    els += [TextEl(t) for t in vocab.encode(TEMPLATES[(kind, "observation")])]
    tag = OBS_TAG[kind]
    for oid, vec, source in parts.observation:
        els += _marker_elements(oid, vocab)
        els.append(SlotEl(vec, tag, source))
    hint = parts.output_hint if parts.output_hint is not None else TEMPLATES[(kind, "hint")]
    els += [TextEl(t) for t in vocab.encode(hint)]

    span = None
    if target is not None:
        start = len(els)
        els += _target_elements(parts.kind, target, vocab)
        span = (start, len(els))
    return TokenStream(els, span).validate()


def dump_stream(stream: TokenStream, vocab: Vocabulary) -> str:
    """Golden dump format: one element per line, T:<token> or
    S:<tag>:<sha256 of the float64 vector bytes>."""
    lines = []
    for el in stream.elements:
        if isinstance(el, TextEl):
            lines.append(f"T:{vocab.id2word[el.token]}")
        else:
            digest = hashlib.sha256(np.ascontiguousarray(el.vector, dtype=np.float64).tobytes()).hexdigest()
            lines.append(f"S:{el.tag}:{digest}")
    return "\n".join(lines) + "\n"
