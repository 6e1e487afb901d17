"""Shared data model: documents, annotations, schemas, and surface normalization.

Every other module builds on these types. Annotated documents persist as JSONL
with one record per line; the field layout follows the synthetic-data release
format ("text", "annotated_text", "entities", "relations") with "mentions",
"entity_types", "relation_types", "doc_id" and "provenance" as documented
extensions.
"""

from __future__ import annotations

import io
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator


class SynthexError(Exception):
    """Base class for all toolkit errors."""


_PARAGRAPH_SPLIT = re.compile(r"\n[^\S\n]*\n\s*")


def normalize_surface(s: str) -> str:
    """Lowercase, strip, and collapse internal whitespace runs to one space.

    Total and idempotent; used for all surface/name/type matching so that
    comparisons are insensitive to case and incidental spacing.
    """
    return " ".join(s.lower().split())


def split_paragraphs(text: str) -> list[str]:
    """Split on blank-line boundaries, dropping empty segments.

    A boundary is one or more newlines with only whitespace between them.
    Text without any blank line is a single paragraph.
    """
    parts = _PARAGRAPH_SPLIT.split(text)
    return [p.strip() for p in parts if p.strip()]


@dataclass(frozen=True)
class SourceDocument:
    """A raw input document prior to annotation."""

    id: str
    text: str
    title: str | None = None

    def __post_init__(self):
        if not self.id:
            raise ValueError("document id must be non-empty")
        if not self.text.strip():
            raise ValueError(f"document {self.id!r}: text must be non-empty")

    @property
    def paragraphs(self) -> list[str]:
        return split_paragraphs(self.text)


@dataclass(frozen=True)
class Span:
    """Character offsets into an owning text: start inclusive, end exclusive.

    Offsets count Unicode scalar values, not bytes.
    """

    start: int
    end: int

    def __post_init__(self):
        if self.start < 0 or self.end <= self.start:
            raise ValueError(f"invalid span [{self.start}, {self.end})")


@dataclass(frozen=True)
class Entity:
    """A document-local entity: integer id, canonical name, type label."""

    id: int
    name: str
    type_label: str


@dataclass(frozen=True)
class Mention:
    """One tagged occurrence of an entity in the plain text."""

    entity_id: int
    span: Span
    surface: str
    type_label: str


@dataclass(frozen=True)
class Triple:
    """A directed relation instance between two entities of a document.

    ``description`` is the natural-language sentence emitted alongside the
    structured triple; ``triple_string`` is the rendered "(subj, pred, obj)"
    form. Both exist to enable automatic post-hoc verification.
    """

    description: str
    triple_string: str
    subject: int
    predicate: str
    object: int


@dataclass(frozen=True)
class Schema:
    """The entity-type and relation-type inventories constraining extraction."""

    entity_types: tuple[str, ...]
    relation_types: tuple[str, ...]

    @classmethod
    def from_lists(cls, entity_types: Iterable[str], relation_types: Iterable[str]) -> "Schema":
        """Build a schema, deduplicating entries that collide after normalization."""
        return cls(
            entity_types=_dedup_normalized(entity_types),
            relation_types=_dedup_normalized(relation_types),
        )

    def require_nonempty(self):
        if not self.entity_types or not self.relation_types:
            raise ValueError("schema must list at least one entity type and one relation type")


def _dedup_normalized(items: Iterable[str]) -> tuple[str, ...]:
    seen = set()
    out = []
    for item in items:
        key = normalize_surface(item)
        if key and key not in seen:
            seen.add(key)
            out.append(item)
    return tuple(out)


@dataclass(frozen=True)
class AnnotationRecord:
    """A fully annotated document, the unit of the demonstration database."""

    doc_id: str
    text: str
    annotated_text: str
    entities: tuple[Entity, ...]
    mentions: tuple[Mention, ...]
    triples: tuple[Triple, ...]
    entity_types: tuple[str, ...]
    relation_types: tuple[str, ...]
    provenance: dict = field(default_factory=dict, compare=False)


def derive_entity_types(entities: Iterable[Entity]) -> tuple[str, ...]:
    """Distinct entity type labels in first-appearance order."""
    seen: dict[str, None] = {}
    for e in entities:
        seen.setdefault(e.type_label)
    return tuple(seen)


def derive_relation_types(triples: Iterable[Triple]) -> tuple[str, ...]:
    """Distinct predicates in first-appearance order."""
    seen: dict[str, None] = {}
    for t in triples:
        seen.setdefault(t.predicate)
    return tuple(seen)


# --- JSONL persistence -----------------------------------------------------

def record_to_dict(record: AnnotationRecord) -> dict:
    out: dict[str, Any] = {
        "doc_id": record.doc_id,
        "text": record.text,
        "annotated_text": record.annotated_text,
        "entities": [
            {"id": e.id, "name": e.name, "type": e.type_label} for e in record.entities
        ],
        "relations": [
            {
                "description": t.description,
                "triple_string": t.triple_string,
                "subject": t.subject,
                "predicate": t.predicate,
                "object": t.object,
            }
            for t in record.triples
        ],
        "mentions": [
            {
                "entity_id": m.entity_id,
                "start": m.span.start,
                "end": m.span.end,
                "surface": m.surface,
                "type": m.type_label,
            }
            for m in record.mentions
        ],
        "entity_types": list(record.entity_types),
        "relation_types": list(record.relation_types),
    }
    if record.provenance:
        out["provenance"] = record.provenance
    return out


def record_from_dict(data: dict, default_doc_id: str = "") -> AnnotationRecord:
    """Rebuild a record from its JSON form.

    Accepts bare release-format records: when "mentions" is absent they are
    recovered by parsing the annotated text, and missing type inventories are
    derived from the entities/relations themselves.
    """
    entities = tuple(
        Entity(id=int(e["id"]), name=e["name"], type_label=e["type"])
        for e in data.get("entities", [])
    )
    triples = tuple(
        Triple(
            description=t.get("description", ""),
            triple_string=t.get("triple_string", ""),
            subject=int(t["subject"]),
            predicate=t["predicate"],
            object=int(t["object"]),
        )
        for t in data.get("relations", data.get("triples", []))
    )
    annotated_text = data.get("annotated_text", data.get("text_with_spans", ""))
    if "mentions" in data:
        mentions = tuple(
            Mention(
                entity_id=int(m["entity_id"]),
                span=Span(int(m["start"]), int(m["end"])),
                surface=m["surface"],
                type_label=m.get("type", ""),
            )
            for m in data["mentions"]
        )
    else:
        from .markup import parse_annotated

        _, parsed = parse_annotated(annotated_text)
        mentions = tuple(parsed)
    entity_types = tuple(data.get("entity_types") or derive_entity_types(entities))
    relation_types = tuple(data.get("relation_types") or derive_relation_types(triples))
    return AnnotationRecord(
        doc_id=str(data.get("doc_id", default_doc_id)),
        text=data["text"],
        annotated_text=annotated_text,
        entities=entities,
        mentions=mentions,
        triples=triples,
        entity_types=entity_types,
        relation_types=relation_types,
        provenance=data.get("provenance", {}),
    )


def dump_jsonl(items: Iterable[dict], path: str | Path):
    """Write one JSON object per line, atomically (temp file + rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with io.open(tmp, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(item, ensure_ascii=False))
            fh.write("\n")
    tmp.replace(path)


def load_jsonl(path: str | Path) -> Iterator[dict]:
    with io.open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def load_records(path: str | Path) -> list[AnnotationRecord]:
    return [
        record_from_dict(data, default_doc_id=str(i))
        for i, data in enumerate(load_jsonl(path))
    ]


def save_records(records: Iterable[AnnotationRecord], path: str | Path):
    dump_jsonl((record_to_dict(r) for r in records), path)


def load_corpus(path: str | Path) -> list[SourceDocument]:
    """Load a corpus JSONL (id, title, text); ids must be unique."""
    docs = []
    seen = set()
    for data in load_jsonl(path):
        doc = SourceDocument(id=str(data["id"]), text=data["text"], title=data.get("title"))
        if doc.id in seen:
            raise ValueError(f"duplicate document id {doc.id!r} in corpus")
        seen.add(doc.id)
        docs.append(doc)
    return docs
