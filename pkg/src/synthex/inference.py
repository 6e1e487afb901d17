"""Two-call in-context inference for schema-constrained extraction.

Call 1 annotates only the first paragraph of the query document; call 2
receives the entire document with call 1's annotations pre-filled in the
"annotation I want you to complete" block. Seeding the long call with a
correctly formatted beginning drastically reduces format failures on long
documents. Call-1 failure is tolerated — the pipeline proceeds with an empty
partial — but a call-2 parse or echo failure makes the whole prediction
invalid: there are no partially trusted outputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

from .annotator import (
    MissingKeyError,
    RawAnnotation,
    parse_annotation_response,
    truncate_text,
    word_count,
)
from .core import (
    AnnotationRecord,
    Entity,
    Mention,
    Schema,
    SourceDocument,
    Span,
    Triple,
    normalize_surface,
    split_paragraphs,
)
from .demostore import DemoIndex, ExclusionList
from .gateway import (
    ChatGateway,
    GenerationParams,
    NoJsonFoundError,
    ResponseSyntaxError,
)
from .markup import MarkupError, parse_annotated


@dataclass(frozen=True)
class Prediction:
    """Extraction output for one document; invalid predictions are empty."""

    doc_id: str
    entities: tuple[Entity, ...]
    mentions: tuple[Mention, ...]
    triples: tuple[Triple, ...]
    valid: bool
    raw_responses: tuple[str, str]
    provenance: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class PartialAnnotation:
    """Call-1 output carried into the call-2 prompt."""

    text: str
    text_with_spans: str
    entities: tuple[Entity, ...]
    triples: tuple[Triple, ...]


INFERENCE_TEMPLATE = """Help me build a knowledge graph. I will provide a text and you annotate it.
Here is what correct annotation looks like:
```json
{demo_block}
```

(Note how the entity ids start from 0 and allow for coreference resolution,
as multiple spans in the annotated text can refer to the same entity.)

Here is the annotation I want you to complete:
```json
{query_block}
```

Do not add any entity or relation types! Use only the ones provided in the JSON.
Where possible, reuse the entity ids from the annotation I've started.
If I've missed any entities (or failed to resolve coreferences) or triples,
please fix accordingly.
Return the completed JSON, not just your changes."""


def _entity_dicts(entities: tuple[Entity, ...]) -> list[dict]:
    return [{"id": e.id, "name": e.name, "type": e.type_label} for e in entities]


def _triple_dicts(triples: tuple[Triple, ...]) -> list[dict]:
    return [
        {
            "description": t.description,
            "triple_string": t.triple_string,
            "subject": t.subject,
            "predicate": t.predicate,
            "object": t.object,
        }
        for t in triples
    ]


def build_inference_prompt(
    demo: AnnotationRecord,
    partial: PartialAnnotation | None,
    query_text: str,
    schema: Schema,
) -> str:
    """Fill the in-context template with a demonstration and the query block.

    The demonstration keeps its own type inventories; the query block carries
    the task schema. When a partial is given its annotations are pre-filled so
    the model extends rather than restarts.
    """
    schema.require_nonempty()
    demo_block = {
        "text": demo.text,
        "entity_types": list(demo.entity_types),
        "text_with_spans": demo.annotated_text,
        "entities": _entity_dicts(demo.entities),
        "relation_types": list(demo.relation_types),
        "relations": _triple_dicts(demo.triples),
    }
    query_block = {
        "text": query_text,
        "entity_types": list(schema.entity_types),
        "text_with_spans": partial.text_with_spans if partial else "",
        "entities": _entity_dicts(partial.entities) if partial else [],
        "relation_types": list(schema.relation_types),
        "relations": _triple_dicts(partial.triples) if partial else [],
    }
    prompt = INFERENCE_TEMPLATE.replace(
        "{demo_block}", json.dumps(demo_block, indent=4, ensure_ascii=False)
    )
    return prompt.replace("{query_block}", json.dumps(query_block, indent=4, ensure_ascii=False))


# A lone paragraph longer than this many words is too much for call 1.
_SINGLE_PARAGRAPH_LIMIT = 150


def first_fragment(doc: SourceDocument) -> str:
    """The first paragraph; a single over-long paragraph falls back to a
    sentence-aligned ~100-word prefix."""
    paragraphs = split_paragraphs(doc.text)
    if not paragraphs:
        return doc.text
    if len(paragraphs) == 1 and word_count(paragraphs[0]) > _SINGLE_PARAGRAPH_LIMIT:
        return truncate_text(doc.text, 100)
    return paragraphs[0]


def _collapse_whitespace(text: str) -> str:
    return " ".join(text.split())


def _reanchor_mentions(
    mentions: list[Mention], text: str
) -> tuple[list[Mention], int]:
    """Re-locate mention surfaces in the full document by substring search.

    The echo check at inference is whitespace-relaxed, so parsed spans may be
    slightly off; each mention is re-anchored strictly on its surface string.
    Unanchorable mentions are dropped individually.
    """
    anchored: list[Mention] = []
    dropped = 0
    cursor = 0
    for m in mentions:
        index = text.find(m.surface, cursor)
        if index == -1:
            index = text.find(m.surface)
        if index == -1:
            dropped += 1
            continue
        anchored.append(
            Mention(
                entity_id=m.entity_id,
                span=Span(index, index + len(m.surface)),
                surface=m.surface,
                type_label=m.type_label,
            )
        )
        if index >= cursor:
            cursor = index + len(m.surface)
    return anchored, dropped


def _invalid(doc_id: str, responses: tuple[str, str], reason: str) -> Prediction:
    return Prediction(
        doc_id=doc_id,
        entities=(),
        mentions=(),
        triples=(),
        valid=False,
        raw_responses=responses,
        provenance={"invalid_reason": reason},
    )


def _prediction_from_raw(
    doc: SourceDocument, raw: RawAnnotation, responses: tuple[str, str]
) -> Prediction | None:
    """Build a valid prediction, or None when the echo check fails."""
    try:
        plain, parsed_mentions = parse_annotated(raw.text_with_spans)
    except MarkupError:
        return None
    if _collapse_whitespace(plain) != _collapse_whitespace(doc.text):
        return None
    entities = tuple(Entity(id=e.id, name=e.name, type_label=e.type_label) for e in raw.entities)
    known_ids = {e.id for e in entities}
    anchored, dropped = _reanchor_mentions(
        [m for m in parsed_mentions if m.entity_id in known_ids], doc.text
    )
    triples = tuple(
        Triple(
            description=t.description,
            triple_string=t.triple_string,
            subject=t.subject,
            predicate=t.predicate,
            object=t.object,
        )
        for t in raw.triples
        if t.subject in known_ids and t.object in known_ids
    )
    return Prediction(
        doc_id=doc.id,
        entities=entities,
        mentions=tuple(anchored),
        triples=triples,
        valid=True,
        raw_responses=responses,
        provenance={"mentions_dropped": dropped},
    )


def enforce_schema(pred: Prediction, schema: Schema) -> Prediction:
    """Drop entities and triples whose types fall outside the task schema.

    Removing an entity removes its mentions and every incident triple. Drop
    counts land in the prediction provenance.
    """
    if not pred.valid:
        raise ValueError("enforce_schema requires a valid prediction")
    allowed_entity_types = {normalize_surface(t) for t in schema.entity_types}
    allowed_predicates = {normalize_surface(t) for t in schema.relation_types}
    kept_entities = tuple(
        e for e in pred.entities if normalize_surface(e.type_label) in allowed_entity_types
    )
    kept_ids = {e.id for e in kept_entities}
    kept_mentions = tuple(m for m in pred.mentions if m.entity_id in kept_ids)
    kept_triples = tuple(
        t
        for t in pred.triples
        if t.subject in kept_ids
        and t.object in kept_ids
        and normalize_surface(t.predicate) in allowed_predicates
    )
    provenance = dict(pred.provenance)
    provenance["schema_drops"] = {
        "entities": len(pred.entities) - len(kept_entities),
        "triples": len(pred.triples) - len(kept_triples),
    }
    return replace(
        pred,
        entities=kept_entities,
        mentions=kept_mentions,
        triples=kept_triples,
        provenance=provenance,
    )


class InferencePipeline:
    """Retrieval, the two model calls, validation, and schema enforcement."""

    def __init__(
        self,
        gateway: ChatGateway,
        index: DemoIndex,
        model_name: str,
        exclusions: ExclusionList | None = None,
        embedder=None,
        max_tokens: int | None = None,
    ):
        self.gateway = gateway
        self.index = index
        self.exclusions = exclusions or ExclusionList.empty()
        self.embedder = embedder
        # Both calls run at temperature 0 and there is no retry: validity
        # rates are a headline metric and silent retries would distort them.
        self.params = GenerationParams(temperature=0.0, model_name=model_name, max_tokens=max_tokens)

    def infer(self, doc: SourceDocument, schema: Schema) -> Prediction:
        schema.require_nonempty()
        demo = self.index.retrieve(doc.text, self.exclusions, k=1, embedder=self.embedder)[0]

        fragment = first_fragment(doc)
        prompt_1 = build_inference_prompt(demo, None, fragment, schema)
        response_1 = self.gateway.complete(prompt_1, self.params)
        partial = self._partial_from_response(fragment, response_1)

        prompt_2 = build_inference_prompt(demo, partial, doc.text, schema)
        response_2 = self.gateway.complete(prompt_2, self.params)
        responses = (response_1, response_2)
        try:
            raw = parse_annotation_response(response_2)
        except (MissingKeyError, ResponseSyntaxError, NoJsonFoundError) as exc:
            return _invalid(doc.id, responses, f"parse: {exc}")
        prediction = _prediction_from_raw(doc, raw, responses)
        if prediction is None:
            return _invalid(doc.id, responses, "echo check failed")
        prediction = replace(prediction, provenance={**prediction.provenance, "demo_doc_id": demo.doc_id})
        return enforce_schema(prediction, schema)

    @staticmethod
    def _partial_from_response(fragment: str, response: str) -> PartialAnnotation | None:
        """Call 1 is an aid, not a gate: any parse failure just means call 2
        starts from an empty annotation."""
        try:
            raw = parse_annotation_response(response)
        except (MissingKeyError, ResponseSyntaxError, NoJsonFoundError):
            return None
        return PartialAnnotation(
            text=fragment,
            text_with_spans=raw.text_with_spans,
            entities=tuple(Entity(id=e.id, name=e.name, type_label=e.type_label) for e in raw.entities),
            triples=tuple(
                Triple(
                    description=t.description,
                    triple_string=t.triple_string,
                    subject=t.subject,
                    predicate=t.predicate,
                    object=t.object,
                )
                for t in raw.triples
            ),
        )


# --- prediction persistence ----------------------------------------------------

def prediction_to_dict(pred: Prediction) -> dict:
    return {
        "doc_id": pred.doc_id,
        "valid": pred.valid,
        "entities": _entity_dicts(pred.entities),
        "mentions": [
            {
                "entity_id": m.entity_id,
                "start": m.span.start,
                "end": m.span.end,
                "surface": m.surface,
                "type": m.type_label,
            }
            for m in pred.mentions
        ],
        "triples": _triple_dicts(pred.triples),
        "raw_responses": list(pred.raw_responses),
        "provenance": pred.provenance,
    }


def prediction_from_dict(data: dict) -> Prediction:
    return Prediction(
        doc_id=str(data["doc_id"]),
        entities=tuple(
            Entity(id=int(e["id"]), name=e["name"], type_label=e["type"])
            for e in data.get("entities", [])
        ),
        mentions=tuple(
            Mention(
                entity_id=int(m["entity_id"]),
                span=Span(int(m["start"]), int(m["end"])),
                surface=m["surface"],
                type_label=m.get("type", ""),
            )
            for m in data.get("mentions", [])
        ),
        triples=tuple(
            Triple(
                description=t.get("description", ""),
                triple_string=t.get("triple_string", ""),
                subject=int(t["subject"]),
                predicate=t["predicate"],
                object=int(t["object"]),
            )
            for t in data.get("triples", [])
        ),
        valid=bool(data["valid"]),
        raw_responses=tuple(data.get("raw_responses", ["", ""])),
        provenance=data.get("provenance", {}),
    )
