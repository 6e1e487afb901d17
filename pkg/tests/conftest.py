"""Shared fixtures: the University-of-Vienna sample record, record builders,
and replay-gateway helpers."""

from __future__ import annotations

import json
import random

import pytest

from synthex.core import AnnotationRecord, Entity, Mention, Span, Triple, record_from_dict
from synthex.annotator import RawAnnotation, RawEntity, RawTriple
from synthex.gateway import ChatGateway, GenerationParams
from synthex.markup import parse_annotated, render_annotated

UNI_VIENNA_TEXT = (
    "The University of Vienna (German: Universität Wien) is a public research university "
    "located in Vienna, Austria. Founded by Duke Rudolph IV in 1365, it is the oldest "
    "university in the German-speaking world and among the largest institutions of higher "
    "learning in Europe. The university is associated with 17 Nobel Prize winners and has "
    "been the home to many scholars of historical and academic importance."
)

UNI_VIENNA_ANNOTATED = (
    '<ent id="0" type="Educational institution">The University of Vienna</ent> (German: '
    '<ent id="0" type="Educational institution">Universität Wien</ent>) is a public research university '
    'located in <ent id="1" type="Location">Vienna</ent>, <ent id="2" type="Country">Austria</ent>. '
    'Founded by <ent id="3" type="Person">Duke Rudolph IV</ent> in 1365, it is the oldest '
    'university in the German-speaking world and among the largest institutions of higher '
    'learning in Europe. The university is associated with 17 '
    '<ent id="4" type="Award">Nobel Prize</ent> winners and has '
    'been the home to many <ent id="5" type="Person">scholars</ent> of historical and academic importance.'
)

UNI_VIENNA_DICT = {
    "text": UNI_VIENNA_TEXT,
    "annotated_text": UNI_VIENNA_ANNOTATED,
    "entities": [
        {"id": 0, "name": "The University of Vienna", "type": "Educational institution"},
        {"id": 1, "name": "Vienna", "type": "Location"},
        {"id": 2, "name": "Austria", "type": "Country"},
        {"id": 3, "name": "Duke Rudolph IV", "type": "Person"},
        {"id": 4, "name": "Nobel Prize", "type": "Award"},
        {"id": 5, "name": "scholars", "type": "Person"},
    ],
    "relations": [
        {
            "description": "The University of Vienna is located in Vienna.",
            "triple_string": "(The University of Vienna, located_in, Vienna)",
            "subject": 0,
            "predicate": "located_in",
            "object": 1,
        },
        {
            "description": "The University of Vienna is located in Austria.",
            "triple_string": "(The University of Vienna, located_in, Austria)",
            "subject": 0,
            "predicate": "located_in",
            "object": 2,
        },
        {
            "description": "The University of Vienna was founded by Duke Rudolph IV.",
            "triple_string": "(The University of Vienna, founded_by, Duke Rudolph IV)",
            "subject": 0,
            "predicate": "founded_by",
            "object": 3,
        },
        {
            "description": "The University of Vienna has been the home to scholars.",
            "triple_string": "(The University of Vienna, home_of, scholars)",
            "subject": 0,
            "predicate": "home_of",
            "object": 5,
        },
    ],
}


@pytest.fixture
def uni_vienna_dict() -> dict:
    return json.loads(json.dumps(UNI_VIENNA_DICT))


@pytest.fixture
def uni_vienna_record() -> AnnotationRecord:
    return record_from_dict(json.loads(json.dumps(UNI_VIENNA_DICT)), default_doc_id="uni-vienna")


def raw_from_record(record: AnnotationRecord) -> RawAnnotation:
    return RawAnnotation(
        text_with_spans=record.annotated_text,
        entities=tuple(RawEntity(e.id, e.name, e.type_label) for e in record.entities),
        triples=tuple(
            RawTriple(t.description, t.triple_string, t.subject, t.predicate, t.object)
            for t in record.triples
        ),
        relation_types=tuple(record.relation_types),
        entity_types=tuple(record.entity_types),
    )


_FILLERS = (
    "meanwhile the report confirms that".split()
    + "several early studies also describe how".split()
    + "during that period many accounts mention".split()
)

_NAME_HEADS = ["Arden", "Balor", "Corin", "Derwent", "Elsing", "Fenwick", "Garron", "Halvern"]
_NAME_TAILS = ["Institute", "Valley", "Harbor", "Society", "Bridge", "Museum", "Observatory"]
_TYPES = ["Organization", "Place", "Person", "Event", "Artifact"]
_PREDICATES = ["located_in", "member_of", "adjacent_to", "founded", "supports"]


def make_passing_record(
    rng: random.Random,
    doc_id: str,
    n_entities: int | None = None,
    n_triples: int | None = None,
) -> AnnotationRecord:
    """A synthetic record that passes the full verification battery."""
    if n_entities is None:
        n_entities = rng.randint(2, 4)
    names = []
    while len(names) < n_entities:
        name = f"{rng.choice(_NAME_HEADS)} {rng.choice(_NAME_TAILS)}"
        if name not in names:
            names.append(name)
    types = [rng.choice(_TYPES) for _ in names]
    # Keep the fixture away from the degenerate filters by construction.
    if len(set(types)) == 1:
        types[0] = next(t for t in _TYPES if t != types[0])
    entities = tuple(Entity(id=i, name=names[i], type_label=types[i]) for i in range(n_entities))

    # One or two mentions per entity, laid out left to right with filler text.
    mention_plan: list[int] = []
    for i in range(n_entities):
        mention_plan.extend([i] * rng.randint(1, 2))
    rng.shuffle(mention_plan)
    pieces: list[str] = []
    mentions: list[Mention] = []
    cursor = 0
    for entity_index in mention_plan:
        filler = " ".join(rng.choice(_FILLERS) for _ in range(rng.randint(2, 4))) + " "
        pieces.append(filler)
        cursor += len(filler)
        surface = names[entity_index]
        pieces.append(surface)
        mentions.append(
            Mention(
                entity_id=entity_index,
                span=Span(cursor, cursor + len(surface)),
                surface=surface,
                type_label=types[entity_index],
            )
        )
        cursor += len(surface)
        pieces.append(" ")
        cursor += 1
    pieces.append("and so the story ends.")
    text = "".join(pieces)
    annotated = render_annotated(text, mentions)
    plain, parsed = parse_annotated(annotated)
    assert plain == text

    if n_triples is None:
        n_triples = rng.randint(1, 3)
    triples = []
    for _ in range(n_triples):
        subject, obj = rng.sample(range(n_entities), 2) if n_entities >= 2 else (0, 0)
        predicate = rng.choice(_PREDICATES)
        triples.append(
            Triple(
                description=f"{names[subject]} {predicate.replace('_', ' ')} {names[obj]}.",
                triple_string=f"({names[subject]}, {predicate}, {names[obj]})",
                subject=subject,
                predicate=predicate,
                object=obj,
            )
        )
    triples = tuple(triples)
    entity_types = tuple(dict.fromkeys(e.type_label for e in entities))
    relation_types = tuple(dict.fromkeys(t.predicate for t in triples))
    return AnnotationRecord(
        doc_id=doc_id,
        text=text,
        annotated_text=annotated,
        entities=entities,
        mentions=tuple(parsed),
        triples=triples,
        entity_types=entity_types,
        relation_types=relation_types,
    )


def trivial_record(doc_id: str, text: str) -> AnnotationRecord:
    """Minimal one-entity record around arbitrary text (for retrieval tests)."""
    word = text.split()[0]
    annotated = text.replace(word, f'<ent id="0" type="Topic">{word}</ent>', 1)
    _, mentions = parse_annotated(annotated)
    return AnnotationRecord(
        doc_id=doc_id,
        text=text,
        annotated_text=annotated,
        entities=(Entity(0, word, "Topic"),),
        mentions=tuple(mentions),
        triples=(),
        entity_types=("Topic",),
        relation_types=(),
    )


def replay_gateway(tmp_path, exchanges=(), subdir="cache") -> ChatGateway:
    """A replay-mode gateway seeded with (prompt, params, response) triples."""
    gateway = ChatGateway(cache_dir=tmp_path / subdir, mode="replay")
    for prompt, params, response in exchanges:
        gateway.store(prompt, params, response)
    return gateway


def params_for(model: str, temperature: float) -> GenerationParams:
    return GenerationParams(temperature=temperature, model_name=model)


def good_annotation_response(text: str) -> str:
    """A model reply that annotates the first word of ``text`` and passes
    every verification check."""
    word = text.split()[0]
    annotated = text.replace(word, f'<ent id="0" type="Topic">{word}</ent>', 1)
    payload = {
        "text_with_spans": annotated,
        "entities": [{"id": 0, "name": word, "type": "Topic"}],
        "triples": [],
        "relation_types": [],
        "entity_types": ["Topic"],
    }
    return "```json\n" + json.dumps(payload, ensure_ascii=False) + "\n```"


def completed_inference_json(text, annotated, entities, relations, schema) -> str:
    """A call-2 style reply: the completed annotation JSON in a fenced block."""
    payload = {
        "text": text,
        "entity_types": list(schema.entity_types),
        "text_with_spans": annotated,
        "entities": entities,
        "relation_types": list(schema.relation_types),
        "relations": relations,
    }
    return "```json\n" + json.dumps(payload, ensure_ascii=False) + "\n```"
