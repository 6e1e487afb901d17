"""Scoring of predictions against gold annotations.

Five tasks: mention detection, entity identification, entity classification,
and relation extraction in general and strict variants. Matching works on
normalized surfaces with greedy one-to-one assignment (descending overlap,
content-based tie-break) and all scores are micro-averaged over documents.

Two evaluation modes mirror how unparseable model outputs are handled:
``all_docs`` scores an invalid prediction as empty (its gold annotations all
count as misses), ``valid_only`` drops those documents entirely. Precision is
identical across modes by construction; only recall moves.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from .core import AnnotationRecord, SynthexError, normalize_surface
from .inference import Prediction

TASKS = ("mention_det", "entity_ident", "entity_class", "re_general", "re_strict")

TASK_LABELS = {
    "mention_det": "Mention det.",
    "entity_ident": "Entity Ident.",
    "entity_class": "Entity Class.",
    "re_general": "RE (General)",
    "re_strict": "RE (Strict)",
}

MODE_ALL = "all_docs"
MODE_VALID_ONLY = "valid_only"


class GoldMissingMentionsError(SynthexError):
    pass


class EmptyPredictionSetError(SynthexError):
    pass


def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """Precision, recall, F1 as percentages; zero denominators score zero."""
    precision = 100.0 * tp / (tp + fp) if tp + fp else 0.0
    recall = 100.0 * tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


@dataclass(frozen=True)
class TaskScore:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return prf(self.tp, self.fp, self.fn)[0]

    @property
    def recall(self) -> float:
        return prf(self.tp, self.fp, self.fn)[1]

    @property
    def f1(self) -> float:
        return prf(self.tp, self.fp, self.fn)[2]

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
        }


def valid_rate(predictions: list[Prediction]) -> float:
    if not predictions:
        raise EmptyPredictionSetError("cannot compute a validity rate over zero predictions")
    return 100.0 * sum(1 for p in predictions if p.valid) / len(predictions)


# --- clusters -------------------------------------------------------------------

@dataclass(frozen=True)
class _Cluster:
    surfaces: frozenset[str]
    type_label: str
    key: tuple

    @classmethod
    def build(cls, entity, mentions) -> "_Cluster":
        surfaces = frozenset(
            normalize_surface(m.surface) for m in mentions if m.entity_id == entity.id
        )
        if not surfaces:
            surfaces = frozenset({normalize_surface(entity.name)})
        type_label = normalize_surface(entity.type_label)
        return cls(surfaces=surfaces, type_label=type_label, key=(tuple(sorted(surfaces)), type_label))


def _clusters(entities, mentions) -> list[_Cluster]:
    return [_Cluster.build(e, mentions) for e in entities]


def _cluster_by_id(entities, mentions) -> dict[int, _Cluster]:
    return {e.id: _Cluster.build(e, mentions) for e in entities}


def _greedy_match(pred_clusters: list[_Cluster], gold_clusters: list[_Cluster]) -> list[tuple[int, int]]:
    """One-to-one cluster pairs, highest surface overlap first.

    The tie-break is content-based (sorted surfaces plus type), so scores do
    not depend on input ordering.
    """
    candidates = []
    for i, p in enumerate(pred_clusters):
        for j, g in enumerate(gold_clusters):
            overlap = len(p.surfaces & g.surfaces)
            if overlap:
                candidates.append((-overlap, p.key, g.key, i, j))
    candidates.sort()
    taken_pred: set[int] = set()
    taken_gold: set[int] = set()
    pairs = []
    for _, _, _, i, j in candidates:
        if i not in taken_pred and j not in taken_gold:
            taken_pred.add(i)
            taken_gold.add(j)
            pairs.append((i, j))
    return pairs


# --- per-task evaluation -----------------------------------------------------

def _iter_scorable(predictions, golds, mode):
    """Yield (pred_or_None, gold) per gold document according to the mode."""
    by_id = {p.doc_id: p for p in predictions}
    for gold in golds:
        pred = by_id.get(gold.doc_id)
        usable = pred is not None and pred.valid
        if not usable and mode == MODE_VALID_ONLY:
            continue
        yield (pred if usable else None), gold


def eval_mentions(predictions, golds, mode=MODE_ALL, use_spans=False) -> TaskScore:
    """Mention detection: multiset matching on normalized surfaces (or exact
    spans with ``use_spans``), type ignored."""
    tp = fp = fn = 0
    for pred, gold in _iter_scorable(predictions, golds, mode):
        if gold.entities and not gold.mentions:
            raise GoldMissingMentionsError(
                f"gold doc {gold.doc_id} carries no mention-level annotation"
            )
        if use_spans:
            gold_items = Counter((m.span.start, m.span.end) for m in gold.mentions)
            pred_items = Counter(
                (m.span.start, m.span.end) for m in (pred.mentions if pred else ())
            )
        else:
            gold_items = Counter(normalize_surface(m.surface) for m in gold.mentions)
            pred_items = Counter(
                normalize_surface(m.surface) for m in (pred.mentions if pred else ())
            )
        overlap = sum((pred_items & gold_items).values())
        tp += overlap
        fp += sum(pred_items.values()) - overlap
        fn += sum(gold_items.values()) - overlap
    return TaskScore(tp, fp, fn)


def eval_entity_ident(predictions, golds, mode=MODE_ALL) -> TaskScore:
    """Entity identification: clusters match on any shared normalized surface."""
    tp = fp = fn = 0
    for pred, gold in _iter_scorable(predictions, golds, mode):
        gold_clusters = _clusters(gold.entities, gold.mentions)
        pred_clusters = _clusters(pred.entities, pred.mentions) if pred else []
        pairs = _greedy_match(pred_clusters, gold_clusters)
        tp += len(pairs)
        fp += len(pred_clusters) - len(pairs)
        fn += len(gold_clusters) - len(pairs)
    return TaskScore(tp, fp, fn)


def eval_entity_class(predictions, golds, mode=MODE_ALL) -> TaskScore:
    """As identification, but a matched pair only counts when the normalized
    type labels agree; a match with the wrong type costs both FP and FN."""
    tp = fp = fn = 0
    for pred, gold in _iter_scorable(predictions, golds, mode):
        gold_clusters = _clusters(gold.entities, gold.mentions)
        pred_clusters = _clusters(pred.entities, pred.mentions) if pred else []
        pairs = _greedy_match(pred_clusters, gold_clusters)
        correct = sum(
            1 for i, j in pairs if pred_clusters[i].type_label == gold_clusters[j].type_label
        )
        tp += correct
        fp += len(pred_clusters) - correct
        fn += len(gold_clusters) - correct
    return TaskScore(tp, fp, fn)


def eval_relations(predictions, golds, mode=MODE_ALL, strict=False) -> TaskScore:
    """Relation extraction: triples match on normalized predicate plus
    endpoint-cluster surface overlap on both ends; ``strict`` additionally
    requires endpoint types to agree. Directionality always matters."""
    tp = fp = fn = 0
    for pred, gold in _iter_scorable(predictions, golds, mode):
        gold_lookup = _cluster_by_id(gold.entities, gold.mentions)
        gold_triples = [
            (normalize_surface(t.predicate), gold_lookup.get(t.subject), gold_lookup.get(t.object))
            for t in gold.triples
        ]
        if pred is not None:
            pred_lookup = _cluster_by_id(pred.entities, pred.mentions)
            pred_triples = [
                (normalize_surface(t.predicate), pred_lookup.get(t.subject), pred_lookup.get(t.object))
                for t in pred.triples
            ]
        else:
            pred_triples = []
        candidates = []
        for i, (p_pred, p_subj, p_obj) in enumerate(pred_triples):
            if p_subj is None or p_obj is None:
                continue
            for j, (g_pred, g_subj, g_obj) in enumerate(gold_triples):
                if g_subj is None or g_obj is None:
                    continue
                if p_pred != g_pred:
                    continue
                subj_overlap = len(p_subj.surfaces & g_subj.surfaces)
                obj_overlap = len(p_obj.surfaces & g_obj.surfaces)
                if not subj_overlap or not obj_overlap:
                    continue
                if strict and (
                    p_subj.type_label != g_subj.type_label or p_obj.type_label != g_obj.type_label
                ):
                    continue
                candidates.append(
                    (
                        -(subj_overlap + obj_overlap),
                        (p_pred, p_subj.key, p_obj.key),
                        (g_pred, g_subj.key, g_obj.key),
                        i,
                        j,
                    )
                )
        candidates.sort()
        taken_pred: set[int] = set()
        taken_gold: set[int] = set()
        matched = 0
        for _, _, _, i, j in candidates:
            if i not in taken_pred and j not in taken_gold:
                taken_pred.add(i)
                taken_gold.add(j)
                matched += 1
        tp += matched
        fp += len(pred_triples) - matched
        fn += len(gold_triples) - matched
    return TaskScore(tp, fp, fn)


# --- report --------------------------------------------------------------------

@dataclass
class EvalReport:
    mode: str
    valid_rate: float
    tasks: dict[str, TaskScore]

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "valid_rate": self.valid_rate,
            "tasks": {name: score.to_dict() for name, score in self.tasks.items()},
        }

    def format_table(self) -> str:
        header = f"{'Task':<16} {'P (%)':>8} {'R (%)':>8} {'F1 (%)':>8}"
        lines = [f"mode: {self.mode}   valid outputs: {self.valid_rate:.2f}%", header, "-" * len(header)]
        for name in TASKS:
            if name not in self.tasks:
                continue
            score = self.tasks[name]
            lines.append(
                f"{TASK_LABELS[name]:<16} {score.precision:>8.2f} {score.recall:>8.2f} {score.f1:>8.2f}"
            )
        return "\n".join(lines)


def evaluate(
    predictions: list[Prediction],
    golds: list[AnnotationRecord],
    mode: str = MODE_ALL,
    use_spans: bool = False,
) -> EvalReport:
    """Score every task; mention detection is skipped when the gold data has
    no mention-level annotation (entity names only)."""
    if mode not in (MODE_ALL, MODE_VALID_ONLY):
        raise ValueError(f"unknown evaluation mode {mode!r}")
    tasks: dict[str, TaskScore] = {}
    try:
        tasks["mention_det"] = eval_mentions(predictions, golds, mode, use_spans=use_spans)
    except GoldMissingMentionsError:
        pass
    tasks["entity_ident"] = eval_entity_ident(predictions, golds, mode)
    tasks["entity_class"] = eval_entity_class(predictions, golds, mode)
    tasks["re_general"] = eval_relations(predictions, golds, mode, strict=False)
    tasks["re_strict"] = eval_relations(predictions, golds, mode, strict=True)
    return EvalReport(mode=mode, valid_rate=valid_rate(predictions), tasks=tasks)
