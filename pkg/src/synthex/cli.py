"""Command-line pipeline orchestration.

One subcommand per stage — ingest, generate, postprocess, stats, index,
infer, eval — so any stage can be rerun in isolation. Every command writes a
run manifest (config hash plus input/output content hashes) next to its
outputs; with a populated replay cache, identical manifests mean identical
artifacts. Credentials travel only through environment variables, never
flags, so they stay out of shell history and manifests.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import __version__
from .annotator import (
    ERROR_KINDS,
    Annotator,
    FailureRecord,
    collect_length_stats,
    failure_to_dict,
)
from .core import (
    AnnotationRecord,
    Schema,
    SourceDocument,
    SynthexError,
    dump_jsonl,
    load_corpus,
    load_jsonl,
    load_records,
    save_records,
)
from .demostore import DemoIndex, ExclusionList, ProviderEmbedder, build_index
from .evaluate import MODE_ALL, MODE_VALID_ONLY, evaluate
from .gateway import ChatGateway, GatewayError
from .inference import InferencePipeline, prediction_from_dict, prediction_to_dict
from .postprocess import PostProcessor

API_KEY_ENV = "SYNTHEX_API_KEY"
CHAT_URL_ENV = "SYNTHEX_CHAT_BASE_URL"
EMBED_URL_ENV = "SYNTHEX_EMBED_BASE_URL"


@dataclass
class RunConfig:
    model_name: str = "default-model"
    chat_base_url: str = ""
    embed_base_url: str = ""
    embed_model: str = ""
    primary_temperature: float = 0.0
    retry_temperature: float = 0.2
    min_words: int = 100
    parallelism: int = 1
    cache_dir: str = ".synthex-cache"
    gateway_mode: str = "record"
    embedding_mode: str = "fallback"
    max_tokens: int | None = None
    bucket_width: int = 25
    top_k: int = 30

    def validate(self):
        if self.retry_temperature <= self.primary_temperature:
            raise ValueError("retry_temperature must be greater than primary_temperature")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if self.gateway_mode not in ("record", "replay", "live"):
            raise ValueError(f"unknown gateway_mode {self.gateway_mode!r}")
        if self.embedding_mode not in ("fallback", "provider"):
            raise ValueError(f"unknown embedding_mode {self.embedding_mode!r}")

    @classmethod
    def load(cls, path: str | None) -> "RunConfig":
        config = cls()
        if path:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
            known = {f.name for f in fields(cls)}
            unknown = set(data) - known
            if unknown:
                raise ValueError(f"unknown config keys: {sorted(unknown)}")
            for key, value in data.items():
                setattr(config, key, value)
        if os.environ.get(CHAT_URL_ENV):
            config.chat_base_url = os.environ[CHAT_URL_ENV]
        if os.environ.get(EMBED_URL_ENV):
            config.embed_base_url = os.environ[EMBED_URL_ENV]
        return config

    def apply_flags(self, args: argparse.Namespace):
        if getattr(args, "cache", None):
            self.cache_dir = args.cache
        if getattr(args, "replay", False):
            self.gateway_mode = "replay"
        if getattr(args, "record", False):
            self.gateway_mode = "record"
        for flag in ("parallelism", "min_words", "top_k", "embedding_mode"):
            value = getattr(args, flag, None)
            if value is not None:
                setattr(self, flag, value)
        self.validate()

    def config_hash(self) -> str:
        canonical = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def make_gateway(self) -> ChatGateway:
        return ChatGateway(
            cache_dir=self.cache_dir if self.gateway_mode != "live" else None,
            mode=self.gateway_mode,
            base_url=self.chat_base_url,
            api_key=os.environ.get(API_KEY_ENV, ""),
        )

    def make_embedder(self) -> ProviderEmbedder | None:
        if self.embedding_mode != "provider":
            return None
        return ProviderEmbedder(
            base_url=self.embed_base_url,
            model_name=self.embed_model,
            api_key=os.environ.get(API_KEY_ENV, ""),
        )


@dataclass
class DatasetStats:
    documents: int = 0
    entities: int = 0
    entity_type_count: int = 0
    triples: int = 0
    relation_type_count: int = 0
    top_entity_types: list = field(default_factory=list)
    top_relation_types: list = field(default_factory=list)
    yield_percent: float | None = None

    def to_dict(self) -> dict:
        return {
            "documents": self.documents,
            "entities": self.entities,
            "entity_type_count": self.entity_type_count,
            "triples": self.triples,
            "relation_type_count": self.relation_type_count,
            "top_entity_types": [[name, count] for name, count in self.top_entity_types],
            "top_relation_types": [[name, count] for name, count in self.top_relation_types],
            "yield_percent": self.yield_percent,
        }


def compute_dataset_stats(
    records: list[AnnotationRecord], top_k: int = 30, failure_count: int | None = None
) -> DatasetStats:
    entity_type_freq: Counter = Counter()
    relation_type_freq: Counter = Counter()
    total_entities = 0
    total_triples = 0
    for record in records:
        total_entities += len(record.entities)
        total_triples += len(record.triples)
        entity_type_freq.update(e.type_label for e in record.entities)
        relation_type_freq.update(t.predicate for t in record.triples)
    yield_percent = None
    if failure_count is not None:
        attempts = len(records) + failure_count
        yield_percent = 100.0 * len(records) / attempts if attempts else 0.0
    top = lambda freq: sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]
    return DatasetStats(
        documents=len(records),
        entities=total_entities,
        entity_type_count=len(entity_type_freq),
        triples=total_triples,
        relation_type_count=len(relation_type_freq),
        top_entity_types=top(entity_type_freq),
        top_relation_types=top(relation_type_freq),
        yield_percent=yield_percent,
    )


# --- manifest ------------------------------------------------------------------

def _file_hash(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(directory: str | Path, command: str, config: RunConfig, inputs: list, outputs: list):
    manifest = {
        "command": command,
        "tool_version": __version__,
        "config_hash": config.config_hash(),
        "inputs": {str(p): _file_hash(p) for p in inputs},
        "outputs": {str(p): _file_hash(p) for p in outputs},
    }
    path = Path(directory) / f"{command}.manifest.json"
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    tmp.replace(path)
    return path


# --- commands ------------------------------------------------------------------

def cmd_ingest(args, config: RunConfig) -> int:
    source = Path(args.input)
    docs: list[SourceDocument] = []
    if source.is_dir():
        for txt in sorted(source.glob("*.txt")):
            text = txt.read_text(encoding="utf-8")
            if text.strip():
                docs.append(SourceDocument(id=txt.stem, text=text, title=txt.stem))
    else:
        docs = load_corpus(source)
    if not docs:
        raise SynthexError("empty corpus")
    dump_jsonl(
        ({"id": d.id, "title": d.title, "text": d.text} for d in docs), args.output
    )
    out_dir = Path(args.output).parent
    write_manifest(out_dir, "ingest", config, [source] if source.is_file() else [], [args.output])
    print(f"ingested {len(docs)} documents -> {args.output}")
    return 0


def cmd_generate(args, config: RunConfig) -> int:
    corpus = load_corpus(args.corpus)
    if not corpus:
        raise SynthexError("empty corpus")
    gateway = config.make_gateway()
    annotator = Annotator(
        gateway,
        model_name=config.model_name,
        min_words=config.min_words,
        primary_temperature=config.primary_temperature,
        retry_temperature=config.retry_temperature,
        max_tokens=config.max_tokens,
    )

    def job(doc):
        try:
            return annotator.annotate(doc), None
        except GatewayError as exc:
            return None, f"{doc.id}: {exc}"

    with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
        results = list(pool.map(job, corpus))

    outcomes = [outcome for outcome, _ in results if outcome is not None]
    job_errors = [error for _, error in results if error is not None]
    records = [o for o in outcomes if isinstance(o, AnnotationRecord)]
    failures = [o for o in outcomes if isinstance(o, FailureRecord)]

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    annotations_path = out_dir / "annotations.jsonl"
    failures_path = out_dir / "failures.jsonl"
    stats_path = out_dir / "length_stats.csv"
    save_records(records, annotations_path)
    dump_jsonl((failure_to_dict(f) for f in failures), failures_path)
    _write_length_stats(outcomes, stats_path, config.bucket_width)
    write_manifest(out_dir, "generate", config, [args.corpus], [annotations_path, failures_path, stats_path])

    attempts = len(outcomes)
    yield_percent = 100.0 * len(records) / attempts if attempts else 0.0
    print(f"annotated {len(records)}/{attempts} documents, yield {yield_percent:.2f}%")
    for error in job_errors:
        print(f"gateway error: {error}", file=sys.stderr)
    if job_errors:
        print(f"{len(job_errors)} documents failed on gateway errors", file=sys.stderr)
    return 0


def _write_length_stats(outcomes, path: Path, bucket_width: int):
    rows = collect_length_stats(outcomes, bucket_width)
    tmp = path.with_name(path.name + ".tmp")
    with io.open(tmp, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bucket", "attempts", *ERROR_KINDS])
        for row in rows:
            writer.writerow(
                [row.label, row.attempts, *[row.failures.get(kind, 0) for kind in ERROR_KINDS]]
            )
    tmp.replace(path)


def cmd_postprocess(args, config: RunConfig) -> int:
    records = load_records(args.annotations)
    gateway = config.make_gateway()
    processor = PostProcessor(gateway, model_name=config.model_name, max_tokens=config.max_tokens)
    kept, drop_log = processor.process(records, parallelism=config.parallelism)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    kept_path = out_dir / "kept.jsonl"
    drops_path = out_dir / "drops.jsonl"
    save_records(kept, kept_path)
    dump_jsonl((entry.to_dict() for entry in drop_log), drops_path)
    write_manifest(out_dir, "postprocess", config, [args.annotations], [kept_path, drops_path])
    dropped_docs = len(records) - len(kept)
    print(f"kept {len(kept)}/{len(records)} documents ({dropped_docs} dropped, {len(drop_log)} log entries)")
    return 0


def cmd_stats(args, config: RunConfig) -> int:
    records = load_records(args.dataset)
    failure_count = None
    if args.failures:
        failure_count = sum(1 for _ in load_jsonl(args.failures))
    stats = compute_dataset_stats(records, top_k=config.top_k, failure_count=failure_count)
    payload = json.dumps(stats.to_dict(), indent=2, ensure_ascii=False)
    if args.output:
        Path(args.output).write_text(payload + "\n", encoding="utf-8")
    print(
        f"documents: {stats.documents}\n"
        f"entities: {stats.entities} across {stats.entity_type_count} entity types\n"
        f"triples: {stats.triples} across {stats.relation_type_count} relation types"
    )
    if stats.yield_percent is not None:
        print(f"yield: {stats.yield_percent:.2f}%")
    if stats.top_entity_types:
        print("top entity types:")
        for name, count in stats.top_entity_types:
            print(f"  {count:>6}  {name}")
    if stats.top_relation_types:
        print("top relation types:")
        for name, count in stats.top_relation_types:
            print(f"  {count:>6}  {name}")
    return 0


def cmd_index(args, config: RunConfig) -> int:
    records = load_records(args.dataset)
    if not records:
        raise SynthexError("cannot index an empty dataset")
    index = build_index(
        records,
        mode=config.embedding_mode,
        embedder=config.make_embedder(),
        min_words=config.min_words,
    )
    index.save(args.output)
    write_manifest(Path(args.output).parent, "index", config, [args.dataset], [args.output])
    print(f"indexed {len(index)} demonstrations (mode={index.mode}, dim={index.dim}) -> {args.output}")
    return 0


def cmd_infer(args, config: RunConfig) -> int:
    task = json.loads(Path(args.task).read_text(encoding="utf-8"))
    schema = Schema.from_lists(
        task["schema"]["entity_types"], task["schema"]["relation_types"]
    )
    docs = [
        SourceDocument(id=str(d["id"]), text=d["text"], title=d.get("title"))
        for d in task["documents"]
    ]
    if not docs:
        raise SynthexError("task file contains no documents")
    index = DemoIndex.load(args.index)
    exclusions = ExclusionList.from_file(args.exclusions) if args.exclusions else None
    pipeline = InferencePipeline(
        gateway=config.make_gateway(),
        index=index,
        model_name=config.model_name,
        exclusions=exclusions,
        embedder=config.make_embedder(),
        max_tokens=config.max_tokens,
    )
    with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
        predictions = list(pool.map(lambda d: pipeline.infer(d, schema), docs))
    dump_jsonl((prediction_to_dict(p) for p in predictions), args.output)
    write_manifest(Path(args.output).parent, "infer", config, [args.task, args.index], [args.output])
    valid = sum(1 for p in predictions if p.valid)
    print(f"inferred {len(predictions)} documents, {valid} valid outputs")
    return 0


def cmd_eval(args, config: RunConfig) -> int:
    predictions = [prediction_from_dict(d) for d in load_jsonl(args.predictions)]
    if not predictions:
        raise SynthexError("no predictions to evaluate")
    golds = load_records(args.gold)
    modes = [args.mode] if args.mode else [MODE_ALL, MODE_VALID_ONLY]
    reports = [evaluate(predictions, golds, mode=m, use_spans=args.spans) for m in modes]
    for report in reports:
        print(report.format_table())
        print()
    if args.output:
        payload = {report.mode: report.to_dict() for report in reports}
        Path(args.output).write_text(
            json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )
    return 0


# --- argument parsing ---------------------------------------------------------

def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="path to a JSON run-config file")
    parser.add_argument("--cache", help="chat-completion cache directory")
    mode = parser.add_mutually_exclusive_group()
    mode.add_argument("--replay", action="store_true", help="serve model calls from the cache only")
    mode.add_argument("--record", action="store_true", help="call the endpoint and cache responses")
    parser.add_argument("--parallelism", type=int, help="worker pool size")
    parser.add_argument("--min-words", type=int, dest="min_words", help="truncation word bound")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synthex",
        description="Synthetic demonstration generation and in-context document-level extraction",
    )
    parser.add_argument("--version", action="version", version=f"synthex {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="normalize a raw corpus into corpus JSONL")
    p.add_argument("--input", required=True, help="JSONL file or directory of .txt files")
    p.add_argument("--output", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("generate", help="run phase-1 annotation over a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out-dir", required=True, dest="out_dir")
    _add_common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("postprocess", help="verify triples and filter degenerate documents")
    p.add_argument("--annotations", required=True)
    p.add_argument("--out-dir", required=True, dest="out_dir")
    _add_common(p)
    p.set_defaults(func=cmd_postprocess)

    p = sub.add_parser("stats", help="dataset statistics and type frequency tables")
    p.add_argument("--dataset", required=True)
    p.add_argument("--failures", help="failure sidecar JSONL for yield accounting")
    p.add_argument("--top-k", type=int, dest="top_k", help="frequency table size")
    p.add_argument("--output", help="write stats JSON here")
    _add_common(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("index", help="build the demonstration similarity index")
    p.add_argument("--dataset", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--embedding-mode", choices=["fallback", "provider"], dest="embedding_mode")
    _add_common(p)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("infer", help="two-call in-context extraction over a task file")
    p.add_argument("--task", required=True, help="JSON file with documents and schema")
    p.add_argument("--index", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--exclusions", help="newline-delimited doc ids to withhold from retrieval")
    _add_common(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against gold annotations")
    p.add_argument("--predictions", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--mode", choices=[MODE_ALL, MODE_VALID_ONLY], help="restrict to one mode")
    p.add_argument("--spans", action="store_true", help="match mentions on offsets instead of surfaces")
    p.add_argument("--output", help="write the report JSON here")
    _add_common(p)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = RunConfig.load(getattr(args, "config", None))
        config.apply_flags(args)
        return args.func(args, config)
    except (SynthexError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
