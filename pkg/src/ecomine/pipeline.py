"""Stage orchestration: specialize, generalize, extract.

The extract stage is built for multi-day batches: per-paper results are
appended to a results file as they commit, a checkpoint is flushed
every few completions, and a fingerprint of the schema in force binds
checkpoint and results together so a resumed run can never mix
schemas. Workers only call the gateway; parsing and persistence happen
on the calling thread (single writer).
"""

from __future__ import annotations

import dataclasses
import json
import logging
import random
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Collection, Sequence

from .corpus import CorpusStore, PaperRecord, atomic_write_text
from .errors import (
    CheckpointError,
    InvalidSchemaError,
    PromptError,
    QuarantineError,
    SchemaParseError,
    StageFailure,
    TransportError,
)
from .gateway import LlmGateway, RateLimitPolicy
from .prompts import build_extract_prompt, build_generalize_prompt, build_specialize_prompt
from .schema import (
    CandidateSchema,
    ExtractionResult,
    FieldSpec,
    MergeReport,
    StandardizedSchema,
    ensure_valid_schema,
    merge_candidates,
    parse_candidate,
    parse_result,
    parse_schema,
    result_from_dict,
    schema_fingerprint,
    serialize_result,
)

logger = logging.getLogger(__name__)

#: Checkpoint flush cadence during extract, in completed papers.
CHECKPOINT_EVERY = 25


@dataclass
class StageConfig:
    """Knobs shared by the three stages."""

    sample_size: int = 10
    generalize_variants: int = 3
    parallelism: int = 4
    rate_policy: RateLimitPolicy = field(default_factory=RateLimitPolicy)
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.sample_size < 2:
            raise ValueError("sample_size must be at least 2")
        if self.generalize_variants < 1:
            raise ValueError("generalize_variants must be at least 1")
        if self.parallelism < 1:
            raise ValueError("parallelism must be at least 1")


@dataclass
class Checkpoint:
    """Resumable extract-stage state."""

    stage: str
    schema_fingerprint: str
    completed: set[str] = field(default_factory=set)
    out_of_scope: set[str] = field(default_factory=set)
    quarantined: dict[str, str] = field(default_factory=dict)

    def processed(self) -> set[str]:
        return self.completed | self.out_of_scope | set(self.quarantined)

    def save(self, path: str | Path) -> None:
        doc = {
            "stage": self.stage,
            "schema_fingerprint": self.schema_fingerprint,
            "completed": sorted(self.completed),
            "out_of_scope": sorted(self.out_of_scope),
            "quarantined": self.quarantined,
        }
        atomic_write_text(Path(path), json.dumps(doc, ensure_ascii=False, sort_keys=True, indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
        try:
            checkpoint = cls(
                stage=doc["stage"],
                schema_fingerprint=doc["schema_fingerprint"],
                completed=set(doc.get("completed", [])),
                out_of_scope=set(doc.get("out_of_scope", [])),
                quarantined=dict(doc.get("quarantined", {})),
            )
        except KeyError as exc:
            raise CheckpointError(f"checkpoint {path} missing field {exc}") from exc
        if checkpoint.completed & set(checkpoint.quarantined):
            raise CheckpointError(f"checkpoint {path} has DOIs both completed and quarantined")
        return checkpoint


@dataclass
class SpecializeOutcome:
    candidates: list[CandidateSchema]
    quarantined: dict[str, str]
    sampled_dois: list[str]


@dataclass
class GeneralizeOutcome:
    """Schema variants; index 0 is the deterministic merge baseline."""

    variants: list[StandardizedSchema]
    chosen_index: int
    merge_report: MergeReport
    raw_responses: list[str]

    @property
    def chosen(self) -> StandardizedSchema:
        return self.variants[self.chosen_index]


@dataclass
class ExtractionRunSummary:
    """Cumulative accounting: extracted + out_of_scope + quarantined ==
    processed, for every run and every checkpoint state."""

    processed: int
    extracted: int
    out_of_scope: int
    quarantined: int


def run_specialize(
    store: CorpusStore,
    config: StageConfig,
    gateway: LlmGateway,
    excluded_dois: Collection[str] = (),
) -> SpecializeOutcome:
    """Draw a seeded sample of papers and collect per-paper schema proposals.

    Responses that do not parse as a candidate schema are quarantined
    with the reason; human-flagged papers can be kept out of the draw
    via excluded_dois.
    """
    eligible = [
        record
        for record in store.available_records()
        if record.abstract and record.doi not in set(excluded_dois)
    ]
    if len(eligible) < config.sample_size:
        raise StageFailure(
            f"specialize needs {config.sample_size} papers with abstracts, store has {len(eligible)}"
        )
    rng = random.Random(config.rng_seed)
    shuffled = list(eligible)  # eligible is DOI-sorted, so the shuffle is seed-reproducible
    rng.shuffle(shuffled)
    sample = shuffled[: config.sample_size]

    candidates: list[CandidateSchema] = []
    quarantined: dict[str, str] = {}
    for record in sample:
        try:
            response = gateway.complete(build_specialize_prompt(record))
            candidates.append(parse_candidate(response.raw_text, record.doi))
        except (PromptError, SchemaParseError) as exc:
            logger.warning("quarantining specialize paper %s: %s", record.doi, exc)
            quarantined[record.doi] = str(exc)

    if len(candidates) < 2:
        raise StageFailure(
            f"specialize produced {len(candidates)} usable candidates; at least 2 required"
        )
    return SpecializeOutcome(
        candidates=candidates,
        quarantined=quarantined,
        sampled_dois=[record.doi for record in sample],
    )


def run_generalize(
    candidates: Sequence[CandidateSchema],
    config: StageConfig,
    gateway: LlmGateway,
    selection: int | None = None,
) -> GeneralizeOutcome:
    """Produce standardized schema variants from the candidates.

    Variant 0 is always the deterministic merge (the oracle baseline);
    each additional variant is requested from the provider explicitly,
    tagged with its variant number rather than relying on sampling
    accidents. chosen_index follows the human selection input when
    given, else 0.
    """
    oracle_schema, merge_report = merge_candidates(candidates)
    variants = [oracle_schema]
    raw_responses: list[str] = []

    base_prompt = build_generalize_prompt(candidates)
    for index in range(1, config.generalize_variants + 1):
        prompt = dataclasses.replace(
            base_prompt,
            user=base_prompt.user + f"\nGenerate variant {index} of {config.generalize_variants}.\n",
        )
        response = gateway.complete(prompt)
        raw_responses.append(response.raw_text)
        try:
            variants.append(ensure_valid_schema(parse_schema(response.raw_text)))
        except (SchemaParseError, InvalidSchemaError) as exc:
            logger.warning("discarding invalid generalize variant %d: %s", index, exc)

    if len(variants) == 1:
        raise StageFailure(
            "every provider-merged schema variant was structurally invalid",
            raw_responses=raw_responses,
        )
    chosen_index = 0 if selection is None else selection
    if not 0 <= chosen_index < len(variants):
        raise StageFailure(
            f"variant selection {chosen_index} out of range (have {len(variants)} variants)"
        )
    return GeneralizeOutcome(
        variants=variants,
        chosen_index=chosen_index,
        merge_report=merge_report,
        raw_responses=raw_responses,
    )


def run_extract(
    store: CorpusStore,
    schema: StandardizedSchema,
    config: StageConfig,
    gateway: LlmGateway,
    results_path: str | Path,
    checkpoint_path: str | Path | None = None,
) -> ExtractionRunSummary:
    """Apply the standardized schema to every paper with an abstract.

    Every eligible paper ends up in exactly one of extracted,
    out_of_scope, or quarantined. Completions are appended to
    results_path as they commit; a hard gateway failure flushes the
    checkpoint and re-raises, and a rerun with the same checkpoint
    resumes where it left off. On completion the results file is
    compacted to one DOI-sorted line per paper.
    """
    ensure_valid_schema(schema)
    fingerprint = schema_fingerprint(schema)

    checkpoint = Checkpoint(stage="extract", schema_fingerprint=fingerprint)
    if checkpoint_path is not None and Path(checkpoint_path).exists():
        checkpoint = Checkpoint.load(checkpoint_path)
        if checkpoint.stage != "extract":
            raise CheckpointError(f"checkpoint belongs to stage {checkpoint.stage!r}")
        if checkpoint.schema_fingerprint != fingerprint:
            raise CheckpointError(
                "checkpoint was written under a different schema; refusing to mix schemas"
            )

    eligible = [record for record in store.available_records() if record.abstract]
    todo = [record for record in eligible if record.doi not in checkpoint.processed()]
    logger.info("extract: %d eligible, %d already processed", len(eligible), len(eligible) - len(todo))

    results_path = Path(results_path)
    results_path.parent.mkdir(parents=True, exist_ok=True)

    def call(record: PaperRecord) -> str:
        return gateway.complete(build_extract_prompt(record, schema)).raw_text

    failure: TransportError | None = None
    since_flush = 0
    pool = ThreadPoolExecutor(max_workers=config.parallelism)
    try:
        with results_path.open("a", encoding="utf-8") as sink:
            futures = {pool.submit(call, record): record.doi for record in todo}
            for future in as_completed(futures):
                doi = futures[future]
                try:
                    raw = future.result()
                except TransportError as exc:
                    failure = exc
                    break
                except PromptError as exc:
                    # the paper itself cannot form a prompt; retrying won't help
                    logger.warning("quarantining unpromptable paper %s: %s", doi, exc)
                    checkpoint.quarantined[doi] = str(exc)
                    since_flush += 1
                    continue
                try:
                    result = parse_result(raw, doi)
                except QuarantineError as exc:
                    logger.warning("quarantining extract response for %s", doi)
                    checkpoint.quarantined[doi] = str(exc)
                else:
                    sink.write(serialize_result(result) + "\n")
                    sink.flush()
                    if result.status == "out_of_scope":
                        checkpoint.out_of_scope.add(doi)
                    else:
                        checkpoint.completed.add(doi)
                since_flush += 1
                if checkpoint_path is not None and since_flush >= CHECKPOINT_EVERY:
                    checkpoint.save(checkpoint_path)
                    since_flush = 0
    finally:
        pool.shutdown(wait=True, cancel_futures=True)
        if checkpoint_path is not None:
            checkpoint.save(checkpoint_path)

    if failure is not None:
        raise failure

    _compact_results(results_path)
    return ExtractionRunSummary(
        processed=len(checkpoint.processed()),
        extracted=len(checkpoint.completed),
        out_of_scope=len(checkpoint.out_of_scope),
        quarantined=len(checkpoint.quarantined),
    )


def _compact_results(path: Path) -> None:
    """Rewrite the append-only results file as one sorted line per DOI."""
    results = load_results(path)
    payload = "".join(
        serialize_result(result) + "\n"
        for result in sorted(results, key=lambda r: r.paper_doi)
    )
    atomic_write_text(path, payload)


def load_results(path: str | Path) -> list[ExtractionResult]:
    """Read a results file; on duplicate DOIs the last line wins."""
    by_doi: dict[str, ExtractionResult] = {}
    path = Path(path)
    if not path.exists():
        return []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        result = result_from_dict(json.loads(line))
        by_doi[result.paper_doi] = result
    return list(by_doi.values())


def load_candidates(path: str | Path) -> list[CandidateSchema]:
    """Read a candidates file written by the specialize stage."""
    candidates = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        candidates.append(
            CandidateSchema(
                paper_doi=doc["doi"],
                blocks={
                    block: [_field_from_disk(d) for d in descriptors]
                    for block, descriptors in doc["blocks"].items()
                },
            )
        )
    return candidates


def _field_from_disk(doc: dict) -> FieldSpec:
    return FieldSpec(
        name=doc["field"],
        kind=doc.get("kind", "text"),
        values=tuple(doc.get("values", [])),
        note=doc.get("note"),
    )


def load_schema_file(path: str | Path) -> StandardizedSchema:
    """Read and validate a standardized schema JSON file."""
    return ensure_valid_schema(parse_schema(Path(path).read_text(encoding="utf-8")))
