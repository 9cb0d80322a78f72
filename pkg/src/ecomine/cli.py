"""Command-line surface binding the modules into the extraction workflow.

Subcommands follow the stage order: ingest, stats, specialize,
generalize, extract, analyze, validate. Configuration precedence is
flags > environment variables (ECOMINE_*) > config file > defaults.
Progress goes to standard error; each command prints one machine-
readable summary line to standard output.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from . import analytics
from .corpus import CorpusStore, atomic_write_text, compute_stats, export_corpus
from .errors import EcomineError
from .gateway import HttpChatProvider, LlmGateway, RateLimitPolicy
from .harvest import FixtureHarvestClient, HttpHarvestClient, ingest_dois
from .mockllm import MockProvider
from .pipeline import (
    StageConfig,
    load_candidates,
    load_results,
    load_schema_file,
    run_extract,
    run_generalize,
    run_specialize,
)
from .schema import candidate_to_dict, schema_to_json, validate_result

logger = logging.getLogger(__name__)

ENV_PREFIX = "ECOMINE_"

_INT_KEYS = {"sample_size", "variants", "parallelism", "seed", "rate_requests", "max_retries", "top"}
_FLOAT_KEYS = {"rate_window", "backoff_base", "timeout"}


@dataclass
class CliConfig:
    """Resolved configuration shared across subcommands."""

    corpus: str = "corpus.jsonl"
    base_url: str | None = None
    fixtures: str | None = None
    provider: str = "mock"  # "mock" | "endpoint"
    endpoint: str | None = None
    model: str = "gpt-4o"
    api_key_var: str = "ECOMINE_API_KEY"
    report_dir: str = "reports"
    sample_size: int = 10
    variants: int = 3
    parallelism: int = 4
    seed: int = 0
    rate_requests: int = 60
    rate_window: float = 60.0
    max_retries: int = 3
    backoff_base: float = 0.5
    timeout: float = 60.0
    top: int = 10

    def stage_config(self) -> StageConfig:
        return StageConfig(
            sample_size=self.sample_size,
            generalize_variants=self.variants,
            parallelism=self.parallelism,
            rate_policy=RateLimitPolicy(
                max_requests_per_window=self.rate_requests,
                window=self.rate_window,
                max_retries=self.max_retries,
                backoff_base=self.backoff_base,
            ),
            rng_seed=self.seed,
        )


def _read_config_file(path: str | Path) -> dict[str, str]:
    """Parse a flat `key = value` config file; # starts a comment."""
    values: dict[str, str] = {}
    for raw_line in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise EcomineError(f"bad config line (expected key = value): {raw_line!r}")
        values[key.strip().lower()] = value.strip()
    return values


def resolve_config(args: argparse.Namespace) -> CliConfig:
    field_names = {f.name for f in dataclasses.fields(CliConfig)}
    resolved: dict[str, str | int | float] = {}

    if getattr(args, "config", None):
        for key, value in _read_config_file(args.config).items():
            if key not in field_names:
                raise EcomineError(f"unknown config key {key!r}")
            resolved[key] = value
    for name in field_names:
        env_value = os.environ.get(ENV_PREFIX + name.upper())
        if env_value is not None:
            resolved[name] = env_value
    for name in field_names:
        flag_value = getattr(args, name, None)
        if flag_value is not None:
            resolved[name] = flag_value

    for key in list(resolved):
        if key in _INT_KEYS:
            resolved[key] = int(resolved[key])
        elif key in _FLOAT_KEYS:
            resolved[key] = float(resolved[key])

    config = CliConfig(**resolved)
    if config.provider not in ("mock", "endpoint"):
        raise EcomineError(f"provider must be mock or endpoint, got {config.provider!r}")
    if config.provider == "endpoint":
        if not config.endpoint:
            raise EcomineError("provider=endpoint requires an endpoint URL")
        if not os.environ.get(config.api_key_var):
            raise EcomineError(
                f"provider=endpoint requires credential env var {config.api_key_var} to be set"
            )
    return config


def make_gateway(config: CliConfig) -> LlmGateway:
    if config.provider == "mock":
        provider = MockProvider()
    else:
        provider = HttpChatProvider(
            endpoint=config.endpoint,
            model=config.model,
            api_key=os.environ[config.api_key_var],
            timeout=config.timeout,
        )
    return LlmGateway(provider, config.stage_config().rate_policy)


def _open_store(config: CliConfig, must_exist: bool = True) -> CorpusStore:
    path = Path(config.corpus)
    if not path.exists():
        if must_exist:
            raise EcomineError(f"corpus not found: {path}")
        return CorpusStore()
    return CorpusStore.load(path)


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args: argparse.Namespace, config: CliConfig) -> int:
    dois = [
        line.strip()
        for line in Path(args.dois).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    if config.fixtures:
        client = FixtureHarvestClient(config.fixtures)
    elif config.base_url:
        client = HttpHarvestClient(
            config.base_url,
            timeout=config.timeout,
            max_retries=config.max_retries,
            backoff_base=config.backoff_base,
        )
    else:
        raise EcomineError("ingest needs --fixtures DIR or --base-url URL")

    store = _open_store(config, must_exist=False)
    summary = ingest_dois(store, dois, client, parallelism=config.parallelism)
    export_corpus(store, config.corpus, fmt="jsonl")

    skip_log = Path(config.corpus).with_suffix(".skipped.log")
    atomic_write_text(
        skip_log,
        "".join(f"missing\t{doi}\n" for doi in summary.missing)
        + "".join(f"malformed\t{doi}\n" for doi in summary.malformed),
    )
    logger.info("skip log written to %s", skip_log)
    print(
        f"queried={summary.queried} found={summary.found} "
        f"abstract_only={summary.abstract_only} with_full_text={summary.with_full_text} "
        f"malformed={len(summary.malformed)}"
    )
    return 0


def cmd_stats(args: argparse.Namespace, config: CliConfig) -> int:
    stats = compute_stats(_open_store(config, must_exist=False))
    parts = [
        f"total={stats.total}",
        f"abstract_only={stats.abstract_only}",
        f"with_full_text={stats.with_full_text}",
    ]
    for kind, tokens in (("abstract", stats.abstract_tokens), ("full_text", stats.full_text_tokens)):
        if tokens.count:
            parts.append(f"{kind}_token_min={tokens.minimum}")
            parts.append(f"{kind}_token_max={tokens.maximum}")
            parts.append(f"{kind}_token_avg={tokens.average:.2f}")
    print(" ".join(parts))
    return 0


def cmd_specialize(args: argparse.Namespace, config: CliConfig) -> int:
    store = _open_store(config)
    excluded = []
    if args.exclude:
        excluded = [
            line.strip()
            for line in Path(args.exclude).read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
    outcome = run_specialize(store, config.stage_config(), make_gateway(config), excluded_dois=excluded)
    payload = "".join(
        json.dumps(
            {"doi": c.paper_doi, "blocks": candidate_to_dict(c)},
            ensure_ascii=False,
            sort_keys=True,
        )
        + "\n"
        for c in outcome.candidates
    )
    atomic_write_text(Path(args.out), payload)
    for doi, reason in sorted(outcome.quarantined.items()):
        logger.warning("quarantined %s: %s", doi, reason)
    print(
        f"sampled={len(outcome.sampled_dois)} candidates={len(outcome.candidates)} "
        f"quarantined={len(outcome.quarantined)}"
    )
    return 0


def cmd_generalize(args: argparse.Namespace, config: CliConfig) -> int:
    candidates = load_candidates(args.candidates)
    outcome = run_generalize(
        candidates, config.stage_config(), make_gateway(config), selection=args.select
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for index, schema in enumerate(outcome.variants):
        atomic_write_text(out_dir / f"variant_{index}.json", schema_to_json(schema) + "\n")
    atomic_write_text(out_dir / "chosen.json", schema_to_json(outcome.chosen) + "\n")
    report = outcome.merge_report
    atomic_write_text(
        out_dir / "merge_report.json",
        json.dumps(
            {
                "candidate_count": report.candidate_count,
                "threshold": report.threshold,
                "dropped": [list(item) for item in report.dropped],
                "unmapped_blocks": [list(item) for item in report.unmapped_blocks],
            },
            ensure_ascii=False,
            sort_keys=True,
            indent=2,
        )
        + "\n",
    )
    print(f"variants={len(outcome.variants)} chosen={outcome.chosen_index}")
    return 0


def cmd_extract(args: argparse.Namespace, config: CliConfig) -> int:
    store = _open_store(config)
    schema = load_schema_file(args.schema)
    summary = run_extract(
        store,
        schema,
        config.stage_config(),
        make_gateway(config),
        results_path=args.results,
        checkpoint_path=args.checkpoint,
    )
    print(
        f"extracted={summary.extracted} out_of_scope={summary.out_of_scope} "
        f"quarantined={summary.quarantined}"
    )
    return 0


def cmd_analyze(args: argparse.Namespace, config: CliConfig) -> int:
    results = load_results(args.results)
    stoplist = analytics.GENERIC_SPECIES_TERMS if args.filter_generic else None

    tables = [analytics.role_inventory(results, stoplist)]
    for role in ("invasive", "native", "introduced"):
        tables.append(analytics.top_species(results, role, config.top, stoplist))
    for granularity in ("country", "region", "city"):
        tables.append(analytics.location_frequencies(results, granularity))
    ecosystems = analytics.ecosystem_frequencies(results)
    tables.extend([ecosystems.names, ecosystems.types])
    pairs = analytics.habitat_linkages(results)

    out = Path(args.out if args.out else config.report_dir)
    if args.format == "markdown" and out.suffix == "":
        out = out / "report.md"
    written = analytics.emit_report(tables, pairs, out, fmt=args.format)
    print(f"tables={len(tables)} linkages={len(pairs)} out={written}")
    return 0


def cmd_validate(args: argparse.Namespace, config: CliConfig) -> int:
    schema = load_schema_file(args.schema)
    results = load_results(args.results)
    total_violations = 0
    for result in sorted(results, key=lambda r: r.paper_doi):
        verdict = validate_result(result, schema)
        for violation in verdict.violations:
            total_violations += 1
            print(f"{result.paper_doi}\t{violation.path}\t{violation.message}")
        for warning in verdict.warnings:
            logger.warning("%s: %s: %s", result.paper_doi, warning.path, warning.message)
    print(f"results={len(results)} violations={total_violations}")
    return 1 if total_violations else 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ecomine",
        description="Mine species, location, habitat, and ecosystem entities from an invasion-biology corpus.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging to stderr")
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--corpus", help="corpus file (line-delimited records)")
    parser.add_argument("--provider", choices=["mock", "endpoint"], help="completion provider")
    parser.add_argument("--endpoint", help="chat-completions endpoint URL")
    parser.add_argument("--model", help="model name for the endpoint provider")
    parser.add_argument("--api-key-var", dest="api_key_var", help="env var holding the credential")
    parser.add_argument("--seed", type=int, help="RNG seed for sampling")
    parser.add_argument("--parallelism", type=int, help="max in-flight requests")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="harvest records for a DOI list into the corpus")
    p.add_argument("--dois", required=True, help="file with one DOI per line")
    p.add_argument("--base-url", dest="base_url", help="harvest API base URL")
    p.add_argument("--fixtures", help="directory of canned harvest responses")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("stats", help="corpus availability and token statistics")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("specialize", help="propose per-paper candidate schemas for a sample")
    p.add_argument("--out", required=True, help="candidates file to write (one JSON per line)")
    p.add_argument("--sample-size", dest="sample_size", type=int)
    p.add_argument("--exclude", help="file of DOIs to keep out of the draw")
    p.set_defaults(func=cmd_specialize)

    p = sub.add_parser("generalize", help="merge candidates into standardized schema variants")
    p.add_argument("--candidates", required=True, help="candidates file from specialize")
    p.add_argument("--out-dir", dest="out_dir", required=True, help="directory for schema variants")
    p.add_argument("--variants", type=int, help="provider-merged variants to request")
    p.add_argument("--select", type=int, help="variant index to adopt (default 0, the deterministic merge)")
    p.set_defaults(func=cmd_generalize)

    p = sub.add_parser("extract", help="populate the schema for every paper with an abstract")
    p.add_argument("--schema", required=True, help="standardized schema JSON file")
    p.add_argument("--results", required=True, help="results file (one JSON per line)")
    p.add_argument("--checkpoint", help="checkpoint file for resumable runs")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("analyze", help="aggregate frequency tables and linkages from results")
    p.add_argument("--results", required=True)
    p.add_argument("--out", help="output directory (csv) or file (markdown)")
    p.add_argument("--format", choices=["csv", "markdown"], default="csv")
    p.add_argument("--top", type=int, help="rows per top-species table")
    p.add_argument(
        "--filter-generic",
        dest="filter_generic",
        action="store_true",
        help="drop generic species-name noise (e.g. 'native plants')",
    )
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("validate", help="check results against a schema; nonzero exit on violations")
    p.add_argument("--results", required=True)
    p.add_argument("--schema", required=True)
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = resolve_config(args)
        return args.func(args, config)
    except EcomineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
