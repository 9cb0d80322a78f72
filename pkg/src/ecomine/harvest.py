"""Harvest paper records by DOI from a scholarly-search endpoint.

Two clients share one interface: an HTTP client for a configurable
search API, and a fixture client that reads canned responses from a
directory so ingest is testable offline. Both return plain documents
with title/abstract/full_text/year/publisher fields; a DOI that does
not resolve yields None.
"""

from __future__ import annotations

import json
import logging
import re
import time
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import requests

from .corpus import CorpusStore, PaperRecord, normalize_doi
from .errors import CorpusError, PartialIngestError, RetryableTransportError, TransportError

logger = logging.getLogger(__name__)

_RETRYABLE_STATUSES = {429, 500, 502, 503, 504}


@dataclass
class IngestSummary:
    """Outcome of one ingest batch.

    found always equals abstract_only + with_full_text; DOIs that did not
    resolve land in missing, malformed ones in malformed.
    """

    queried: int = 0
    found: int = 0
    abstract_only: int = 0
    with_full_text: int = 0
    missing: list[str] = field(default_factory=list)
    malformed: list[str] = field(default_factory=list)


class HttpHarvestClient:
    """Query-by-DOI client for an HTTP scholarly-search API.

    Wire format: GET {base_url}/{endpoint_path} with ?doi=<doi> (or
    ?dois=<comma-joined> when batch_size > 1, returning
    {"results": [record, ...]}). A 404 means the DOI is not indexed.
    Transient failures (429, 5xx, network) are retried with exponential
    backoff up to max_retries times.
    """

    def __init__(
        self,
        base_url: str,
        *,
        endpoint_path: str = "paper",
        timeout: float = 10.0,
        max_retries: int = 3,
        backoff_base: float = 0.5,
        batch_size: int = 1,
        session: requests.Session | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.endpoint_path = endpoint_path.strip("/")
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.batch_size = max(1, batch_size)
        self._session = session or requests.Session()
        self._sleep = sleep

    def fetch(self, doi: str) -> dict | None:
        response = self._get({"doi": doi})
        if response is None:
            return None
        doc = response
        doc.setdefault("doi", doi)
        return doc

    def fetch_many(self, dois: Sequence[str]) -> dict[str, dict | None]:
        """Resolve a chunk of DOIs; one request when batching is enabled."""
        if self.batch_size <= 1 or len(dois) == 1:
            return {doi: self.fetch(doi) for doi in dois}
        found: dict[str, dict | None] = {doi: None for doi in dois}
        response = self._get({"dois": ",".join(dois)})
        for doc in (response or {}).get("results", []):
            doi = doc.get("doi")
            if doi in found:
                found[doi] = doc
        return found

    def _get(self, params: dict) -> dict | None:
        url = f"{self.base_url}/{self.endpoint_path}"
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = self._session.get(url, params=params, timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = RetryableTransportError(f"harvest request failed: {exc}")
            else:
                if resp.status_code == 200:
                    try:
                        return resp.json()
                    except ValueError as exc:
                        raise TransportError(f"non-JSON harvest response from {url}: {exc}", 200)
                if resp.status_code == 404:
                    return None
                if resp.status_code in _RETRYABLE_STATUSES:
                    last_error = RetryableTransportError(
                        f"harvest got {resp.status_code} from {url}", resp.status_code
                    )
                else:
                    raise TransportError(
                        f"harvest got {resp.status_code} from {url}", resp.status_code
                    )
            if attempt < self.max_retries:
                self._sleep(self.backoff_base * 2**attempt)
        assert last_error is not None
        raise TransportError(f"harvest retries exhausted: {last_error}", getattr(last_error, "status", None))


class FixtureHarvestClient:
    """Harvest client backed by canned responses in a directory.

    Each available DOI is one JSON file named by fixture_filename(); a
    missing file means the DOI does not resolve.
    """

    batch_size = 1

    def __init__(self, directory: str | Path) -> None:
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise CorpusError(f"fixture directory not found: {self.directory}")

    def fetch(self, doi: str) -> dict | None:
        path = self.directory / fixture_filename(doi)
        if not path.exists():
            return None
        doc = json.loads(path.read_text(encoding="utf-8"))
        doc.setdefault("doi", doi)
        return doc

    def fetch_many(self, dois: Sequence[str]) -> dict[str, dict | None]:
        return {doi: self.fetch(doi) for doi in dois}


def fixture_filename(doi: str) -> str:
    """Filesystem-safe fixture name for a normalized DOI."""
    return re.sub(r"[^a-z0-9._-]", "_", doi.lower()) + ".json"


def ingest_dois(
    store: CorpusStore,
    doi_list: Sequence[str],
    client,
    *,
    parallelism: int = 4,
) -> IngestSummary:
    """Resolve each DOI through the client and persist found records.

    Malformed DOIs are skipped with a warning and never abort the batch.
    A transport failure that survives the client's retries raises
    PartialIngestError carrying the counts accumulated so far. Workers
    only fetch; all store writes happen on the calling thread.
    """
    if not doi_list:
        raise CorpusError("doi_list must be non-empty")

    summary = IngestSummary()
    normalized: list[str] = []
    for raw in doi_list:
        summary.queried += 1
        try:
            normalized.append(normalize_doi(raw))
        except CorpusError:
            logger.warning("skipping malformed DOI %r", raw)
            summary.malformed.append(raw)

    chunks = _chunk(normalized, getattr(client, "batch_size", 1))
    parallelism = max(1, parallelism)
    try:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            futures = [pool.submit(client.fetch_many, chunk) for chunk in chunks]
            done, pending = wait(futures, return_when=FIRST_EXCEPTION)
            failure: Exception | None = None
            for future in done:
                exc = future.exception()
                if exc is not None:
                    failure = exc
                    continue
                _commit_chunk(store, future.result(), summary)
            for future in pending:
                future.cancel()
            if failure is not None:
                raise failure
    except TransportError as exc:
        summary.missing.sort()
        raise PartialIngestError(f"ingest aborted: {exc}", summary) from exc

    summary.missing.sort()
    return summary


def _commit_chunk(store: CorpusStore, resolved: dict[str, dict | None], summary: IngestSummary) -> None:
    for doi in sorted(resolved):
        doc = resolved[doi]
        abstract = (doc or {}).get("abstract") or None
        full_text = (doc or {}).get("full_text") or None
        if doc is None or (abstract is None and full_text is None):
            summary.missing.append(doi)
            continue
        store.upsert(
            PaperRecord(
                doi=doi,
                title=doc.get("title", ""),
                abstract=abstract,
                full_text=full_text,
                year=doc.get("year"),
                publisher=doc.get("publisher"),
                source="harvested",
            )
        )
        summary.found += 1
        if full_text:
            summary.with_full_text += 1
        else:
            summary.abstract_only += 1


def _chunk(items: Sequence[str], size: int) -> list[list[str]]:
    size = max(1, size)
    return [list(items[i : i + size]) for i in range(0, len(items), size)]
