from pathlib import Path

import pytest

import ecomine
from ecomine.corpus import CorpusStore
from ecomine.gateway import LlmGateway, RateLimitPolicy
from ecomine.mockllm import MockProvider
from ecomine.pipeline import StageConfig

# Seed under which the size-10 draw from the bundled corpus contains
# exactly one out-of-domain paper.
SAMPLE_SEED = 6

SAMPLE_CORPUS = Path(ecomine.__file__).parent / "data" / "sample_corpus.jsonl"


def fast_policy() -> RateLimitPolicy:
    return RateLimitPolicy(max_requests_per_window=10_000, window=1.0, max_retries=3, backoff_base=0.01)


@pytest.fixture
def sample_store() -> CorpusStore:
    return CorpusStore.load(SAMPLE_CORPUS)


@pytest.fixture
def mock_gateway() -> LlmGateway:
    return LlmGateway(MockProvider(), fast_policy(), sleep=lambda s: None)


@pytest.fixture
def stage_config() -> StageConfig:
    return StageConfig(
        sample_size=10,
        generalize_variants=3,
        parallelism=4,
        rate_policy=fast_policy(),
        rng_seed=SAMPLE_SEED,
    )
