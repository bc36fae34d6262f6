import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fundusrag.kb import EmbeddedEntry, KnowledgeEntry, VectorIndex

settings.register_profile(
    "fast", max_examples=50, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("fast")

GRADE_TAGS = (None, 0, 1, 2, 3, 4)
ME_TAGS = (None, True, False)


def random_index(rng: np.random.Generator, n: int, dim: int) -> VectorIndex:
    """Index over random unit vectors with random class tags.

    Ids are zero-padded so lexicographic order matches numeric order.
    """
    entries = []
    for i in range(n):
        vec = rng.normal(size=dim)
        vec /= np.linalg.norm(vec)
        entries.append(
            EmbeddedEntry(
                entry=KnowledgeEntry(
                    id=f"e{i:05d}",
                    dr_grade=GRADE_TAGS[rng.integers(len(GRADE_TAGS))],
                    me_label=ME_TAGS[rng.integers(len(ME_TAGS))],
                    text=f"synthetic snippet {i}",
                ),
                vector=vec.astype(np.float32),
            )
        )
    return VectorIndex(dim, entries)


def random_prediction(rng: np.random.Generator):
    from fundusrag.retrieval import DiagnosticPrediction

    grade = int(rng.integers(5))
    conf = float(rng.uniform(0.3, 0.99))
    rest = (1.0 - conf) / 4.0
    return DiagnosticPrediction(
        grade=grade,
        me_present=bool(rng.integers(2)),
        grade_confidence=conf,
        me_confidence=float(rng.uniform(0.0, 1.0)),
        grade_probs=tuple(conf if i == grade else rest for i in range(5)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


@pytest.fixture
def mock_embedder():
    from fundusrag.mock import MockEmbedder

    return MockEmbedder(dim=16)


@pytest.fixture
def small_kb_text():
    return "\n".join(
        [
            '{"id": "g0-01", "dr_grade": 0, "me_label": false, "text": "No retinopathy; macula flat."}',
            "",
            '{"id": "g2-01", "dr_grade": 2, "me_label": false, "text": "Moderate NPDR: microaneurysms and dot hemorrhages."}',
            '{"id": "g2-02", "dr_grade": 2, "me_label": null, "text": "Moderate retinopathy changes."}',
            '{"id": "any-01", "dr_grade": null, "me_label": null, "text": "General screening guidance snippet."}',
        ]
    )
