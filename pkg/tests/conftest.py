from __future__ import annotations

import pytest

from hiertag.hierarchy import ExtendedHierarchy, TagHierarchy, extend_with_other

# De-identification style hierarchy used across the suite.  T1 is coarse,
# T2 fine, T3 coarse and partial (no Date, no Age anywhere under it).
CLINICAL_EDGES = [
    ("FirstName", "Name"),
    ("LastName", "Name"),
    ("Street", "Location"),
    ("City", "Location"),
    ("Hospital", "Location"),
    ("Age>90", "Age"),
]

CLINICAL_TAGSETS = {
    "T1": {"Name", "Location", "Date", "Age"},
    "T2": {"FirstName", "LastName", "Street", "City", "Hospital", "Age>90", "Date"},
    "T3": {"Name", "Location"},
}


@pytest.fixture
def clinical() -> TagHierarchy:
    nodes = {t for edge in CLINICAL_EDGES for t in edge} | {"Date"}
    return TagHierarchy(nodes, CLINICAL_EDGES, CLINICAL_TAGSETS)


@pytest.fixture
def clinical_ext(clinical: TagHierarchy) -> ExtendedHierarchy:
    return extend_with_other(clinical)
