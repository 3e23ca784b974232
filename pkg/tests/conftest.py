import os

# single-threaded BLAS keeps floating-point reductions reproducible across runs
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

import json  # noqa: E402

import pytest  # noqa: E402

from styloforge.corpus import AuthorRecord, Corpus  # noqa: E402


def make_records(spec: dict[str, int], words: str = "lorem ipsum dolor") -> list[AuthorRecord]:
    """``{"en": 3, "fr": 2}`` -> five records with distinct ids and simple text."""
    out = []
    for lang, n in spec.items():
        for j in range(n):
            out.append(AuthorRecord(f"{lang}-{j}", lang, "forum" if j % 2 else "wiki", f"{words} {lang} {j}", f"{lang} {j} {words}"))
    return out


@pytest.fixture
def small_corpus() -> Corpus:
    return Corpus(tuple(make_records({"en": 6, "fr": 4})))


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write((r if isinstance(r, str) else json.dumps(r)) + "\n")


# acceptance criteria report their verdicts here; printed at the end of the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
