import json
from pathlib import Path

import pytest

from selrank.corpus import build_dataset, section_from_dict


def write_jsonl(path: Path, rows) -> Path:
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return path


def section(sid, sentences, topic="Arts", article="a1", title=None):
    return {"article_id": article, "section_id": sid, "topic": topic, "title": title or sid, "sentences": sentences}


def question(qid, text, candidates, split="TRN", topic="Arts", origin="original"):
    return {
        "id": qid,
        "text": text,
        "topic": topic,
        "origin": origin,
        "split": split,
        "candidates": [{"section_id": s, "sent_index": i, "label": y} for s, i, y in candidates],
    }


def store(*records):
    return {r["section_id"]: section_from_dict(r) for r in records}


def dataset(records, sections, task="ASS"):
    return build_dataset(records, sections, task)


@pytest.fixture
def small_sections():
    """2 articles, 3 sections, 10 sentences."""
    return [
        section("s1", ["The cat sat .", "It was a warm day .", "Dogs barked ."], article="a1"),
        section("s2", ["The premiere was reviewed well .", "Critics liked it .", "Ratings rose ."], article="a1", topic="TV"),
        section("s3", ["Mountains are tall .", "Everest is the tallest .", "It is in Nepal .", "Climbers go there ."], article="a2", topic="Travel"),
    ]


# acceptance verdict lines, echoed in the terminal summary so they survive output capture
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
