import json
from pathlib import Path

import pytest

from papercode.config import load_config

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def default_cfg():
    return load_config()


@pytest.fixture()
def paper_doc_dict():
    return {
        "title": "A study of stable retrieval",
        "sections": [
            {"heading": "Introduction", "paragraphs": [
                "This area of inquiry has grown quickly over recent years."
            ]},
            {"heading": "Methods", "paragraphs": [
                "We compute the alignment score for each read. "
                "The scores are normalized before ranking.",
                "Candidate functions are filtered by a trained model.",
            ]},
            {"heading": "Results", "paragraphs": [
                "We compute summary scores across every run."
            ]},
            {"heading": "Conclusion", "paragraphs": [
                "We computed final scores for every aligned read."
            ]},
            {"heading": "References", "paragraphs": [
                "Assorted computed citations appear in this list."
            ]},
        ],
    }


@pytest.fixture()
def paper_file(tmp_path, paper_doc_dict):
    path = tmp_path / "paper.json"
    path.write_text(json.dumps(paper_doc_dict), encoding="utf-8")
    return path


@pytest.fixture()
def tiny_repo(tmp_path):
    """Three source files, one inside tests/ (excluded by default config)."""
    repo = tmp_path / "repo"
    (repo / "pkg").mkdir(parents=True)
    (repo / "pkg" / "core.py").write_text(
        "def scale(values, factor):\n"
        "    out = []\n"
        "    for v in values:\n"
        "        out.append(v * factor)\n"
        "    return out\n",
        encoding="utf-8",
    )
    (repo / "pkg" / "extra.py").write_text(
        "class Runner:\n"
        "    def start(self):\n"
        "        self.active = True\n"
        "        return self.active\n"
        "\n"
        "    def stop(self):\n"
        "        self.active = False\n"
        "        return self.active\n",
        encoding="utf-8",
    )
    (repo / "tests").mkdir()
    (repo / "tests" / "test_core.py").write_text(
        "def test_scale():\n    assert True\n", encoding="utf-8"
    )
    return repo
