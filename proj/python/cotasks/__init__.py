"""Python bindings for the cotasks C++ core.

JSON documents are accepted as dicts (or JSON text) and returned as dicts.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Iterable, Mapping

_PACKAGED_PROMPTS = Path(__file__).with_name("prompts")
if _PACKAGED_PROMPTS.is_dir():
    os.environ.setdefault("COTASKS_PROMPT_DIR", str(_PACKAGED_PROMPTS))

from . import _core  # noqa: E402
from ._core import (  # noqa: E402,F401
    ArgumentError,
    ConfigError,
    ConstructionError,
    CotasksError,
    IntegrityError,
    ParseError,
    RenderError,
    ResponseParseError,
    TransportError,
    is_valid_label,
    map_span,
    normalize_category,
    parse_judge,
    scaled_score,
    template_ids,
    uniform_sample,
)

__version__ = _core.__version__

Document = Mapping[str, Any] | str


def _text(doc: Document) -> str:
    return doc if isinstance(doc, str) else json.dumps(doc)


def parse_vidor(document: Document, origin: str = "<memory>", strict: bool = False):
    """Returns (normalized annotation, [(code, detail), ...] quarantined)."""
    annotation, quarantined = _core.parse_vidor(_text(document), origin, strict)
    return json.loads(annotation), quarantined


def parse_star(document: Document, origin: str = "<memory>", strict: bool = False):
    """Returns (normalized annotation, questions, quarantined)."""
    annotation, questions, quarantined = _core.parse_star(_text(document), origin, strict)
    return json.loads(annotation), [json.loads(q) for q in questions], quarantined


def validate_annotation(annotation: Document) -> list[tuple[str, str]]:
    return _core.validate_annotation(_text(annotation))


def build_bundle(annotation: Document, question: Document, mode: str = "lexical", k: int = 64,
                 timestamp_cap: int = 16) -> dict:
    return json.loads(_core.build_bundle(_text(annotation), _text(question), mode, k, timestamp_cap))


def check_bundle(bundle: Document, timestamp_cap: int = 16) -> list[tuple[str, str]]:
    return _core.check_bundle(_text(bundle), timestamp_cap)


def expand(bundles: Iterable[Document], split: str = "split", prompt_dir: str | os.PathLike | None = None) -> list[dict]:
    rows = _core.expand([_text(b) for b in bundles], split, prompt_dir)
    return [json.loads(r) for r in rows]


def render_prompt(template_id: str, slots: Mapping[str, str], prompt_dir: str | os.PathLike | None = None) -> str:
    return _core.render_prompt(template_id, dict(slots), prompt_dir)


def parse_response(template_id: str, raw: str) -> Any:
    """Typed CoTask answers come back as JSON values; final answers as text; judge marks as int."""
    value = _core.parse_response(template_id, raw)
    if template_id.endswith("_eval"):
        return json.loads(value)
    return value


def aggregate(records: Iterable[Document], star_threshold: int = 4) -> dict:
    return json.loads(_core.aggregate([_text(r) for r in records], star_threshold))


def compare_reports(reports: Iterable[Document]) -> tuple[dict, str]:
    table, text = _core.compare_reports([_text(r) for r in reports])
    return json.loads(table), text
