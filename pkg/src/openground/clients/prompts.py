"""Prompt templates and placeholder substitution.

Each template fixes the JSON reply schema that ``replies.parse_reply``
enforces. Placeholders are ``{name}`` for the names in ``PLACEHOLDERS``; any
other brace text (the JSON schema examples) is left alone.
"""

from __future__ import annotations

import re
from typing import Any, Mapping, Sequence

from ..errors import TemplateError

PLACEHOLDERS = ("query", "images", "conditions", "relevant_objects", "related_objects", "target")
_PLACEHOLDER_RE = re.compile(r"\{(" + "|".join(PLACEHOLDERS) + r")\}")

OBJECTS_PARSING = """\
Read the query below and list every concrete physical object it mentions. \
Leave out abstract ideas, actions, regions and bare attributes. Mark exactly \
one object, the one the query asks to locate, as the target.
Answer with JSON only, in this shape:
{
    "objects": [
        {"name": "object1", "is_target": true},
        {"name": "object2", "is_target": false}
    ]
}

Query: {query}
"""

TASK_CHAIN = """\
Read the query, the objects it mentions and how many candidates the scene \
holds for each. Order the objects into the sequence a person would follow to \
find the target in a room: start from objects that are distinctive and easy \
to spot and use them as references for harder ones. The target goes last.
Answer with JSON only, in this shape ("origin_index" is the position in the \
object list below, -1 for the target):
{
    "reason": "...",
    "sequence": [
        {"name": "object2", "origin_index": 1},
        {"name": "object1", "origin_index": 0},
        {"name": "target", "origin_index": -1}
    ]
}

Query: {query}
Relevant objects: {relevant_objects}
Target object: {target}
"""

CONDITIONS = """\
Read the query and the objects involved, then write down every condition the \
object named below has to satisfy (category, attributes, spatial relations \
to other objects). Be specific and complete.
Answer with JSON only, in this shape:
{
    "conditions": ["condition1", "condition2"]
}

Query: {query}
Related objects: {related_objects}
Object: {target}
"""

REASONING = """\
Images come in pairs: <image_2N-1> is the plain view, <image_2N> is the same \
view with boxes drawn around previously located objects and the current \
candidates, each captioned "label:id". Check every candidate against the \
conditions and list the conditions it satisfies, copying condition strings \
exactly.
Answer with JSON only, in this shape (keys are candidate ids):
{
    "12": ["condition1", "condition3"],
    "15": ["condition2"]
}

Images: {images}
Query: {query}
Conditions: {conditions}
"""

TEMPLATES = {
    "objects_parsing": OBJECTS_PARSING,
    "task_chain": TASK_CHAIN,
    "conditions": CONDITIONS,
    "reasoning": REASONING,
}


def placeholders(template_id: str) -> list[str]:
    return sorted(set(_PLACEHOLDER_RE.findall(_template(template_id))))


def _template(template_id: str) -> str:
    try:
        return TEMPLATES[template_id]
    except KeyError:
        raise TemplateError(f"unknown template {template_id!r}") from None


def image_markers(count: int) -> str:
    return ", ".join(f"<image_{i}>" for i in range(1, count + 1))


def instantiate(template_id: str, bindings: Mapping[str, Any]) -> str:
    """Fill a template. ``images`` binds to the number of attached images."""
    body = _template(template_id)
    needed = set(_PLACEHOLDER_RE.findall(body))
    missing = needed - set(bindings)
    if missing:
        raise TemplateError(f"{template_id}: missing binding for placeholder(s) {sorted(missing)}")
    extra = set(bindings) - needed
    if extra:
        raise TemplateError(f"{template_id}: unexpected binding(s) {sorted(extra)}")

    def sub(m: re.Match) -> str:
        name = m.group(1)
        value = bindings[name]
        if name == "images":
            return image_markers(int(value))
        return str(value)

    return _PLACEHOLDER_RE.sub(sub, body)


def format_labels(labels: Sequence[str]) -> str:
    return "[" + ", ".join(f'"{x}"' for x in labels) + "]"


def format_counted(labels: Sequence[str], counts: Mapping[str, int] | None) -> str:
    if counts is None:
        return format_labels(labels)
    return "[" + ", ".join(f'("{x}", {counts[x]})' for x in labels) + "]"


def format_target(label: str, count: int | None) -> str:
    return f'"{label}"' if count is None else f'("{label}", {count})'
