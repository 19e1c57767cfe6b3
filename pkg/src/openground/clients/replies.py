"""Strict parsing of model replies.

Replies may be wrapped in prose or a fenced code block; the JSON payload
inside must match the template's schema exactly (no missing or extra keys).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Any

from ..errors import SchemaError

_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\s*\n?(.*?)```", re.DOTALL)


@dataclass(frozen=True)
class ParsedObjects:
    target_label: str
    relevant_labels: tuple[str, ...] = ()

    def __post_init__(self):
        target = self.target_label.strip()
        if not target:
            raise SchemaError("empty target label")
        seen = {target.casefold()}
        rel = []
        for label in self.relevant_labels:
            label = label.strip()
            if label and label.casefold() not in seen:
                seen.add(label.casefold())
                rel.append(label)
        object.__setattr__(self, "target_label", target)
        object.__setattr__(self, "relevant_labels", tuple(rel))

    @property
    def labels(self) -> tuple[str, ...]:
        """Relevant labels followed by the target (target index is ``n``)."""
        return self.relevant_labels + (self.target_label,)


@dataclass(frozen=True)
class ChainReply:
    reason: str
    sequence: tuple[tuple[str, int], ...]


def extract_json(text: str) -> Any:
    """Pull the first JSON object out of a reply (fences and prose tolerated)."""
    fenced = _FENCE_RE.search(text)
    if fenced:
        text = fenced.group(1)
    decoder = json.JSONDecoder()
    start = text.find("{")
    while start != -1:
        try:
            obj, _ = decoder.raw_decode(text, start)
            return obj
        except json.JSONDecodeError:
            start = text.find("{", start + 1)
    raise SchemaError("no JSON object in reply", text[:200])


def _exact_keys(obj: Any, keys: set[str], where: str) -> dict:
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected an object", obj)
    missing, extra = keys - obj.keys(), obj.keys() - keys
    if missing:
        raise SchemaError(f"{where}: missing key(s) {sorted(missing)}", obj)
    if extra:
        raise SchemaError(f"{where}: unknown key(s) {sorted(extra)}", obj)
    return obj


def _str_list(value: Any, where: str) -> list[str]:
    if not isinstance(value, list) or not all(isinstance(x, str) for x in value):
        raise SchemaError(f"{where}: expected a list of strings", value)
    return value


def _parse_objects(obj: Any) -> ParsedObjects:
    items = _exact_keys(obj, {"objects"}, "objects_parsing")["objects"]
    if not isinstance(items, list):
        raise SchemaError("objects_parsing: 'objects' must be a list", items)
    targets, relevant = [], []
    for item in items:
        item = _exact_keys(item, {"name", "is_target"}, "objects_parsing item")
        name, is_target = item["name"], item["is_target"]
        if not isinstance(name, str) or not name.strip():
            raise SchemaError("objects_parsing: object name must be a non-empty string", item)
        if not isinstance(is_target, bool):
            raise SchemaError("objects_parsing: is_target must be a boolean", item)
        (targets if is_target else relevant).append(name)
    if len(targets) != 1:
        raise SchemaError(f"objects_parsing: expected exactly one target, got {len(targets)}", targets)
    return ParsedObjects(targets[0], tuple(relevant))


def _parse_chain(obj: Any) -> ChainReply:
    obj = _exact_keys(obj, {"reason", "sequence"}, "task_chain")
    if not isinstance(obj["reason"], str):
        raise SchemaError("task_chain: reason must be a string", obj["reason"])
    seq = obj["sequence"]
    if not isinstance(seq, list) or not seq:
        raise SchemaError("task_chain: sequence must be a non-empty list", seq)
    out = []
    for item in seq:
        item = _exact_keys(item, {"name", "origin_index"}, "task_chain item")
        name, idx = item["name"], item["origin_index"]
        if not isinstance(name, str) or isinstance(idx, bool) or not isinstance(idx, int):
            raise SchemaError("task_chain: bad sequence item", item)
        out.append((name, idx))
    return ChainReply(obj["reason"], tuple(out))


def _parse_conditions(obj: Any) -> list[str]:
    conds = _str_list(_exact_keys(obj, {"conditions"}, "conditions")["conditions"], "conditions")
    out = list(dict.fromkeys(c.strip() for c in conds if c.strip()))
    if not out:
        raise SchemaError("conditions: empty condition list", obj)
    return out


def _parse_reasoning(obj: Any) -> dict[int, list[str]]:
    if not isinstance(obj, dict):
        raise SchemaError("reasoning: expected an object keyed by candidate id", obj)
    out = {}
    for key, value in obj.items():
        if not (isinstance(key, str) and key.strip().lstrip("-").isdigit()):
            raise SchemaError("reasoning: keys must be integer ids", key)
        out[int(key)] = list(dict.fromkeys(_str_list(value, f"reasoning[{key}]")))
    return out


_PARSERS = {
    "objects_parsing": _parse_objects,
    "task_chain": _parse_chain,
    "conditions": _parse_conditions,
    "reasoning": _parse_reasoning,
}


def parse_reply(template_id: str, text: str):
    try:
        parser = _PARSERS[template_id]
    except KeyError:
        raise SchemaError(f"unknown template {template_id!r}") from None
    return parser(extract_json(text))


def serialize_reply(template_id: str, payload) -> str:
    """Canonical reply text for a payload (inverse of ``parse_reply``)."""
    if template_id == "objects_parsing":
        obj = {
            "objects": [{"name": payload.target_label, "is_target": True}]
            + [{"name": n, "is_target": False} for n in payload.relevant_labels]
        }
    elif template_id == "task_chain":
        obj = {
            "reason": payload.reason,
            "sequence": [{"name": n, "origin_index": i} for n, i in payload.sequence],
        }
    elif template_id == "conditions":
        obj = {"conditions": list(payload)}
    elif template_id == "reasoning":
        obj = {str(k): list(v) for k, v in payload.items()}
    else:
        raise SchemaError(f"unknown template {template_id!r}")
    return json.dumps(obj, indent=2, ensure_ascii=False)
