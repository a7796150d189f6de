"""JSON and Graphviz DOT serializations for patterns and graphs.

JSON pattern schema::

    {
      "latents": ["L1", ...],
      "observed": ["Y1", ...],
      "directed": [{"latent": "L1", "observed": "Y1", "label": "confirmed"}, ...],
      "bidirected": [{"a": "Y3", "b": "Y4", "label": "confirmed"}, ...],
      "latents_connected": true
    }
"""

from __future__ import annotations

import json

from .errors import InputError
from .graphs import LABELS, UNCONFIRMED, MeasurementPattern, TrueDag, pattern_from_text


def pattern_to_dict(p: MeasurementPattern) -> dict:
    return {
        "latents": list(p.latents),
        "observed": list(p.observed),
        "directed": [{"latent": lat, "observed": y, "label": lab} for (lat, y), lab in p.directed.items()],
        "bidirected": [{"a": a, "b": b, "label": lab} for (a, b), lab in p.bidirected.items()],
        "latents_connected": p.latents_connected,
    }


def pattern_to_json(p: MeasurementPattern) -> str:
    return json.dumps(pattern_to_dict(p), indent=2) + "\n"


def pattern_from_dict(d: dict) -> MeasurementPattern:
    try:
        p = MeasurementPattern(
            list(d["latents"]),
            list(d["observed"]),
            {(e["latent"], e["observed"]): e.get("label", "confirmed") for e in d["directed"]},
            {},
            bool(d.get("latents_connected", True)),
        )
        for e in d.get("bidirected", []):
            p.bidirected[p.pair(e["a"], e["b"])] = e.get("label", "confirmed")
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed pattern JSON: {exc!r}") from None
    for lab in list(p.directed.values()) + list(p.bidirected.values()):
        if lab not in LABELS:
            raise InputError(f"unknown edge label {lab!r}")
    p.validate()
    return p


def pattern_from_json(text: str) -> MeasurementPattern:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"line {exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(d, dict):
        raise InputError("pattern JSON must be an object")
    return pattern_from_dict(d)


def load_pattern(text: str) -> MeasurementPattern:
    """Parse a pattern in JSON or in the line-based graph text format."""
    return pattern_from_json(text) if text.lstrip().startswith("{") else pattern_from_text(text)


def _q(name: str) -> str:
    return '"' + name.replace('"', r"\"") + '"'


def to_dot(g) -> str:
    """DOT for a :class:`MeasurementPattern` or a :class:`TrueDag`.

    Latents are ellipses and observed variables boxes; bi-directed edges carry
    both arrowheads and unconfirmed edges are dashed and labeled.
    """
    lines = ["digraph G {"]
    if isinstance(g, MeasurementPattern):
        for lat in g.latents:
            lines.append(f"  {_q(lat)} [shape=ellipse];")
        for y in g.observed:
            lines.append(f"  {_q(y)} [shape=box];")
        for (lat, y), lab in g.directed.items():
            style = ' [style=dashed, label="unconfirmed"]' if lab == UNCONFIRMED else ""
            lines.append(f"  {_q(lat)} -> {_q(y)}{style};")
        for (a, b), lab in g.bidirected.items():
            extra = ', style=dashed, label="unconfirmed"' if lab == UNCONFIRMED else ""
            lines.append(f"  {_q(a)} -> {_q(b)} [dir=both{extra}];")
    elif isinstance(g, TrueDag):
        for n in g.names:
            lines.append(f"  {_q(n)} [shape={'ellipse' if g.is_latent(n) else 'box'}];")
        for u, v in g.edges:
            lines.append(f"  {_q(u)} -> {_q(v)};")
    else:
        raise InputError(f"cannot render {type(g).__name__}")
    lines.append("}")
    return "\n".join(lines) + "\n"
