"""``key = value`` text configs (``#`` starts a comment)."""

from __future__ import annotations


def parse_kv(text: str, repeatable: tuple[str, ...] = ()):
    """Return ``(single, repeated)`` dicts; keys in ``repeatable`` collect lists."""
    single: dict[str, str] = {}
    repeated: dict[str, list[str]] = {k: [] for k in repeatable}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        if key in repeated:
            repeated[key].append(val)
        elif key in single:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        else:
            single[key] = val
    return single, repeated
