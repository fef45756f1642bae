"""
Helpers for nested JSON key-trees addressed by dotted paths.

List elements are addressed by their index, e.g. ``events.0.p_after``.
Keys starting with an underscore are comments.
"""
import copy
import json
from typing import Any, Dict, Iterator, List, Mapping, Tuple

from utils.errors import ConfigurationError


def strip_comments(tree: Any) -> Any:
    if isinstance(tree, Mapping):
        return {k: strip_comments(v) for k, v in tree.items() if not str(k).startswith('_')}
    if isinstance(tree, list):
        return [strip_comments(v) for v in tree]
    return tree


def deep_merge(base: Mapping[str, Any], update: Mapping[str, Any]) -> Dict[str, Any]:
    """Recursive dict merge; values from update win, nested mappings merge."""
    merged = copy.deepcopy(dict(base))
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _step(node: Any, part: str) -> Tuple[bool, Any]:
    if isinstance(node, dict):
        return (part in node), node.get(part)
    if isinstance(node, list) and part.isdigit() and int(part) < len(node):
        return True, node[int(part)]
    return False, None


def get_path(tree: Any, path: str) -> Any:
    node = tree
    for part in path.split('.'):
        found, node = _step(node, part)
        if not found:
            raise ConfigurationError(f"Unknown parameter '{path}'", key=path)
    return node


def set_path(tree: Any, path: str, value: Any, prefix: str = '') -> None:
    """
    Replace an existing leaf in place.

    Raises:
        ConfigurationError: If the path does not exist or names a section.
    """
    parts = path.split('.')
    shown = f"{prefix}.{path}" if prefix else path
    node = tree
    for part in parts[:-1]:
        found, node = _step(node, part)
        if not found:
            raise ConfigurationError(f"Unknown parameter '{shown}'", key=shown)
    last = parts[-1]
    found, current = _step(node, last)
    if not found:
        raise ConfigurationError(f"Unknown parameter '{shown}'", key=shown)
    if isinstance(current, (dict, list)):
        raise ConfigurationError(f"'{shown}' is a section, not a parameter", key=shown)
    if isinstance(node, list):
        node[int(last)] = value
    else:
        node[last] = value


def iter_leaves(tree: Any, prefix: str = '') -> Iterator[Tuple[str, Any]]:
    """Yield (dotted path, value) for every leaf in declaration order."""
    if isinstance(tree, Mapping):
        for key, value in tree.items():
            yield from iter_leaves(value, f"{prefix}.{key}" if prefix else str(key))
    elif isinstance(tree, list) and tree:
        for index, value in enumerate(tree):
            yield from iter_leaves(value, f"{prefix}.{index}" if prefix else str(index))
    else:
        yield prefix, tree


def parse_value(text: str) -> Any:
    """Parse an override value as a JSON literal, falling back to a plain string."""
    try:
        return json.loads(text)
    except ValueError:
        return text


def parse_assignment(expression: str) -> Tuple[str, Any]:
    key, _, text = expression.partition('=')
    return key.strip(), parse_value(text.strip())


def unknown_keys(tree: Mapping[str, Any], schema: Mapping[str, Any], prefix: str = '') -> List[str]:
    """Paths present in tree but absent from schema (free-form sections are skipped by the caller)."""
    missing = []
    for key, value in tree.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in schema:
            missing.append(path)
        elif isinstance(value, Mapping) and isinstance(schema[key], Mapping):
            missing.extend(unknown_keys(value, schema[key], path))
    return missing
