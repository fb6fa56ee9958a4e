from typing import List, Sequence


def elementary_symmetric(values: Sequence[int], k: int) -> List[int]:
    """Exact e_0..e_k of the given integers, e_s = sum over s-subsets of the product."""
    e = [1] + [0] * k
    for v in values:
        for s in range(k, 0, -1):
            e[s] += e[s - 1] * v
    return e


def parse_sizes(text: str) -> List[int]:
    """Parse an alphabet flag such as "2,3,4"."""
    parts = [p.strip() for p in text.split(",")]
    if not parts or any(not p.isdigit() for p in parts):
        raise ValueError(f"alphabet must be a comma-separated list of category counts, got {text!r}")
    return [int(p) for p in parts]


def format_bool(value: bool) -> str:
    return "true" if value else "false"
