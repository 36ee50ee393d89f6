from __future__ import annotations

import re

from mhslam.errors import InvalidInputError

SEED_ITEM_REGEX = re.compile(r"^\s*(?P<start>\d+)\s*(?:-\s*(?P<end>\d+)\s*)?$")


def parse_seeds(seeds_str: str) -> list[int]:
    """`K` means seeds 0..K-1; `1,2,3` and ranges like `0-4` (inclusive) are taken literally."""
    items = seeds_str.split(",")
    if len(items) == 1 and "-" not in items[0]:
        match = SEED_ITEM_REGEX.match(items[0])
        if match is None:
            raise InvalidInputError(f"couldn't parse seeds {seeds_str!r}")
        count = int(match["start"])
        if count < 1:
            raise InvalidInputError("seed count must be at least 1")
        return list(range(count))

    seeds: list[int] = []
    for item in items:
        match = SEED_ITEM_REGEX.match(item)
        if match is None:
            raise InvalidInputError(f"couldn't parse seed {item!r} in {seeds_str!r}")
        start = int(match["start"])
        end = int(match["end"]) if match["end"] is not None else start
        if end < start:
            raise InvalidInputError(f"empty seed range {item.strip()!r}")
        seeds.extend(range(start, end + 1))
    return seeds


__all__ = ["parse_seeds"]
