"""Regenerate the bundled mock fixture from scenario.json.

Run after editing the scenario or any default template:

    python3 scripts/build_fixture.py
"""

from __future__ import annotations

from pathlib import Path

from sgtriplets.core import LexiconKind
from sgtriplets.io import builtin_path, load_lexicon, save_lexicon
from sgtriplets.mocking import build_entries, load_scenario, synthetic_large_lexicon, write_captions, write_fixture

PINNED = {137: "breakfast", 566: "food truck", 1021: "noodle"}


def main() -> None:
    root = Path(builtin_path("fixture"))
    scenario = load_scenario(root / "scenario.json")
    entities = load_lexicon(builtin_path("vg150_entities.txt"), LexiconKind.ENTITY)
    predicates = load_lexicon(builtin_path("vg50_predicates.txt"), LexiconKind.PREDICATE)
    large = synthetic_large_lexicon(1594, PINNED)
    save_lexicon(large, root / scenario["hierarchical"]["lexicon"])
    write_captions(scenario, root / "captions.jsonl")
    entries = build_entries(scenario, entities, predicates, large_lexicon=large)
    write_fixture(entries, root / "mock_responses.jsonl")
    print(f"wrote {len(entries)} fixture responses to {root}")


if __name__ == "__main__":
    main()
