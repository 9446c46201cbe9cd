"""Regenerate the bundled demo scenario files in src/decnash/data/."""

import json
from pathlib import Path

from decnash.scenarios import DEMOS, build_demo, scenario_to_dict

DATA = Path(__file__).resolve().parent.parent / "src" / "decnash" / "data"

if __name__ == "__main__":
    DATA.mkdir(parents=True, exist_ok=True)
    for name in DEMOS:
        sc = build_demo(name)
        (DATA / f"{name}.json").write_text(json.dumps(scenario_to_dict(sc), indent=1) + "\n")
        print(f"{name}: {len(sc.vehicles)} vehicles, {sc.sim_duration:g} s")
