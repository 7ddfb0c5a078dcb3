#!/usr/bin/env python3
"""Regenerate the bundled half-hourly demand fixtures.

Writes the three-day (144-point) and six-day (288-point) profiles under
src/fdibench/data/.  Both are deterministic, so rerunning this script is a
no-op unless the synthesis formula changes.
"""

from pathlib import Path

from fdibench.dataset import save_demand_csv, synthesize_demand_profile

DATA_DIR = Path(__file__).resolve().parents[1] / "src" / "fdibench" / "data"


def main() -> None:
    for days in (3, 6):
        profile = synthesize_demand_profile(points=days * 48, cadence_minutes=30)
        out = DATA_DIR / f"demand_{days}day_halfhourly.csv"
        save_demand_csv(profile, out)
        print(f"wrote {out} ({len(profile)} points)")


if __name__ == "__main__":
    main()
