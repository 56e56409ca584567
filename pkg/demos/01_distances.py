"""
Great-circle distances from five Johannesburg suburbs
=====================================================

Builds the origin-by-lot distance table for the built-in ``suburbs``
scenario and checks it against the fixed table that ships with ``reference``.
"""

import numpy as np

from parkrec.simcli import build_distance_table, load_scenario, render_report, scenario_distances

geocoded = build_distance_table(load_scenario("suburbs"))
print(render_report(geocoded).text)

fixed = scenario_distances(load_scenario("reference"))
reference = np.array([[fixed[o][lot] for lot in geocoded.lot_ids] for o in geocoded.origins])

# the two agree to a few metres
print(f"largest disagreement: {np.abs(geocoded.km - reference).max() * 1000:.1f} m")
