"""
How alpha moves the recommendation
==================================

Lot chosen for every (alpha, origin) pair of the ``reference`` scenario.
Cells marked with ``*`` differ from the reference grid bundled with it.
"""

from parkrec.recommender import recommend_with_fixed_distances
from parkrec.simcli import build_recommendation_grid, load_scenario, render_report

scenario = load_scenario("reference")
grid = build_recommendation_grid(scenario)
print(render_report(grid).text)

# a single query, showing the full ranking
rec = recommend_with_fixed_distances(scenario.distances["Germiston S"], scenario.spot_counts(), alpha=0.5)
for scored in rec.ranked:
    print(f"lot {scored.lot_id}: d={scored.distance_km:6.2f} km  m={scored.spots:2d}  f={scored.objective:.4f}")
