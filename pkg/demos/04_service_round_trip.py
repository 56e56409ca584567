"""
Service round trip over HTTP
============================

Starts the service on a free port, posts a generated event stream,
asks for a recommendation, sends feedback and rebuilds everything from
the log afterwards.
"""

import json
import tempfile
from importlib import resources
from pathlib import Path

import httpx

from parkrec.occupancy import default_registry
from parkrec.service import ParkingService, ServerThread, read_feedback, recover
from parkrec.simcli import StreamSpec, generate_stream

spec = StreamSpec.from_dict(json.loads(
    resources.files("parkrec").joinpath("data/reference_stream_spec.json").read_text()))
lines = generate_stream(spec)

tmp = Path(tempfile.mkdtemp())
service = ParkingService(default_registry(), tmp / "events.log")

with ServerThread(service) as server, httpx.Client(base_url=server.url) as client:
    for line in lines:
        client.post("/v1/events", content=line)
    print(json.dumps(client.get("/v1/lots").json()["lots"][:2], indent=1))

    rec = client.get("/v1/recommend", params={"lat": -26.2216, "lon": 28.1704, "alpha": 0.5, "k": 3}).json()
    print("best lot:", rec["best"]["lot_id"], "id:", rec["recommendation_id"])
    print(client.post("/v1/feedback", json={"recommendation_id": rec["recommendation_id"],
                                            "accepted": True, "chosen_lot_id": rec["best"]["lot_id"]}).json())
service.close()

again = recover(tmp / "events.log", default_registry())
print("recovered counts:", dict(again.state.counts()))
print("feedback on disk:", [f.recommendation_id for f in read_feedback(tmp / "events.log")])
