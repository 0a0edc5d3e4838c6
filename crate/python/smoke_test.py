"""Smoke test for the `vic` extension module.

Build the module first (see README), then run:

    python python/smoke_test.py
"""

import json
import tempfile
from pathlib import Path

import vic


def flat_rgb(width, height, value):
    return [value] * (width * height * 3)


def main():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        manifest = vic.synthesize(str(tmp / "clip"), seed=3, n_frames=6, n_persons=20)
        assert Path(manifest).is_file()
        assert vic.count_unique(manifest, 1) >= 1

        shared_a, shared_b, outflow, inflow = vic.derive_flow(
            [(1.0, 1.0, 1), (5.0, 5.0, 2)], [(2.0, 2.0, 2), (9.0, 9.0, 3)], 16, 16
        )
        assert len(shared_a) == len(shared_b) == 1
        assert outflow == [(1.0, 1.0)] and inflow == [(9.0, 9.0)]

        density = vic.rasterize([(3.0, 4.0), (10.0, 2.0)], 16, 12, sigma=2.0)
        assert len(density) == 12 and len(density[0]) == 16
        assert abs(sum(map(sum, density)) - 2.0) < 1e-3

        model = vic.Model("tiny", "DCFA", seed=0)
        assert model.param_count > 0
        maps = model.forward(32, 32, flat_rgb(32, 32, 0.2), flat_rgb(32, 32, 0.2))
        assert set(maps) == {"global_a", "global_b", "shared_a", "shared_b", "outflow_a", "inflow_b"}
        assert all(len(m) == 32 and len(m[0]) == 32 for m in maps.values())
        inflow_mass, outflow_mass = model.predict_pair(32, 32, flat_rgb(32, 32, 0.5), flat_rgb(32, 32, 0.5))
        assert abs(inflow_mass - outflow_mass) < 1e-9

        config = json.dumps({"delta_min": 1, "delta_max": 2, "max_steps": 3, "crop_size": 32, "lr0": 1e-4})
        losses, miae = model.train(str(tmp / "clip"), str(tmp / "ckpt"), config)
        assert len(losses) == 3 and miae is not None

        reloaded = vic.Model.load(str(tmp / "ckpt" / "last"))
        result = reloaded.count(manifest, stride=2)
        assert len(result.pairs) == 2
        assert abs(result.total - (result.first_frame_count + sum(p[2] for p in result.pairs))) < 1e-12
        assert json.loads(result.to_json())["stride"] == 2

        scores = vic.video_metrics([("a", 10, 11.0, 10), ("b", 20, 20.0, 30)])
        assert abs(scores["WRAE"] - 2.5) < 1e-9

    print("vic smoke test passed")


if __name__ == "__main__":
    main()
