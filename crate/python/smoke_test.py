#!/usr/bin/env python3
"""Smoke test for the sepkrig_py extension module.

Builds nothing itself: run `cargo build -p sepkrig-py` first, then
`python3 python/smoke_test.py`. The script copies the built cdylib into a
temp directory under the importable name and drives the full pipeline:
simulate -> fit both models -> predict -> distributed runtime -> selection
-> bootstrap, with basic sanity checks on every result.
"""

import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parents[1]

for profile in ("release", "debug"):
    built = ROOT / "target" / profile / "libsepkrig_py.so"
    if built.exists():
        break
else:
    sys.exit("libsepkrig_py.so not found; run `cargo build -p sepkrig-py` first")

tmp = tempfile.mkdtemp(prefix="sepkrig_py_")
shutil.copy(built, pathlib.Path(tmp) / "sepkrig_py.so")
sys.path.insert(0, tmp)

import sepkrig_py as sk  # noqa: E402


def check(condition, message):
    if not condition:
        sys.exit(f"FAIL: {message}")
    print(f"  ok: {message}")


print("layout and models")
layout = sk.Layout(["north", "east", "west"], [(0.0, 5.0), (6.0, 1.0), (1.0, 0.0)])
check(len(layout) == 3, "layout holds three sensors")
truth_spatial = sk.SpatialModel("exp", 7.0, nugget=0.08)
check(abs(truth_spatial.eval(0.0) - 1.0) < 1e-15, "re-observing a sensor has correlation 1")
check(truth_spatial.eval(7.0) < truth_spatial.eval(1.0), "correlation decays with distance")
truth_temporal = sk.TemporalModel.seasonal_ar([1], [0.65], 0.76)

print("simulation")
grid = sk.simulate(layout, truth_spatial, truth_temporal, 2000, seed=7,
                   level=21.0, sigma=0.9, step=10.0)
check(grid.n_frames() == 2000 and grid.n_sensors() == 3, "simulated grid has the right shape")
check(grid.fully_observed(), "simulated grid has no gaps")
again = sk.simulate(layout, truth_spatial, truth_temporal, 2000, seed=7,
                    level=21.0, sigma=0.9, step=10.0)
check(grid.values() == again.values(), "same seed reproduces the grid exactly")

print("fitting")
fitted_spatial, spatial_report = sk.fit_spatial(grid, layout, "exp", window=90)
check(spatial_report["converged"], "spatial fit converged")
check(1.0 < fitted_spatial.range < 40.0, f"fitted range {fitted_spatial.range:.2f} is plausible")
fitted_temporal, temporal_report = sk.fit_temporal(grid, [1], window=90)
check(temporal_report["converged"], "temporal fit converged")

print("prediction")
mean, variance = sk.predict(grid, layout, fitted_spatial, fitted_temporal,
                            [(2.5, 2.0), (4.0, 3.0)], horizon=1, window=90)
check(len(mean) == 1 and len(mean[0]) == 2, "one forecast frame, two targets")
check(all(15.0 < m < 27.0 for m in mean[0]), f"forecast means {mean[0]} near the trend level")
check(variance is not None and all(v > 0.0 for v in variance[0]),
      "one-step variances are positive")

print("distributed runtime")
assembled = sk.run_shared(grid, layout, fitted_spatial, fitted_temporal,
                          [(2.5, 2.0), (4.0, 3.0), (1.0, 1.0), (5.0, 4.0)],
                          horizon=1, window=90)
direct, _ = sk.predict(grid, layout, fitted_spatial, fitted_temporal,
                       [(2.5, 2.0), (4.0, 3.0), (1.0, 1.0), (5.0, 4.0)],
                       horizon=1, window=90)
check(assembled == direct, "distributed runtime reproduces the monolithic prediction")

print("selection")
steps = sk.select_sensors(grid, layout, fitted_spatial, metric="mae", max_k=2, window=90)
check(len(steps) == 2, "selection produced two steps")
check(steps[0][2] >= steps[1][2], "the score does not get worse as sensors are added")
check(steps[0][0] in grid.sensor_ids(), "selected sensor is a real sensor")

print("bootstrap")
report = sk.bootstrap_errors(grid, layout, fitted_spatial, fitted_temporal,
                             replicates=8, seed=11, window=90)
names = [p["name"] for p in report["params"]]
check("range" in names and "phi1" in names, f"bootstrap tracks the parameters: {names}")
check(all(p["std_err"] >= 0.0 for p in report["params"]), "standard errors are nonnegative")
check(not report["unreliable"], "no excessive replicate failures")

print("round trips")
with tempfile.TemporaryDirectory() as d:
    spath = pathlib.Path(d) / "spatial.model"
    fitted_spatial.save(spath)
    reloaded = sk.SpatialModel.read_file(spath)
    check(reloaded.range == fitted_spatial.range, "spatial model file round-trips")
    gpath = pathlib.Path(d) / "grid.csv"
    grid.write_csv(gpath)
    reread = sk.Grid.read_csv(gpath)
    check(reread.n_frames() == grid.n_frames(), "grid CSV round-trips")

print("smoke test passed")
