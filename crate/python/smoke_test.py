"""Smoke test for the fsnn_py extension.

Build first:
    cargo build -p fsnn-py --release --features extension-module
then run:
    python3 python/smoke_test.py [path/to/libfsnn_py.so]
"""

import importlib.util
import math
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load(lib_path):
    tmp = pathlib.Path(tempfile.mkdtemp())
    target = tmp / "fsnn_py.so"
    shutil.copy(lib_path, target)
    spec = importlib.util.spec_from_file_location("fsnn_py", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module, tmp


def main():
    lib = pathlib.Path(sys.argv[1]) if len(sys.argv) > 1 else ROOT / "target" / "release" / "libfsnn_py.so"
    fsnn, tmp = load(lib)

    s_star = fsnn.equilibrium()
    assert abs(s_star - 38.7) < 0.05, s_star

    times, rows = fsnn.ground_truth_trajectory([29, 96, 4])
    assert len(times) == 100 and times[0] == 1.0 and times[-1] == 100.0
    assert all(len(r) == 3 for r in rows)
    times, rows = fsnn.ground_truth_trajectory([29, 96, 4], dense=True)
    assert len(rows) == 401 and rows[0] == [29.0, 96.0, 4.0]

    data = fsnn.training_data()
    assert [d[0] for d in data] == [[29.0, 96.0, 4.0], [22.0, 11.0, 78.0]]

    edges = fsnn.ground_truth_edges([29, 96, 4])
    assert sorted(edges) == sorted([
        ("State_1", "State_1", -1), ("State_3", "State_1", -1), ("State_1", "State_2", 1),
        ("State_2", "State_2", -1), ("State_2", "State_3", 1), ("State_3", "State_3", -1),
    ]), edges

    pts = fsnn.sobol(3, 4)
    assert pts[0] == [0.5, 0.5, 0.5], pts
    inits = fsnn.sample_initializations(20)
    assert len(inits) == 20 and all(30 <= sum(p) <= 150 for p in inits)

    zero = fsnn.Model.zeros()
    assert zero.param_count == 357
    assert zero.derivs([10, 20, 30]) == [0.0, 0.0, 0.0]
    _, flat = zero.simulate([5, 6, 7])
    assert all(r == [5.0, 6.0, 7.0] for r in flat)

    model, summary = fsnn.train(config="hidden_layers = [3]\nhorizon = 20\n", budget=200, seed=1)
    assert summary["evaluations_used"] <= 200
    assert all(math.isfinite(v) for v in summary["per_state_rmse"])
    path = tmp / "model.json"
    model.save(str(path))
    again = fsnn.Model.load(str(path))
    assert again.params == model.params
    assert fsnn.Model.from_json(model.to_json()).params == model.params

    scores = model.link_scores([29, 96, 4])
    assert len(scores) == 400 * 9
    mc = model.monte_carlo(n=5)
    assert len(mc["max_abs_errors"]) == 5 and mc["failed"] == 0

    try:
        zero.derivs([1, 2])
    except ValueError:
        pass
    else:
        raise AssertionError("expected ValueError")

    shutil.rmtree(tmp)
    print("smoke test passed")


if __name__ == "__main__":
    main()
