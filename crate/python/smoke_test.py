"""Smoke test for the privmap_py extension.

Build first, e.g. `maturin develop -m crates/python/Cargo.toml --release`,
then run `python python/smoke_test.py`.
"""

import json
import math
import pathlib
import tempfile

import privmap_py as pm

ROOT = pathlib.Path(__file__).resolve().parent.parent
DEMO = ROOT / "configs" / "scalar_demo.json"


def check_channel():
    q = [0.1, 0.2, 0.3, 0.4]
    rows = pm.channel_from_noise(q, 2, 2)
    assert len(rows) == 4
    for row in rows:
        assert sorted(x for x in row if x) == sorted(q)
    ident = pm.channel_from_noise([1.0, 0.0, 0.0, 0.0], 2, 2)
    assert all(ident[i][j] == (1.0 if i == j else 0.0) for i in range(4) for j in range(4))


def check_mi():
    assert pm.mutual_information([0.5, 0.5], [[1.0, 0.0], [0.0, 1.0]]) == math.log(2)
    assert abs(pm.mutual_information([0.3, 0.7], [[0.5, 0.5], [0.5, 0.5]])) < 1e-15
    try:
        pm.mutual_information([0.5, 0.6], [[1.0, 0.0], [0.0, 1.0]])
    except ValueError:
        pass
    else:
        raise AssertionError("expected ValueError for a non-normalized pmf")


def check_pipeline():
    with tempfile.TemporaryDirectory() as cache:
        p = pm.Pipeline(str(DEMO), cache_dir=cache)
        mean, cov = p.lift(1)
        assert mean == [0.0, 0.0]
        assert abs(cov[0][0] - 1.3) < 1e-12

        w = p.window(1)
        assert abs(sum(w.joint) - 1.0) < 1e-12
        assert abs(w.raw_sum - 1.0) < 1e-4
        sols = p.solve(w, [math.inf, 0.5, 0.0])
        assert [s.epsilon for s in sols] == [math.inf, 0.5, 0.0]
        assert all(s.converged for s in sols)
        assert sols[0].objective <= sols[1].objective <= sols[2].objective + 1e-12
        assert sols[2].q_star[0] == 1.0
        assert abs(sols[2].objective - w.baseline) < 1e-9
        assert abs(w.mutual_information(sols[1].q_star) - sols[1].objective) < 1e-12
        assert len(w.gradient(sols[1].q_star)) == w.n_vars

        res = p.receding([1.0], list(range(1, 6)))
        steps = p.simulate(res, 3)
        n_y = 4
        assert len(steps) == 5
        assert all(z == (y + v) % n_y for y, v, z in steps)


def check_schema():
    try:
        import jsonschema
    except ImportError:
        return
    schema = json.loads((ROOT / "configs" / "experiment.schema.json").read_text())
    for name in ("reactor.json", "scalar_demo.json"):
        jsonschema.validate(json.loads((ROOT / "configs" / name).read_text()), schema)


if __name__ == "__main__":
    check_channel()
    check_mi()
    check_pipeline()
    check_schema()
    print("smoke test passed")
