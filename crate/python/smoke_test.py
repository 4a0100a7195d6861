"""Smoke test for the mlcwm_py extension.

Build and install first:
    pip install maturin
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/mlcwm_py-*.whl
"""

import math
import os
import tempfile

import mlcwm_py as m


def check_ising():
    model = m.IsingModel([0.73, -0.23, 0.01], [-4.15, 2.11, 1.14], "01")
    probs = dict((tuple(s), p) for s, p in model.probabilities())
    assert abs(sum(probs.values()) - 1.0) < 1e-12
    assert abs(probs[(1, 0, 1)] - 0.682) < 0.002
    back = model.convert("pm1").convert("01")
    assert all(abs(a - b) < 1e-12 for a, b in zip(model.params(), back.params()))


def check_pipeline():
    sim = m.simulate("table1", seed=11, n_test=200)
    train, test = sim["train"], sim["test"]
    assert len(train) == 2000 and len(test) == 200

    fit, table = m.select(train, sim["formula"], c_grid=[2, 3], n_starts=3, seed=1)
    assert [row["c"] for row in table] == [2, 3]
    assert fit.c == min(table, key=lambda r: r["bic"])["c"]
    assert abs(sum(fit.weights) - 1.0) < 1e-12
    assert all(abs(sum(t) - 1.0) < 1e-10 for t in fit.tau)

    pred = fit.predict(test, b_mode="zero")
    for p, post, cond in zip(pred["p"], pred["posteriors"], pred["conditional"]):
        assert min(cond) - 1e-12 <= p <= max(cond) + 1e-12
        assert abs(sum(q * c for q, c in zip(post, cond)) - p) < 1e-12

    rows = fit.scenario(test.subset(list(range(6))))
    assert len(rows) == 6
    assert all(r["minus_sigma"] <= r["zero"] <= r["plus_sigma"] for r in rows)

    scores = m.evaluate(fit, train, test, sim["train_labels"])
    assert [s["method"] for s in scores] == ["ML-CWMd", "GLM", "GLMER"]
    assert scores[0]["ari"] > 0.5
    ari = m.adjusted_rand_index(sim["train_labels"], fit.z)
    assert abs(ari - scores[0]["ari"]) < 1e-12

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "fit.json")
        fit.save(path)
        again = m.ModelFit.load(path)
        assert again.loglik == fit.loglik and again.c == fit.c
        csv_path = os.path.join(d, "train.csv")
        train.to_csv(csv_path)
        roles = {"y": "response", "group": "group", "u1": "continuous", "u2": "continuous",
                 "a1": "categorical", "a2": "categorical",
                 "d1": "dichotomous", "d2": "dichotomous", "d3": "dichotomous"}
        loaded = m.Dataset.from_csv(csv_path, roles)
        assert loaded.n_obs == 2000 and loaded.n_groups == 10

    roc = m.roc_cutoff([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    assert math.isclose(roc["auc"], 0.75)

    try:
        m.fit(train, 3, ["no_such_column"], n_starts=1)
    except ValueError as e:
        assert "no_such_column" in str(e)
    else:
        raise AssertionError("unknown formula term accepted")
    print(f"selected C={fit.c}, ARI {ari:.3f}, test accuracy {scores[0]['test_accuracy']:.3f}")


if __name__ == "__main__":
    check_ising()
    check_pipeline()
    print("smoke test passed")
