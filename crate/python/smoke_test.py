"""Smoke test for the ctgwin_py extension module.

Build and install first:
    maturin build --release -m crates/python/Cargo.toml && pip install target/wheels/ctgwin-*.whl
"""

import math
import os
import random
import tempfile

import ctgwin_py as cw


def synthetic_windows(n_per_class, n, seed):
    rng = random.Random(seed)
    xs, ys = [], []
    for i in range(n_per_class):
        phase = rng.uniform(0, 2 * math.pi)
        xs.append([150 + 8 * math.sin(2 * math.pi * t / 40 + phase) + rng.gauss(0, 2) for t in range(n)])
        ys.append("case")
        xs.append([140 + rng.gauss(0, 2) for _ in range(n)])
        ys.append("control")
    return xs, ys


def main():
    assert cw.label_record("caesarean", 7.1) == ("case", "Acidosis")
    assert cw.label_record("vaginal", 7.3)[0] == "control"

    rec = cw.parse_record("fhr\n140\n0\n142\n", "r1")
    assert len(rec) == 3 and rec.label is None

    fixed = cw.repair([140.0, 0.0, 0.0, 146.0] * 4)
    assert all(50 <= v <= 210 for v in fixed["samples"])
    assert fixed["repaired_spans"]

    windows = cw.segment([float(i) for i in range(250)], 100)
    assert len(windows) == 2 and windows[1][0] == 100.0

    assert cw.auc([0.9, 0.8, 0.2], ["case", "control", "control"]) == 1.0
    lo, hi = cw.wald_ci(0.8, 620)
    assert abs(lo - 0.7685) < 1e-3 and abs(hi - 0.8315) < 1e-3

    spec = cw.ModelSpec.preset("cnn1d", 100, seed=7)
    assert spec.input_shape == [1, 100]
    assert cw.ModelSpec.from_toml(spec.to_toml()).family == "cnn1d"

    xs, ys = synthetic_windows(40, 100, seed=1)
    for family in ["flda", "svm_rbf", "random_forest", "cnn1d"]:
        model, history = cw.fit(cw.ModelSpec.preset(family, 100, seed=3), xs, ys, train_seed=4, epochs=20)
        scores = model.predict(xs)
        report = cw.evaluate(scores, ys)
        print(f"{family:14s} train auc {report['auc']:.3f} epochs logged {len(history)}")
        assert report["auc"] > 0.9, family
        clone = cw.Model.from_json(model.to_json())
        assert clone.predict(xs) == scores

    summary = cw.figo_summary([140.0] * 2400)
    assert abs(summary["vbl"] - 140.0) < 1.0

    with tempfile.TemporaryDirectory() as tmp:
        manifest = cw.write_synthetic_corpus(os.path.join(tmp, "corpus"), 6, 12, 2400, seed=5)
        config = os.path.join(tmp, "exp.toml")
        with open(config, "w") as fh:
            fh.write(
                f'manifest = "{manifest}"\noutput = "out"\nwindow_sizes = [100]\n'
                'families = ["flda"]\nseed_split = 1\nseed_balance = 2\nseed_init = 3\nseed_train = 4\n'
            )
        cells = cw.run_experiment(config)
        assert len(cells) == 1 and cells[0]["family"] == "flda"
        assert os.path.exists(os.path.join(tmp, "out", "metrics.csv"))

    print("smoke test passed")


if __name__ == "__main__":
    main()
