"""Smoke test for the `bagattn` extension module.

Build and run from the repository root:

    cargo build --release -p bagattn-python --features extension-module
    cp target/release/libbagattn.so python/bagattn.so
    python3 python/smoke.py
"""

import math
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

import bagattn  # noqa: E402


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol


def main():
    p = bagattn.softmax([1.0, 2.0, 3.0])
    assert close(sum(p), 1.0)
    assert p[2] > p[1] > p[0]

    assert close(bagattn.cosine([3.0, 4.0], [4.0, 3.0]), 0.96)

    features = [
        [[1.0, 0.0, 0.5], [0.2, 1.0, -0.3]],
        [[-0.4, 0.3, 1.0]],
    ]
    relations = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    w = bagattn.attention(features, relations, 1)
    assert close(sum(w["gamma"]), 1.0)
    for beta in w["beta"]:
        assert close(sum(beta), 1.0)
    for alpha in w["alpha"]:
        for row in alpha:
            assert close(sum(row), 1.0)
    scaled = [[[10.0 * v for v in x] for x in bag] for bag in features]
    ws = bagattn.attention(scaled, relations, 1)
    assert all(close(a, b, 1e-10) for a, b in zip(w["gamma"], ws["gamma"]))
    att = bagattn.attention(features[:1], relations, 1, mode="ATT", scoring="dot")
    assert att["alpha"] == [None]

    curve = bagattn.pr_curve(
        [("a", "b", 1, 0.9), ("c", "d", 2, 0.5)],
        [("a", "b", 1), ("e", "f", 1)],
    )
    assert curve == [(1.0, 0.5), (0.5, 0.5)]

    passed, err = bagattn.gradcheck()
    assert passed, err

    with tempfile.TemporaryDirectory() as tmp:
        sizes = bagattn.synth(tmp)
        assert sizes["train_sentences"] == 2000
        assert sizes["noisy_bags"] == 155
        assert (Path(tmp) / "train.txt").is_file()

    run = bagattn.train_synthetic('{"filters": 8, "epochs": 3}')
    assert len(run["losses"]) == 3
    assert all(math.isfinite(v) for v in run["losses"])
    assert 0.0 <= run["f1"] <= 1.0

    try:
        bagattn.train_synthetic('{"epoch": 3}')
    except ValueError as e:
        assert "epoch" in str(e)
    else:
        raise AssertionError("unknown config key accepted")

    print(f"ok: gradcheck max rel err {err:.2e}, synthetic F1 {run['f1']:.3f} after 3 epochs")


if __name__ == "__main__":
    main()
