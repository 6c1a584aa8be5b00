"""Quick end-to-end check of the pyeivreg bindings."""

import numpy as np

import pyeivreg


def main():
    assert pyeivreg.vec([[1.0, 2.0], [3.0, 4.0]]) == [1.0, 3.0, 2.0, 4.0]
    assert pyeivreg.kron([[2.0]], [[1.0, 0.0], [0.0, 1.0]]) == [[2.0, 0.0], [0.0, 2.0]]
    lo, hi = pyeivreg.eig_extremes([[2.0, 0.0], [0.0, 5.0]])
    assert abs(lo - 2.0) < 1e-12 and abs(hi - 5.0) < 1e-12

    # noiseless data: every estimator recovers B, which satisfies the restriction
    restr = pyeivreg.Restriction([[1.0, 1.0]], [[1.0], [-1.0]], [[0.5]])
    b = np.array([[1.0, 0.5], [0.0, 0.0]])
    rng = np.random.default_rng(3)
    x = rng.uniform(-1.0, 1.0, size=(50, 2))
    est = pyeivreg.estimate(x, x @ b, 0.0, restr)
    for label in ("LSE", "UE", "B2", "B3", "B4"):
        assert np.abs(np.array(est[label]) - b).max() < 1e-8, label
    assert abs(restr.residual(est["B2"])[0][0]) < 1e-10

    cfg = pyeivreg.Config().with_overrides(seed=5, reps=300)
    assert cfg.master_seed == 5 and len(cfg.digest()) == 64
    toml = cfg.to_toml().replace("lambda_reps = 5000", "lambda_reps = 1000")
    cfg = pyeivreg.Config(toml)

    sim = pyeivreg.simulate(cfg, workers=2)
    assert sim["labels"] == ["UE", "B2", "B3", "B4"] and sim["excluded"] == 0

    analysis = pyeivreg.Analysis(cfg)
    law = analysis.law()
    k = len(law["labels"]) * cfg.p * cfg.q
    assert np.array(law["cov"]).shape == (k, k)
    adr = analysis.adr()
    assert [r["estimator"] for r in adr] == ["B2", "B3", "B4"]
    curve = analysis.efficiency()
    re = [r["relative_efficiency"] for r in curve]
    assert len(re) == 20 and re[0] >= 1.0 and all(a > b for a, b in zip(re, re[1:]))

    try:
        pyeivreg.Config("p = [")
    except ValueError:
        pass
    else:
        raise AssertionError("malformed config accepted")
    print("smoke test ok:", adr[0]["verdict"], "RE(0) = %.4f" % re[0])


if __name__ == "__main__":
    main()
