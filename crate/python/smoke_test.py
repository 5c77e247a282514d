"""Smoke test for the compiled `rpe` extension module.

Build and install first, e.g. `pip install maturin && maturin develop -m crates/python/Cargo.toml`.
"""

import math
import os
import tempfile

import rpe


def main():
    model = rpe.Model(
        cost=[[0.0], [1.0]],
        nominal_kernel=[[1.0, 0.0], [0.0, 1.0]],
        gamma=0.5,
        zeta=1.0,
        agent_policy=[[1.0], [1.0]],
    )
    oracle = model.robust_value(tol=1e-10)
    assert abs(oracle.v_r[0] - 1.0) < 1e-9 and abs(oracle.v_r[1] - 2.0) < 1e-9, oracle.v_r
    worst = model.nature_value(oracle.worst_policy)
    assert all(math.isclose(a, -b, abs_tol=1e-9) for a, b in zip(worst, oracle.v_r)), worst

    frpe = model.frpe(50)
    assert len(frpe.f_values) == 51
    assert abs(frpe.gaps[-1]) < 1e-6, frpe.gaps[-1]

    se = model.sfrpe_se(500, l=30, seed=3)
    assert all(abs(e + v) < 0.05 for e, v in zip(se.estimate, oracle.v_r)), se.estimate

    slpe = model.sfrpe_slpe(50, 300, eta=0.2, seed=3)
    assert len(slpe.est_s0) == 50

    garnet = rpe.Model.garnet(8, 3, 2, 0.9, 0.4, seed=5)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "g.toml")
        garnet.save(path)
        again = rpe.Model.load(path)
        assert again.cost == garnet.cost

    try:
        rpe.Model([[0.0]], [[0.5]], 0.5, 1.0, [[1.0]])
    except ValueError:
        pass
    else:
        raise AssertionError("invalid kernel accepted")

    print("rpe smoke test passed:", model)


if __name__ == "__main__":
    main()
