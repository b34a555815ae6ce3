"""Smoke test for the `steering` extension module.

Build and install first:  pip install --no-build-isolation ./crates/python
"""

import json
import math

import steering


def close(a, b, tol):
    assert abs(a - b) <= tol, (a, b)


def main():
    assert "dodecahedron10" in steering.builtin_sets()
    dodeca = steering.MeasurementSet.builtin("dodecahedron10")
    assert len(dodeca) == 10

    value, members = steering.deterministic_bound(dodeca, 1)
    close(value, 1.0, 1e-12)
    assert members > 0

    c, mixture = steering.bound_at(dodeca, 0.132)
    close(c, 0.9680836, 1e-6)
    close(sum(w for _, w in mixture), 1.0, 1e-12)
    close(steering.c_infinity(0.5), 0.75, 1e-15)

    curve = steering.bound_curve(dodeca, 20)
    assert all(b[1] <= a[1] + 1e-12 for a, b in zip(curve, curve[1:]))

    pair = steering.MeasurementSet("pair", [(0, 0, 1), (1, 0, 0)])
    close(steering.bound_at(pair, 1.0)[0], 1 / math.sqrt(2), 1e-12)

    counts = steering.simulate_honest(dodeca, 0.9893, 0.132, 200_000, 7)
    report = json.loads(steering.analyze(counts))
    close(report["S"], 0.9893, 0.01)
    close(report["epsilon_hat"], 0.132, 0.005)

    cheat = steering.simulate_cheat(dodeca, 0.3, 200_000, 7)
    report = json.loads(steering.analyze(cheat, x=1.0))
    assert not report["verdict"]["steering_demonstrated"]

    xk = steering.estimate_xk(dodeca, samples=2000, seed=1)
    assert len(xk) == 10 and all(0.999 < x <= 1.0 for x in xk)

    try:
        steering.MeasurementSet.builtin("nope")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown set accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
