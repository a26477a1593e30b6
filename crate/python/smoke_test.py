"""Exercises the dynloc extension end to end on a tiny synthetic scene.

Build and install first, e.g. `maturin build -m crates/python/Cargo.toml`
followed by `pip install target/wheels/dynloc-*.whl`.
"""

import math
import tempfile
from pathlib import Path

import dynloc


def read_poses(path):
    poses = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split()
        poses[fields[0]] = tuple(float(v) for v in fields[1:8])
    return poses


def main():
    assert dynloc.similarity_target(0.0, 0.0) == 0.0
    assert math.isclose(dynloc.similarity_target(25.0, 1.5), 0.8)
    assert dynloc.similarity_target(60.0, 0.0) == 1.0

    identity = (1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    shifted = (1.0, 0.0, 0.0, 0.0, 3.0, 4.0, 0.0)
    angle, distance = dynloc.pose_error(identity, shifted)
    assert angle == 0.0 and math.isclose(distance, 5.0)

    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        dynloc.generate_dataset(str(root), seed=2, sweeps=3, queries=3, scale=4.0)
        rebuilt, images, points = dynloc.build_map(str(root / "map"))
        assert rebuilt and images == 3 * 36 and points > 0
        assert dynloc.build_map(str(root / "map"))[0] is False

        localized = dynloc.localize(str(root / "map"), str(root / "query"), str(root / "run"), {"seed": 2})
        results = dynloc.read_results(str(root / "run"))
        assert len(results) == 3
        assert localized == sum(p is not None for p in results.values())

        gt = read_poses(root / "query" / "gt_poses.txt")
        curve = dynloc.accuracy_curve(results, gt, [0.25, 0.5, 1.0, 2.0])
        assert curve == sorted(curve) and all(0.0 <= f <= 1.0 for f in curve)
        print(f"localized {localized}/3, accuracy {curve}")

    print("smoke test passed")


if __name__ == "__main__":
    main()
