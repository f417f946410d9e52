import runpy
from pathlib import Path

import pytest

from rigidflow._accel import HAVE_NUMBA

BENCH = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"


@pytest.mark.skipif(not HAVE_NUMBA, reason="needs numba")
def test_benchmark_runs_and_backends_agree(capsys):
    mod = runpy.run_path(str(BENCH))
    mod["main"](["--repeat", "1", "--rays", "300", "--cars", "2"])
    out = capsys.readouterr().out
    for name in ("ray_nearest_hit", "segments_blocked", "plane_inlier_counts", "build_bvh"):
        assert name in out
