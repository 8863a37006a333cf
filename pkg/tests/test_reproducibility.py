import pytest

from mecha.bench import run_sweep
from mecha.device import LatencyModel


@pytest.mark.slow
def test_consecutive_sweeps_agree():
    first, second = (run_sweep([10, 20], 65536, 1024, LatencyModel()) for _ in range(2))
    for (m1, b1), (m2, b2) in zip(first, second):
        for a, b in ((m1, m2), (b1, b2)):
            assert abs(a.duration_s - b.duration_s) <= 0.15 * max(a.duration_s, b.duration_s)
