import numpy as np
import pytest
import torch

import guided_deblur as gd

# Single-threaded torch: fastest at this model scale and the most
# reproducible configuration for bit-exactness checks.
torch.set_num_threads(1)


@pytest.fixture(scope="session")
def train_dataset():
    return gd.make_dataset(gd.blur.TRAIN_CONFIG, 8)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance" in nodeid and "::" in nodeid:
                status = "PASS" if outcome == "passed" else "FAIL"
                lines.append(f"{status}  {nodeid.split('::')[-1]}")
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines, key=lambda s: s.split()[-1]):
            terminalreporter.write_line(line)
