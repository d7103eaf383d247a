import numpy as np
import pytest

from conmlo.channel_access import Mode, TimingConfig
from conmlo.engine import DeviceConfig, Scenario
from conmlo.trace_model import RssiTrace, constant_trace


def scenario(trace, *devices, seed=0, **kw) -> Scenario:
    """Scenario from ``(mode, links)`` or ``(mode, links, timing)`` tuples."""
    devs = [d if isinstance(d, DeviceConfig) else DeviceConfig(*d) for d in devices]
    return Scenario(trace, tuple(devs), seed=seed, **kw)


def mask_trace(busy: np.ndarray) -> RssiTrace:
    return RssiTrace(np.where(np.asarray(busy, dtype=bool), -60.0, -100.0))


@pytest.fixture
def idle_trace():
    return constant_trace(6, 100_000, busy=False)


@pytest.fixture
def busy_trace():
    return constant_trace(6, 100_000, busy=True)


@pytest.fixture
def timing():
    return TimingConfig()


ALL_MODES = (Mode.SLO, Mode.MLO, Mode.CONMLO)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
