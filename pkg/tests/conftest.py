import os

import pytest

from spikeforge.metrics import measure
from spikeforge.netlist import NeuronConfig, NeuronKind

# keep worker pools small and deterministic in CI-like runs
os.environ.setdefault("SPIKEFORGE_THREADS", "1")


def fig_point(kind, **kw) -> NeuronConfig:
    base = dict(v_supp=0.2, c_mem=1e-15, c_res=1e-15, i_syn=100e-9)
    base.update(kw)
    return NeuronConfig(NeuronKind.parse(kind), **base)


_MEASURED = {}


def measured(cfg: NeuronConfig):
    """Session cache: circuit runs are the expensive part of the suite."""
    key = (cfg.kind, cfg.v_supp, cfg.c_mem, cfg.c_res, cfg.i_syn)
    if key not in _MEASURED:
        _MEASURED[key] = measure(cfg)
    return _MEASURED[key]


@pytest.fixture(scope="session")
def fig_records():
    return {k: measured(fig_point(k)) for k in NeuronKind}


# one line per acceptance criterion, collected by tests/test_acceptance.py
CRITERIA: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in CRITERIA:
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
