import os
import shutil
import socket
import tempfile

import pytest

from mecha.broker import Broker
from mecha.config import BrokerConfig
from mecha.device import ZERO_LATENCY, Device


@pytest.fixture
def sock_path():
    # AF_UNIX paths are limited to ~108 bytes, so avoid pytest's deep tmp_path
    d = tempfile.mkdtemp(prefix="mt-", dir="/tmp")
    yield os.path.join(d, "b.sock")
    shutil.rmtree(d, ignore_errors=True)


@pytest.fixture
def make_broker(sock_path):
    brokers = []

    def make(latency=ZERO_LATENCY, **kw):
        cfg = BrokerConfig(socket_path=sock_path, latency_model=latency, **kw)
        b = Broker(cfg, Device(latency)).start()
        brokers.append(b)
        return b

    yield make
    for b in brokers:
        b.shutdown(drain_timeout=5)


@pytest.fixture
def broker(make_broker):
    return make_broker()


def raw_connect(path):
    s = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
    s.settimeout(10)
    s.connect(path)
    return s


_acceptance = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(id, title): exit criterion, reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _acceptance.append((marker.args[0], marker.args[1], report.outcome, report.duration))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for ident, title, outcome, duration in sorted(_acceptance):
        flag = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{flag}] {ident:<4} {title} ({duration:.1f}s)")
