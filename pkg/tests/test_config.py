import pytest

from mecha.config import BrokerConfig, ConfigError, load_config, parse_config
from mecha.device import LatencyModel

SAMPLE = """
# broker settings
socket_path = /tmp/x.sock
max_clients = 16
batch_max = 32
idle_close_ms = never
ctx_open_us = 10
ctx_close_us = 20
per_byte_ns = 1.5
per_op_us = 7
priority = hsm-app, web ,cli
"""


def test_parse_sample():
    cfg = parse_config(SAMPLE)
    assert cfg.socket_path == "/tmp/x.sock"
    assert cfg.max_clients == 16
    assert cfg.batch_max == 32
    assert cfg.idle_close_ms is None
    assert cfg.latency_model == LatencyModel(10, 20, 1.5, 7)
    assert cfg.priority_list == ("hsm-app", "web", "cli")


def test_defaults():
    cfg = parse_config("")
    assert cfg == BrokerConfig()
    assert cfg.socket_path == "./mecha.sock"
    assert cfg.max_clients == 128 and cfg.batch_max is None and cfg.queue_capacity == 4096


@pytest.mark.parametrize("text", [
    "colour = blue",
    "max_clients = 0",
    "max_clients = lots",
    "priority = a,b,a",
    "ctx_open_us = -1",
    "socket_path =",
    "no equals sign",
])
def test_bad_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_env_overrides_file(tmp_path):
    f = tmp_path / "b.conf"
    f.write_text("socket_path = /tmp/from-file.sock\n")
    assert load_config(f, environ={}).socket_path == "/tmp/from-file.sock"
    assert load_config(f, environ={"MECHA_SOCKET": "/tmp/env.sock"}).socket_path == "/tmp/env.sock"
    assert load_config(None, environ={}).socket_path == "./mecha.sock"
