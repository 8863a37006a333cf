"""Multiplexed access to one shared crypto device over a UNIX domain socket."""

from .baseline import BaselineHandle, baseline_request
from .bench import BenchmarkRecord, run_benchmark, run_sweep
from .broker import Broker, BrokerExists, serve
from .client import ClientHandle, DeviceRejected, TransportError, ensure_broker
from .config import BrokerConfig, load_config, parse_config
from .device import Device, DeviceUsageError, LatencyModel, apply_crypto_op
from .protocol import CsnPdu, OpCode, Pdu, attach_csn, decode_pdu, detach_csn, encode_pdu

__all__ = [
    "BaselineHandle", "BenchmarkRecord", "Broker", "BrokerConfig", "BrokerExists", "ClientHandle",
    "CsnPdu", "Device", "DeviceRejected", "DeviceUsageError", "LatencyModel", "OpCode", "Pdu",
    "TransportError", "apply_crypto_op", "attach_csn", "baseline_request", "decode_pdu", "detach_csn",
    "encode_pdu", "ensure_broker", "load_config", "parse_config", "run_benchmark", "run_sweep", "serve",
]
