from .core import Simulator, Packet, MSS_BYTES, HDR_BYTES, MTU_WIRE_BYTES
from .links import Link, PathSpec
from .tcp import TcpSender, TcpReceiver
from .runner import (RunResult, child_seed, run_scenario, unloaded_fct,
                     unloaded_reference)
from .trace import read_trace, write_trace

__all__ = [
    "Simulator", "Packet", "MSS_BYTES", "HDR_BYTES", "MTU_WIRE_BYTES",
    "Link", "PathSpec", "TcpSender", "TcpReceiver",
    "RunResult", "child_seed", "run_scenario", "unloaded_fct",
    "unloaded_reference", "read_trace", "write_trace",
]
