"""Shared-memory packet queues, the delay-measurement model, and rate pacing.

The heavy lifting lives in the compiled extension; this package re-exports
its public surface. Queue endpoints interoperate with the C++ workers and
CLI byte for byte, so a Python producer can feed a spawned C++ block and
vice versa.
"""

from sbq._core import (
    FLAG_LAST,
    MIN_MEASURABLE_DELAY_CYCLES,
    PACKET_BYTES,
    PAYLOAD_BYTES,
    QUEUE_CAPACITY,
    BadSize,
    Error,
    InvalidParam,
    IoFailure,
    Packet,
    PerfParams,
    QueueConsumer,
    QueueProducer,
    RateLimiter,
    WrongLength,
    actual_delay,
    ideal_delay,
    required_wall_ratio,
    wall_rate_bound,
)

__all__ = [
    "FLAG_LAST",
    "MIN_MEASURABLE_DELAY_CYCLES",
    "PACKET_BYTES",
    "PAYLOAD_BYTES",
    "QUEUE_CAPACITY",
    "BadSize",
    "Error",
    "InvalidParam",
    "IoFailure",
    "Packet",
    "PerfParams",
    "QueueConsumer",
    "QueueProducer",
    "RateLimiter",
    "WrongLength",
    "actual_delay",
    "ideal_delay",
    "required_wall_ratio",
    "wall_rate_bound",
]
