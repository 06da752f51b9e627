"""Super-resolution of spatiotemporal event streams from dynamic vision sensors."""

__version__ = "0.1.0"

from .events import (  # noqa: F401
    ON,
    OFF,
    Event,
    EventStream,
    FormatError,
    TimeWindow,
    merge,
    parse_text,
    read_binary,
    write_binary,
    write_text,
)
