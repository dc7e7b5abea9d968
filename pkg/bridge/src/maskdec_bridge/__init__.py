"""Worker side of the maskdec wire protocol, plus a trace recorder.

The engine package is consumed only through its published interfaces:
the v1 wire schema, the trace file format, and the ``maskdec`` command.
The worker loop lives in ``maskdec_bridge.worker`` (run it with
``python -m maskdec_bridge.worker`` or the ``maskdec-worker`` script) and
the recorder in ``maskdec_bridge.recorder``; neither is imported here so
``-m`` execution stays single-load.
"""

from .models import HFModel, MockModel, ModelMeta, load_model
from .wire import Reply, Request, WireError, decode_reply, decode_request, masked_in_range

__version__ = "0.1.0"

__all__ = [
    "HFModel",
    "MockModel",
    "ModelMeta",
    "Reply",
    "Request",
    "WireError",
    "decode_reply",
    "decode_request",
    "load_model",
    "masked_in_range",
]
