# This package holds the detector backends.
#
# Each module defines one DetectorBackend subclass; BACKENDS maps the
# backend ``name`` to its class so the command line can look it up.

from CactusEval.backends.DelayBackend import DelayBackend
from CactusEval.backends.OracleBackend import OracleBackend
from CactusEval.backends.ProcessBackend import ProcessBackend
from CactusEval.backends.ReplayBackend import ReplayBackend
from CactusEval.detector import DetectorBackend
from CactusEval.errors import BackendError

BACKENDS: dict[str, type[DetectorBackend]] = {
    cls.name: cls for cls in (OracleBackend, ReplayBackend, ProcessBackend, DelayBackend)
}


def get_backend(name: str, **kwargs) -> DetectorBackend:
    if name not in BACKENDS:
        raise BackendError(f"unknown backend {name!r}, expected one of {sorted(BACKENDS)}")
    return BACKENDS[name](**kwargs)
