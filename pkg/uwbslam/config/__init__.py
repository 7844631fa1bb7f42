from . import conf
from .conf import *
from ._constants import (
    DATA_UNIT_MAP,
    SCALAR_BYTES,
    POSE_BYTES,
    HEADER_BYTES,
    PRESETS,
)
