from ._sim import *
