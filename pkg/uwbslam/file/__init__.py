from ._io import *
