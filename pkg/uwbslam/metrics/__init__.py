from ._metrics import *
