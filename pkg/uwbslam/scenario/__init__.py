from ._trajectory import *
from ._sensors import *
