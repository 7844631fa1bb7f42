from ._pose import *
from ._stats import *
