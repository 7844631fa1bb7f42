from ._robot import *
from ._driver import *
