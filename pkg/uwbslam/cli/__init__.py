from ._experiment import *
from ._plotdata import *
from ._commands import *
