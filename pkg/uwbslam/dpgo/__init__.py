from ._graph import *
from ._solver import *
from ._distributed import *
