from ._consistency import *
from ._clique import *
from ._filter import *
