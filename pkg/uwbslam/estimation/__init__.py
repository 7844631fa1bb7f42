from ._window import *
from ._search import *
from ._refine import *
from ._estimate import *
