from typing import Dict, Sequence, Tuple, Union

import numpy as np

"""
Type aliases used for hints across the package.

see more PEP484 (Python Enhancement Proposals) :
https://www.python.org/dev/peps/pep-0484/
"""

RobotId = int

# (robot, keyframe index on the shared time grid)
NodeKey = Tuple[int, int]
RobotPair = Tuple[int, int]

Vector3 = Union[Sequence[float], np.ndarray]
Positions = Dict[int, Tuple[float, float]]
