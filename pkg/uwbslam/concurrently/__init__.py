from .process import MultiProcess
