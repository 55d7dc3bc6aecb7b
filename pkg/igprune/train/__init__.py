from igprune.train.datasets import *  # noqa: F401
from igprune.train.trainer import *  # noqa: F401
