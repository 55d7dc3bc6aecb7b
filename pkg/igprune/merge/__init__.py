from igprune.merge.ops import *  # noqa: F401
from igprune.merge.layer_merge import *  # noqa: F401
