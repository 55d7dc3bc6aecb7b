from igprune.analysis.metrics import *  # noqa: F401
from igprune.analysis.sensitivity import *  # noqa: F401
from igprune.analysis.ablations import *  # noqa: F401
