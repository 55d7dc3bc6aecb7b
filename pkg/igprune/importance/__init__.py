from igprune.importance.igia import *  # noqa: F401
from igprune.importance.scoring import *  # noqa: F401
from igprune.importance.plan import *  # noqa: F401
