from igprune.io.container import *  # noqa: F401
from igprune.io.checkpoint import *  # noqa: F401
from igprune.io.plan_format import *  # noqa: F401
from igprune.io.config_file import *  # noqa: F401
