from igprune.model.config import *  # noqa: F401
from igprune.model.lora import *  # noqa: F401
from igprune.model.transformer import *  # noqa: F401
from igprune.model.surgery import *  # noqa: F401
