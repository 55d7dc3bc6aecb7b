import numpy as np

__all__ = ["Params"]


class Params:
    def __init__(self):
        self.dtype = np.float64
        self.storage_dtypes = ("f32", "f64")

        self.norm_eps = 1e-6
        self.fisher_guard = 1e-12

        # Targets equal to this index are excluded from the loss and metrics.
        self.ignore_index = -1

        self.lora_rank = 8
        self.lora_alpha = 16.0

        self.container_magic = b"IGPK"
        self.container_version = 1
