from .layers import bce_loss, global_max_pool_forward, mish
from .model import ModelConfig, ScalableCNN
from .optim import AdamHyper, AdamState, adam_step
from .checkpoint import load_checkpoint, save_checkpoint
