"""Small numpy network toolkit: layers with explicit backward passes, BCE, Adam."""

from .layers import (
    AdditiveAttention, BatchNorm, Context, Conv2D, Dense, Dropout, Flatten, LSTMCell,
    LayerSpec, MaxPool2D, SigmoidHead, SimpleRNNCell, attention_pool, sigmoid,
)
from .network import (
    Adam, Network, OptimState, adam_step, bce_loss, dump_container, load_container,
)
