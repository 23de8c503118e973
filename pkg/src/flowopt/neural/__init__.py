from .core import (AttentionParams, EmptySequence, LstmLayerParams, ShapeMismatch, attention_pool,
                   causal_attention_backward, causal_attention_forward, log_softmax, lstm_backward,
                   lstm_forward, mlp_backward, mlp_forward, mlp_init, sigmoid, softmax,
                   softmax_cross_entropy)
from .gradcheck import NonFiniteLoss, grad_check
from .optim import AdamState, adam_step
