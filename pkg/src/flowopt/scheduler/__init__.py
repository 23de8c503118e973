from .evaluate import (Evaluation, evaluate_policy, optimal_flow_time, release_at_zero,
                       single_machine_process, total_flow_time)
from .policy import SchedulerPolicy, SlotPolicy
from .qnet import init_qnet, q_targets_double, q_values, td_loss_and_grads
from .replay import ReplayBuffer, Transition
from .state import EncodingSpec, act_greedy, encode_state, validity_mask
from .train import TrainConfig, train_scheduler, training_log_csv, write_training_log
