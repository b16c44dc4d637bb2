"""Toy-scale numerics for the generator side: flow matching, latent concatenation, MAdaNorm."""
from .conditioning import ConditionBundle, concat_condition, split_condition
from .flow import (
    DivergenceError,
    FlowField,
    FlowPair,
    GaussianMixture,
    TrainResult,
    euler_sample,
    fm_loss,
    fm_loss_and_grad,
    interpolate_state,
    optimal_velocity,
    sample_pairs,
    train_toy,
)
from .gradcheck import grad_check, numerical_gradient, relative_error
from .madanorm import (
    MAdaNormParams,
    layer_norm,
    madanorm_backward,
    madanorm_forward,
    modulation,
    resample_grid,
    resample_tokens,
)
