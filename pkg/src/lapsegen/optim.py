"""Adam optimizer with bias correction.

Defaults follow the training setup used throughout the experiments:
lr 2e-4, beta1 0.5 (adversarial-friendly), beta2 0.999, eps 1e-8.
"""
import numpy as np

from .errors import InvalidArgument, NumericError


class AdamState:
    """Per-parameter first/second moment buffers plus the step counter."""

    def __init__(self, params, lr=2e-4, beta1=0.5, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.first_moment = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.second_moment = {k: np.zeros_like(p.data) for k, p in params.items()}


def adam_step(params, state):
    """One bias-corrected Adam update, in place; reads each param's .grad.

    Parameters with ``grad=None`` are treated as zero-gradient (their
    moments still decay). Non-finite gradients abort the whole step
    before any parameter is touched.
    """
    grads = {}
    for name, p in params.items():
        if name not in state.first_moment:
            raise InvalidArgument(f"parameter {name!r} unknown to this AdamState")
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.data.shape:
            raise InvalidArgument(f"gradient shape {g.shape} != param {p.data.shape} for {name!r}")
        elif not (np.isfinite(g.min()) and np.isfinite(g.max())):
            raise NumericError(f"non-finite gradient for {name!r}; step aborted")
        grads[name] = g

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p.data = p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
