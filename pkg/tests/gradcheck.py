"""Full-model finite-difference gradient check shared by several test modules."""

import numpy as np

from isomax.heads import IsoMaxHead, SoftMaxHead, head_loss
from isomax.network import backward, forward, init_params, mlp_specs
from isomax.numeric import Rng

from oracles import central_difference, relative_error


def model_gradient_error(seed, head_kind, n_classes, dim=16, hidden=(8, 8), n=5, in_dim=2):
    """Worst relative error of analytic vs. central-difference gradients, all parameters."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, in_dim))
    y = rng.integers(0, n_classes, size=n)
    params = init_params(mlp_specs(in_dim, hidden, dim), Rng(seed))
    if head_kind == "isomax":
        # Off-origin prototypes so the check is not confined to the symmetric start.
        head = IsoMaxHead(rng.normal(scale=0.5, size=(n_classes, dim)), 10.0)
    else:
        head = SoftMaxHead.init(n_classes, dim, Rng(seed + 1))
    params.attach_head(head)

    emb, cache = forward(params, x)
    res = head_loss(head, emb, y)
    backward(params, cache, res.grad_embeddings)
    params.grads.update(res.grad_head)

    def loss():
        return head_loss(head, forward(params, x)[0], y).mean_loss

    worst = 0.0
    for name, arr in params.tensors.items():
        numeric = central_difference(loss, arr, 1e-5)
        worst = max(worst, relative_error(params.grads[name], numeric))
    return worst
