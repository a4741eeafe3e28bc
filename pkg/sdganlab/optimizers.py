"""
In-place gradient based parameter updates.
"""

import numpy as np

from sdganlab.exceptions import DivergenceError


def _check_grads(params):
    for i, param in enumerate(params):
        if param.grad.shape != param.value.shape:
            raise ValueError("Gradient of parameter {} has shape {}, expected "
                             "{}".format(i, param.grad.shape, param.value.shape))
        if not np.all(np.isfinite(param.grad)):
            raise DivergenceError(
                "Non-finite gradient in parameter {}{}".format(
                    i, "" if param.name is None else " (" + param.name + ")"))


def sgd_step(params, lr):
    """ theta <- theta - lr * grad for every parameter. """
    _check_grads(params)
    for param in params:
        param.value -= lr * param.grad


def adam_step(params, state, lr, betas=(0.9, 0.999), eps=1e-8):
    """
    One Adam update with bias correction.

    Parameters
    ----------
    params : List
        The parameter nodes, with populated gradients.
    state : dict
        Moment estimates, updated in place. Keys: "t" (int), "m" and "v"
        (lists of arrays, one per parameter, or None before the first step).
    lr : float
        Learning rate.
    betas : tuple
        Decay rates of the first and second moment estimates.
    eps : float
        Added to the denominator.

    """
    _check_grads(params)
    beta1, beta2 = betas
    if state.get("m") is None:
        state["m"] = [np.zeros_like(param.value) for param in params]
        state["v"] = [np.zeros_like(param.value) for param in params]
        state["t"] = 0
    if len(state["m"]) != len(params):
        raise ValueError("Adam state holds {} parameters, got {}".format(
            len(state["m"]), len(params)))

    state["t"] += 1
    t = state["t"]
    for i, param in enumerate(params):
        g = param.grad
        state["m"][i] = beta1 * state["m"][i] + (1. - beta1) * g
        state["v"][i] = beta2 * state["v"][i] + (1. - beta2) * g * g
        m_hat = state["m"][i] / (1. - beta1 ** t)
        v_hat = state["v"][i] / (1. - beta2 ** t)
        param.value -= lr * m_hat / (np.sqrt(v_hat) + eps)


class SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params):
        sgd_step(params, self.lr)

    def state_dict(self):
        return {"type": "sgd", "lr": self.lr}

    def load_state_dict(self, state):
        self.lr = state["lr"]


class Adam:
    """
    Adam optimizer keeping one pair of moment estimates per parameter.

    The parameters have to be given in the same order on every step.

    """
    def __init__(self, lr, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.state = {"t": 0, "m": None, "v": None}

    def step(self, params):
        adam_step(params, self.state, self.lr, self.betas, self.eps)

    def state_dict(self):
        state = {"type": "adam", "lr": self.lr, "betas": list(self.betas),
                 "eps": self.eps, "t": self.state["t"]}
        if self.state["m"] is None:
            state["m"], state["v"] = None, None
        else:
            state["m"] = [m.tolist() for m in self.state["m"]]
            state["v"] = [v.tolist() for v in self.state["v"]]
        return state

    def load_state_dict(self, state):
        self.lr = state["lr"]
        self.betas = tuple(state["betas"])
        self.eps = state["eps"]
        self.state["t"] = state["t"]
        if state["m"] is None:
            self.state["m"], self.state["v"] = None, None
        else:
            self.state["m"] = [np.array(m, dtype=np.float64) for m in state["m"]]
            self.state["v"] = [np.array(v, dtype=np.float64) for v in state["v"]]


def get_optimizer(name, lr, betas=(0.5, 0.999)):
    """ Optimizer by name, as given in the [training] config section. """
    if name == "adam":
        return Adam(lr, betas=betas)
    elif name == "sgd":
        return SGD(lr)
    else:
        raise NameError("Unknown optimizer {}, must be either adam or "
                        "sgd".format(name))
