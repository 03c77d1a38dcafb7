"""Digital layers: the reference convolution and the small suffix classifier.

The suffix is ``flatten -> dense(H) -> ReLU -> dense(num_classes) -> softmax``
with hand-written backward passes. Batched inputs carry a leading batch axis;
batch losses and gradients are sums over samples.
"""
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidInputError
from .layout import as_kernels

PROB_FLOOR = 1e-12


def conv2d_same(scenes, kernels):
    """True 2-D convolution with zero 'same' padding, summed over input channels.

    ``scenes`` is ``(B, C, S, S)`` or ``(C, S, S)``; ``kernels`` is ``(K, C, k, k)``.
    """
    kernels = as_kernels(kernels)
    scenes = np.asarray(scenes, dtype=float)
    squeeze = scenes.ndim == 3
    if squeeze:
        scenes = scenes[None]
    if scenes.shape[1] != kernels.shape[1]:
        raise InvalidInputError(f"scene has {scenes.shape[1]} channels, kernels expect {kernels.shape[1]}")
    h = kernels.shape[-1] // 2
    padded = np.pad(scenes, ((0, 0), (0, 0), (h, h), (h, h)))
    win = sliding_window_view(padded, kernels.shape[-2:], axis=(2, 3))
    out = np.einsum("bcxyij,kcij->bkxy", win, kernels[:, :, ::-1, ::-1], optimize=True)
    return out[0] if squeeze else out


def conv2d_same_kernel_grad(scenes, grad_out, kernel_size):
    """Gradient of ``sum(grad_out * conv2d_same(scenes, W))`` with respect to ``W``."""
    scenes = np.asarray(scenes, dtype=float)
    if scenes.ndim == 3:
        scenes = scenes[None]
        grad_out = np.asarray(grad_out)[None]
    h = kernel_size // 2
    padded = np.pad(scenes, ((0, 0), (0, 0), (h, h), (h, h)))
    win = sliding_window_view(padded, (kernel_size, kernel_size), axis=(2, 3))
    g = np.einsum("bcxyij,bkxy->kcij", win, grad_out, optimize=True)
    return g[:, :, ::-1, ::-1].copy()


@dataclass
class SuffixNetwork:
    """Parameters ``w1 (H, D)``, ``b1 (H,)``, ``w2 (classes, H)``, ``b2 (classes,)``."""

    params: dict

    @classmethod
    def init(cls, input_shape, num_classes, hidden=64, seed=0):
        d = int(np.prod(input_shape))
        rng = np.random.default_rng(seed)
        return cls({
            "w1": rng.normal(0.0, np.sqrt(2.0 / d), size=(hidden, d)),
            "b1": np.zeros(hidden),
            "w2": rng.normal(0.0, np.sqrt(1.0 / hidden), size=(num_classes, hidden)),
            "b2": np.zeros(num_classes),
        })

    @property
    def input_size(self):
        return self.params["w1"].shape[1]

    @property
    def num_classes(self):
        return self.params["w2"].shape[0]

    def copy(self):
        return SuffixNetwork({k: v.copy() for k, v in self.params.items()})


def _flatten(net, features):
    x = np.asarray(features, dtype=float)
    single = x.size == net.input_size
    x = x.reshape(1 if single else len(x), -1)
    if x.shape[1] != net.input_size:
        raise InvalidInputError(f"features of size {x.shape[1]} do not match network input {net.input_size}")
    return x, single


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward(net, x):
    p = net.params
    pre = x @ p["w1"].T + p["b1"]
    hid = np.maximum(pre, 0.0)
    logits = hid @ p["w2"].T + p["b2"]
    return pre, hid, softmax(logits)


def suffix_forward(net, features):
    """Class probabilities for one feature map ``(K, S, S)`` or a batch ``(B, K, S, S)``."""
    x, single = _flatten(net, features)
    probs = _forward(net, x)[2]
    return probs[0] if single else probs


def log_loss(probs, label):
    """Negative log probability of ``label`` (floored at 1e-12); batched if ``label`` is an array."""
    probs = np.asarray(probs, dtype=float)
    if probs.ndim == 1:
        return float(-np.log(max(probs[int(label)], PROB_FLOOR)))
    label = np.asarray(label, dtype=int)
    return -np.log(np.maximum(probs[np.arange(len(label)), label], PROB_FLOOR))


def suffix_backward(net, features, label):
    """Gradients of the summed log loss.

    Returns ``(param_grads, feature_grad, probs)``; ``feature_grad`` has the shape
    of ``features``.
    """
    x, single = _flatten(net, features)
    labels = np.atleast_1d(np.asarray(label, dtype=int))
    if len(labels) != len(x):
        raise InvalidInputError(f"{len(labels)} labels for {len(x)} samples")
    p = net.params
    pre, hid, probs = _forward(net, x)
    dlogits = probs.copy()
    dlogits[np.arange(len(x)), labels] -= 1.0
    # floor in log_loss is inactive unless a probability underflows below 1e-12
    dlogits[probs[np.arange(len(x)), labels] < PROB_FLOOR, :] = 0.0
    grads = {"w2": dlogits.T @ hid, "b2": dlogits.sum(axis=0)}
    dhid = dlogits @ p["w2"]
    dpre = dhid * (pre > 0)
    grads["w1"] = dpre.T @ x
    grads["b1"] = dpre.sum(axis=0)
    dx = (dpre @ p["w1"]).reshape(np.shape(features))
    return grads, dx, (probs[0] if single else probs)


def digital_features(kernels, scene):
    return conv2d_same(scene, kernels)


def digital_baseline_forward(kernels, net, scene):
    """All-digital reference path: same-padded convolution then the suffix network."""
    return suffix_forward(net, conv2d_same(scene, kernels))
