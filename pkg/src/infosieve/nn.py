"""Dense networks, momentum SGD and finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff
from .autodiff import Tensor, backward, grads_by_source, leaf

_ACT = {"gelu": autodiff.gelu, "tanh": autodiff.tanh, "linear": None}


@dataclass
class Layer:
    weight: np.ndarray  # [out, in]
    bias: np.ndarray  # [out]
    activation: str = "gelu"


class ParamStore:
    """Trainable weights of one dense network, layer by layer."""

    def __init__(self, layers: list[Layer]):
        self.layers = layers
        self.check()

    def check(self) -> None:
        prev_out = None
        for i, lay in enumerate(self.layers):
            if lay.activation not in _ACT:
                raise ValueError(f"layer {i}: unknown activation {lay.activation!r}")
            out_d, in_d = lay.weight.shape
            if lay.bias.shape != (out_d,):
                raise ValueError(
                    f"layer {i}: bias shape {lay.bias.shape} does not match "
                    f"weight shape {lay.weight.shape}"
                )
            if prev_out is not None and in_d != prev_out:
                raise ValueError(
                    f"layer {i}: in-dim {in_d} does not match previous out-dim {prev_out}"
                )
            if not (np.isfinite(lay.weight).all() and np.isfinite(lay.bias).all()):
                raise ValueError(f"layer {i}: non-finite parameter entries")
            prev_out = out_d

    @property
    def widths(self) -> list[int]:
        return [self.layers[0].weight.shape[1]] + [
            lay.weight.shape[0] for lay in self.layers
        ]

    def flat(self) -> list[np.ndarray]:
        out = []
        for lay in self.layers:
            out.append(lay.weight)
            out.append(lay.bias)
        return out

    def copy(self) -> "ParamStore":
        return ParamStore(
            [Layer(lay.weight.copy(), lay.bias.copy(), lay.activation) for lay in self.layers]
        )

    def n_params(self) -> int:
        return sum(a.size for a in self.flat())


@dataclass
class GradResult:
    """Scalar loss plus gradients shaped exactly like a ParamStore."""

    loss: float
    grads: list[tuple[np.ndarray, np.ndarray]]

    def check_against(self, store: ParamStore) -> None:
        if len(self.grads) != len(store.layers):
            raise ValueError("gradient layer count mismatch")
        for i, ((gw, gb), lay) in enumerate(zip(self.grads, store.layers)):
            if gw.shape != lay.weight.shape or gb.shape != lay.bias.shape:
                raise ValueError(f"layer {i}: gradient shape mismatch")
            if not (np.isfinite(gw).all() and np.isfinite(gb).all()):
                raise ValueError(f"layer {i}: non-finite gradient entries")


def init_mlp(widths: list[int], rng: np.random.Generator, activation: str = "gelu",
             final_scale: float = 1.0) -> ParamStore:
    """He-initialised MLP; the last layer is linear (heads add their own nonlinearity)."""
    layers = []
    for i in range(len(widths) - 1):
        fan_in, fan_out = widths[i], widths[i + 1]
        last = i == len(widths) - 2
        scale = np.sqrt(2.0 / fan_in) * (final_scale if last else 1.0)
        layers.append(
            Layer(
                weight=rng.normal(0.0, scale, size=(fan_out, fan_in)),
                bias=np.zeros(fan_out),
                activation="linear" if last else activation,
            )
        )
    return ParamStore(layers)


def mlp_apply(store: ParamStore, x: Tensor) -> Tensor:
    """Graph-building forward pass; returns the final-layer pre-activation."""
    h = x
    for lay in store.layers:
        h = autodiff.linear(h, leaf(lay.weight), leaf(lay.bias))
        act = _ACT[lay.activation]
        if act is not None:
            h = act(h)
    return h


def mlp_forward(store: ParamStore, x: np.ndarray) -> np.ndarray:
    """Plain-array forward pass through the same graph code path."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != store.layers[0].weight.shape[1]:
        raise ValueError(
            f"input dim {x.shape[-1]} does not match first layer in-dim "
            f"{store.layers[0].weight.shape[1]} (widths {store.widths})"
        )
    return mlp_apply(store, Tensor(x)).data


def grad_result(root: Tensor, store: ParamStore) -> GradResult:
    """Collect gradients for one store after backward(root)."""
    gmap = grads_by_source(root)
    grads = []
    for lay in store.layers:
        gw = gmap.get(id(lay.weight))
        gb = gmap.get(id(lay.bias))
        grads.append(
            (
                gw if gw is not None else np.zeros_like(lay.weight),
                gb if gb is not None else np.zeros_like(lay.bias),
            )
        )
    res = GradResult(loss=float(root.data), grads=grads)
    res.check_against(store)
    return res


class MomentumSGD:
    """SGD with momentum; weight decay applies to weight matrices only.

    Velocity follows v = momentum*v + (g + wd*w); w -= lr*v, so two steps
    at constant gradient g move a parameter by lr*g + lr*(g + momentum*g).
    """

    def __init__(self, lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        if lr < 0:
            raise ValueError("lr must be >= 0")
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity: dict[int, np.ndarray] = {}

    def step(self, store: ParamStore, grads: list[tuple[np.ndarray, np.ndarray]]) -> ParamStore:
        for i, (lay, (gw, gb)) in enumerate(zip(store.layers, grads)):
            if not (np.isfinite(gw).all() and np.isfinite(gb).all()):
                raise RuntimeError(
                    f"step refused: non-finite gradient in layer {i} "
                    f"(weight finite={np.isfinite(gw).all()}, bias finite={np.isfinite(gb).all()})"
                )
            self._update(lay.weight, gw, decay=self.weight_decay)
            self._update(lay.bias, gb, decay=0.0)
        return store

    def _update(self, param: np.ndarray, grad: np.ndarray, decay: float) -> None:
        g = grad + decay * param if decay else grad
        v = self._velocity.get(id(param))
        if v is None:
            v = np.zeros_like(param)
            self._velocity[id(param)] = v
        v *= self.momentum
        v += g
        param -= self.lr * v


def sgd_step(store: ParamStore, grads, lr: float, momentum: float = 0.0,
             weight_decay: float = 0.0, optimizer: MomentumSGD | None = None) -> ParamStore:
    """One optimizer step; pass the same ``optimizer`` to carry velocity."""
    if optimizer is None:
        optimizer = MomentumSGD(lr, momentum, weight_decay)
    optimizer.lr = lr
    return optimizer.step(store, grads)


def grad_check(loss_fn, params, eps: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` takes no arguments and rebuilds the loss graph from the
    current contents of ``params`` (a ParamStore or sequence of them), so
    in-place perturbation of the arrays is visible to it.  Error per entry
    is |analytic - numeric| / max(1, |analytic|).
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    stores = [params] if isinstance(params, ParamStore) else list(params)
    root = loss_fn()
    backward(root)
    gmap = grads_by_source(root)
    max_err = 0.0
    for store in stores:
        for arr in store.flat():
            analytic = gmap.get(id(arr), np.zeros_like(arr)).reshape(-1)
            flat = arr.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                f_plus = float(loss_fn().data)
                flat[i] = orig - eps
                f_minus = float(loss_fn().data)
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2.0 * eps)
                err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]))
                if err > max_err:
                    max_err = err
    return max_err
