"""Parameter containers and standard layers."""

from collections import OrderedDict

import numpy as np

from . import tensor as T
from .tensor import Tensor

LEAKY_SLOPE = 0.2


class Module:
    """Tracks parameters, buffers and submodules in attribute-assignment order."""

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "_modules", OrderedDict())
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name, array):
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, m in self._modules.items():
            yield from m.named_buffers(f"{prefix}{name}.")

    def n_parameters(self):
        return int(sum(p.data.size for p in self.parameters()))

    def train(self, mode=True):
        object.__setattr__(self, "training", mode)
        for m in self._modules.values():
            m.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_arrays(self):
        """Ordered (name, array) pairs of parameters then buffers; arrays are live references."""
        return [(n, p.data) for n, p in self.named_parameters()] + list(self.named_buffers())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items = []
        for m in modules:
            self.append(m)

    def append(self, m):
        setattr(self, str(len(self._items)), m)
        self._items.append(m)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


def uniform_init(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, n_in, n_out, rng, bias=True, zero=False):
        super().__init__()
        w = np.zeros((n_in, n_out)) if zero else uniform_init(rng, (n_in, n_out), n_in)
        self.W = Tensor(w, requires_grad=True)
        if bias:
            b = np.zeros(n_out) if zero else uniform_init(rng, (n_out,), n_in)
            self.b = Tensor(b, requires_grad=True)
        else:
            self.b = None
        self.n_in, self.n_out = n_in, n_out

    def forward(self, x):
        return T.linear(x, self.W, self.b)


class BatchNorm(Module):
    def __init__(self, n, momentum=0.1, eps=1e-5):
        super().__init__()
        self.gamma = Tensor(np.ones(n), requires_grad=True)
        self.beta = Tensor(np.zeros(n), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(n))
        self.register_buffer("running_var", np.ones(n))
        self.momentum, self.eps = momentum, eps

    def forward(self, x, act=None):
        """Normalise over all leading axes; ``act`` fuses a LeakyReLU with that slope."""
        shape = x.shape
        x2 = x if x.ndim == 2 else x.reshape(-1, shape[-1])
        if act is None:
            out = T.batch_norm(x2, self.gamma, self.beta, self.running_mean, self.running_var,
                               self.training, self.momentum, self.eps)
        else:
            out = T.batch_norm_act(x2, self.gamma, self.beta, self.running_mean, self.running_var,
                                   self.training, act, self.momentum, self.eps)
        return out if x.ndim == 2 else out.reshape(shape)


class LayerNorm(Module):
    def __init__(self, n, eps=1e-5):
        super().__init__()
        self.gamma = Tensor(np.ones(n), requires_grad=True)
        self.beta = Tensor(np.zeros(n), requires_grad=True)
        self.eps = eps

    def forward(self, x):
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class MLP(Module):
    """Point-wise ``Linear -> BatchNorm -> LeakyReLU`` stack.

    ``plain_last`` leaves the final layer as a bare linear map (for heads).
    """

    def __init__(self, widths, rng, norm=True, plain_last=False, zero_last=False):
        super().__init__()
        self.layers = ModuleList()
        self.norms = ModuleList()
        n = len(widths) - 1
        for i in range(n):
            last = i == n - 1
            self.layers.append(Linear(widths[i], widths[i + 1], rng, zero=zero_last and last))
            if norm and not (plain_last and last):
                self.norms.append(BatchNorm(widths[i + 1]))
        self.norm = norm
        self.plain_last = plain_last

    def forward(self, x):
        n = len(self.layers)
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if self.plain_last and i == n - 1:
                break
            if self.norm:
                x = self.norms[i](x, act=LEAKY_SLOPE)
            else:
                x = T.leaky_relu(x, LEAKY_SLOPE)
        return x
