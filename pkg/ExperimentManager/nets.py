"""
MLP construction, L2 regularization, optimizers and JSON checkpoints.

Weights are stored fan-in x fan-out and biases as 1 x fan-out row vectors, so a
layer computes x @ W + b on row-major batches. Parameter names follow
`<network>.<layer>.weight` / `<network>.<layer>.bias`.

Checkpoint layout (JSON):

    {"format": "abcei-checkpoint/1",
     "meta": {...},
     "networks": {"encoder": {"layers": [
         {"weight": {"rows": r, "cols": c, "values": [row-major floats]},
          "bias": {"rows": 1, "cols": c, "values": [...]}}, ...]}, ...}}
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .exceptions import ConfigError, ContractError, DimensionError, SchemaError, TrainingError

logger = logging.getLogger('experiment_logger')

CHECKPOINT_FORMAT = 'abcei-checkpoint/1'


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_widths: tuple = ()
    output_dim: int = 1
    hidden_activation: str = 'elu'
    output_activation: str = 'linear'

    def __post_init__(self):
        object.__setattr__(self, 'hidden_widths', tuple(int(w) for w in self.hidden_widths))
        if min((self.input_dim, self.output_dim) + self.hidden_widths) < 1:
            raise ConfigError(f'all layer widths must be >= 1, got {self.layer_sizes}')
        if self.hidden_activation != 'elu' or self.output_activation != 'linear':
            raise ConfigError('only ELU hidden layers with a linear output are supported')

    @property
    def layer_sizes(self):
        return (self.input_dim,) + self.hidden_widths + (self.output_dim,)

    @property
    def n_layers(self):
        return len(self.hidden_widths) + 1


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray


@dataclass
class MlpParams:
    name: str
    layers: list

    @property
    def input_dim(self):
        return self.layers[0].weight.shape[0]

    @property
    def output_dim(self):
        return self.layers[-1].weight.shape[1]

    def named_arrays(self):
        for index, layer in enumerate(self.layers):
            yield f'{self.name}.{index}.weight', layer.weight
            yield f'{self.name}.{index}.bias', layer.bias

    def copy(self):
        return MlpParams(self.name, [Layer(l.weight.copy(), l.bias.copy()) for l in self.layers])

    def validate(self):
        for previous, layer in zip(self.layers, self.layers[1:]):
            if previous.weight.shape[1] != layer.weight.shape[0]:
                raise DimensionError(f'{self.name}: layer shapes do not chain')
        for param_name, array in self.named_arrays():
            if not np.all(np.isfinite(array)):
                raise TrainingError(f'non-finite entries in {param_name}', parameter=param_name)


def init_params(spec, seed, name='mlp'):
    """Glorot-variance normal weights N(0, 2/(fan_in + fan_out)), zero biases."""
    rng = np.random.default_rng(seed)
    sizes = spec.layer_sizes
    layers = []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        std = np.sqrt(2.0 / (fan_in + fan_out))
        layers.append(Layer(rng.normal(0.0, std, size=(fan_in, fan_out)), np.zeros((1, fan_out))))
    return MlpParams(name, layers)


class BoundMlp:
    """An MlpParams bound onto one tape, either trainable or as constants."""

    def __init__(self, params, tape, trainable=False):
        self.params = params
        self.tape = tape
        self.trainable = trainable
        self.layers = []
        for index, layer in enumerate(params.layers):
            weight = tape.leaf(layer.weight, requires_grad=trainable, name=f'{params.name}.{index}.weight')
            bias = tape.leaf(layer.bias, requires_grad=trainable, name=f'{params.name}.{index}.bias')
            self.layers.append((weight, bias))

    def gradients(self):
        grads = {}
        for weight, bias in self.layers:
            grads[weight.name] = self.tape.grad(weight)
            grads[bias.name] = self.tape.grad(bias)
        return grads


def bind(params, tape, trainable=False):
    return BoundMlp(params, tape, trainable)


def _layers_on(params, tape):
    if isinstance(params, BoundMlp):
        if params.tape is not tape:
            raise ContractError('network is bound to a different tape')
        return params.layers
    return BoundMlp(params, tape).layers


def forward(params, x):
    """Affine -> ELU chain with a linear final affine layer."""
    layers = _layers_on(params, x.tape)
    if x.cols != layers[0][0].rows:
        raise DimensionError(f'network expects {layers[0][0].rows} input columns, got {x.cols}')
    out = x
    for index, (weight, bias) in enumerate(layers):
        out = ad.add(ad.matmul(out, weight), bias)
        if index < len(layers) - 1:
            out = ad.elu(out)
    return out


def l2_penalty(params, tape=None):
    """Sum of squared weight entries; biases are not regularized."""
    if tape is None:
        if not isinstance(params, BoundMlp):
            raise ContractError('an unbound network needs a tape')
        tape = params.tape
    penalty = None
    for weight, _ in _layers_on(params, tape):
        term = ad.total(ad.square(weight))
        penalty = term if penalty is None else ad.add(penalty, term)
    return penalty


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@dataclass
class RmsPropState:
    lr: float = 1e-3
    rho: float = 0.9
    eps: float = 1e-8
    t: int = 0
    v: dict = field(default_factory=dict)


def new_optimizer(kind='adam', lr=1e-3):
    if kind == 'adam':
        return AdamState(lr=lr)
    if kind == 'rmsprop':
        return RmsPropState(lr=lr)
    raise ConfigError(f'unknown optimizer {kind!r}')


def _as_list(params):
    return [params] if isinstance(params, MlpParams) else list(params)


def _checked_grad(grads, param_name, array):
    grad = grads.get(param_name)
    if grad is None:
        return np.zeros_like(array)
    if grad.shape != array.shape:
        raise DimensionError(f'gradient for {param_name} has shape {grad.shape}, expected {array.shape}')
    if not np.all(np.isfinite(grad)):
        raise TrainingError(f'non-finite gradient for {param_name}', parameter=param_name)
    return grad


def _apply(params_list, updates):
    updated = []
    for params in params_list:
        layers = []
        for index, layer in enumerate(params.layers):
            layers.append(Layer(
                layer.weight - updates[f'{params.name}.{index}.weight'],
                layer.bias - updates[f'{params.name}.{index}.bias'],
            ))
        updated.append(MlpParams(params.name, layers))
    return updated


def adam_step(state, params, grads):
    """Bias-corrected Adam. Returns (updated params list, new state); inputs are untouched."""
    params_list = _as_list(params)
    t = state.t + 1
    m, v, updates = dict(state.m), dict(state.v), {}
    for p in params_list:
        for param_name, array in p.named_arrays():
            grad = _checked_grad(grads, param_name, array)
            m[param_name] = state.beta1 * state.m.get(param_name, 0.0) + (1.0 - state.beta1) * grad
            v[param_name] = state.beta2 * state.v.get(param_name, 0.0) + (1.0 - state.beta2) * grad * grad
            m_hat = m[param_name] / (1.0 - state.beta1 ** t)
            v_hat = v[param_name] / (1.0 - state.beta2 ** t)
            updates[param_name] = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(state.lr, state.beta1, state.beta2, state.eps, t, m, v)
    return _apply(params_list, updates), new_state


def rmsprop_step(state, params, grads):
    params_list = _as_list(params)
    v, updates = dict(state.v), {}
    for p in params_list:
        for param_name, array in p.named_arrays():
            grad = _checked_grad(grads, param_name, array)
            v[param_name] = state.rho * state.v.get(param_name, 0.0) + (1.0 - state.rho) * grad * grad
            updates[param_name] = state.lr * grad / (np.sqrt(v[param_name]) + state.eps)
    new_state = RmsPropState(state.lr, state.rho, state.eps, state.t + 1, v)
    return _apply(params_list, updates), new_state


def optimizer_step(state, params, grads):
    if isinstance(state, AdamState):
        return adam_step(state, params, grads)
    return rmsprop_step(state, params, grads)


def _matrix_to_dict(array):
    return {'rows': int(array.shape[0]), 'cols': int(array.shape[1]), 'values': [float(x) for x in array.reshape(-1)]}


def _matrix_from_dict(data, where):
    try:
        rows, cols, values = int(data['rows']), int(data['cols']), data['values']
    except (KeyError, TypeError, ValueError):
        raise SchemaError(f'malformed matrix entry in {where}')
    if len(values) != rows * cols:
        raise SchemaError(f'{where}: expected {rows * cols} values, got {len(values)}')
    return ad.as_matrix(np.asarray(values, dtype=np.float64).reshape(rows, cols), where)


def params_to_dict(params):
    return {'layers': [{'weight': _matrix_to_dict(l.weight), 'bias': _matrix_to_dict(l.bias)} for l in params.layers]}


def params_from_dict(name, data):
    layers = []
    for index, layer in enumerate(data.get('layers', [])):
        layers.append(Layer(
            _matrix_from_dict(layer.get('weight'), f'{name}.{index}.weight'),
            _matrix_from_dict(layer.get('bias'), f'{name}.{index}.bias'),
        ))
    if not layers:
        raise SchemaError(f'network {name} has no layers')
    params = MlpParams(name, layers)
    params.validate()
    return params


def save_checkpoint(path, networks, meta=None):
    payload = {
        'format': CHECKPOINT_FORMAT,
        'meta': meta or {},
        'networks': {name: params_to_dict(params) for name, params in networks.items()},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True))
    logger.debug(f'Checkpoint written to {path}')
    return path


def load_checkpoint(path):
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(f'checkpoint {path} is not valid JSON: {e}')
    if payload.get('format') != CHECKPOINT_FORMAT:
        raise SchemaError(f'checkpoint {path} has unsupported format {payload.get("format")!r}')
    networks = {name: params_from_dict(name, data) for name, data in payload.get('networks', {}).items()}
    return networks, payload.get('meta', {})
