"""Operator networks for two (or more) input functions.

Three architectures share one interface:

``fnn``
    One dense stack on the concatenation ``[u | v | y]``.
``deeponet``
    A single branch net on ``[u | v]`` and a trunk net on ``y``, joined by
    an inner product.
``edeeponet``
    One branch net per input function; branch outputs are fused by
    element-wise product before the inner product with the trunk.

All models take ``functions`` (a list with one ``(batch, m)`` array per
input function) and ``y`` (``(batch, query_dim)``) and return a
``(batch,)`` prediction.
"""

import hashlib
import io
import json
import struct
from dataclasses import asdict, dataclass, replace

import numpy as np

from .exceptions import DimensionError, SearchError, SpecError, StateError, UsageError
from .nn import ACTIVATIONS, MLP

KINDS = ("fnn", "deeponet", "edeeponet")
CHECKPOINT_MAGIC = b"EDONMDL1"


@dataclass(frozen=True)
class ModelSpec:
    """Architecture descriptor; together with ``seed`` it fixes the initial weights.

    ``n_branches`` is the number of input functions. Only ``edeeponet``
    turns it into separate branch nets; ``deeponet`` and ``fnn`` concatenate
    the functions instead. Hidden widths exclude the input and output layers.
    """

    kind: str = "edeeponet"
    sensor_count: int = 101
    n_branches: int = 2
    branch_widths: tuple = (64, 64)
    trunk_widths: tuple = (64, 64)
    latent_dim: int = 64
    fnn_widths: tuple = (104, 104, 104)
    query_dim: int = 2
    activation: str = "relu"
    output_bias: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("branch_widths", "trunk_widths", "fnn_widths"):
            object.__setattr__(self, name, tuple(int(w) for w in getattr(self, name)))
        self.validate()

    def validate(self):
        if self.kind not in KINDS:
            raise SpecError(f"unknown model kind {self.kind!r}; valid kinds: {', '.join(KINDS)}")
        if self.activation not in ACTIVATIONS:
            raise SpecError(f"unknown activation {self.activation!r}")
        if self.sensor_count < 1 or self.query_dim < 1:
            raise SpecError("sensor_count and query_dim must be >= 1")
        if self.kind == "edeeponet" and self.n_branches < 2:
            raise SpecError(f"edeeponet needs n_branches >= 2, got {self.n_branches}")
        if self.n_branches < 1:
            raise SpecError(f"n_branches must be >= 1, got {self.n_branches}")
        if self.kind == "fnn":
            widths = self.fnn_widths
        else:
            widths = self.branch_widths + self.trunk_widths
            if self.latent_dim < 1:
                raise SpecError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if any(w < 1 for w in widths):
            raise SpecError(f"all widths must be >= 1, got {widths}")

    def layer_widths(self):
        """Return ``{"branch": [...], "trunk": [...]}`` or ``{"fnn": [...]}`` full width lists."""
        m, n, q = self.sensor_count, self.n_branches, self.query_dim
        if self.kind == "fnn":
            return {"fnn": [n * m + q, *self.fnn_widths, 1]}
        branch_in = m if self.kind == "edeeponet" else n * m
        return {
            "branch": [branch_in, *self.branch_widths, self.latent_dim],
            "trunk": [q, *self.trunk_widths, self.latent_dim],
        }

    def to_dict(self):
        d = asdict(self)
        for name in ("branch_widths", "trunk_widths", "fnn_widths"):
            d[name] = list(d[name])
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise SpecError(f"unknown model spec keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self):
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def _dense_count(widths):
    return sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))


def parameter_count(spec):
    """Number of trainable scalars: sum of ``in*out + out`` over dense layers, plus b0.

    For ``fnn`` the output bias is the last dense layer's bias, already
    in the sum.
    """
    widths = spec.layer_widths()
    if spec.kind == "fnn":
        return _dense_count(widths["fnn"])
    n_nets = spec.n_branches if spec.kind == "edeeponet" else 1
    return n_nets * _dense_count(widths["branch"]) + _dense_count(widths["trunk"]) + int(spec.output_bias)


class OperatorModel:
    """A built network. Use :func:`build` to construct one from a spec."""

    def __init__(self, spec):
        spec.validate()
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        widths = spec.layer_widths()
        act = spec.activation
        self.branches = []
        self.trunk = None
        self.net = None
        if spec.kind == "fnn":
            self.net = MLP(widths["fnn"], act, rng)
        else:
            n_nets = spec.n_branches if spec.kind == "edeeponet" else 1
            self.branches = [MLP(widths["branch"], act, rng) for _ in range(n_nets)]
            self.trunk = MLP(widths["trunk"], act, rng)
        self.b0 = np.zeros(1)
        self.grad_b0 = np.zeros(1)
        self._cache = None

    @property
    def kind(self):
        return self.spec.kind

    @property
    def parameter_count(self):
        return sum(p.size for p in self.parameters())

    def _modules(self):
        return [self.net] if self.net is not None else [*self.branches, self.trunk]

    def _has_b0(self):
        return self.net is None and self.spec.output_bias

    def parameters(self):
        params = [p for mod in self._modules() for p in mod.parameters()]
        if self._has_b0():
            params.append(self.b0)
        return params

    def gradients(self):
        grads = [g for mod in self._modules() for g in mod.gradients()]
        if self._has_b0():
            grads.append(self.grad_b0)
        return grads

    def zero_grad(self):
        for mod in self._modules():
            mod.zero_grad()
        self.grad_b0.fill(0.0)

    def get_state(self):
        return [p.copy() for p in self.parameters()]

    def set_state(self, state):
        params = self.parameters()
        if len(state) != len(params):
            raise StateError(f"state has {len(state)} arrays, model has {len(params)}")
        for p, s in zip(params, state):
            if p.shape != s.shape:
                raise StateError(f"state array shape {s.shape} does not match parameter {p.shape}")
            p[...] = s

    def _check_inputs(self, functions, y):
        spec = self.spec
        if isinstance(functions, np.ndarray) and functions.ndim == 2:
            functions = [functions]
        if len(functions) != spec.n_branches:
            raise UsageError(
                f"{spec.kind} model expects {spec.n_branches} input functions, got {len(functions)}"
            )
        y = np.asarray(y, dtype=np.float64)
        if y.ndim != 2 or y.shape[1] != spec.query_dim:
            raise DimensionError(f"query points must have shape (batch, {spec.query_dim}), got {y.shape}")
        out = []
        for i, f in enumerate(functions):
            f = np.asarray(f, dtype=np.float64)
            if f.shape != (y.shape[0], spec.sensor_count):
                raise DimensionError(
                    f"function {i} must have shape ({y.shape[0]}, {spec.sensor_count}), got {f.shape}"
                )
            out.append(f)
        return out, y

    def forward(self, functions, y, cache=True):
        """Predict ``G(functions)(y)`` for a batch. ``cache=False`` leaves training state untouched."""
        functions, y = self._check_inputs(functions, y)
        kind = self.spec.kind
        if kind == "fnn":
            out = self.net.forward(np.hstack([*functions, y]), cache=cache)[:, 0]
            if cache:
                self._cache = ()
            return out
        trunk_out = self.trunk.forward(y, cache=cache)
        if kind == "deeponet":
            branch_outs = [self.branches[0].forward(np.hstack(functions), cache=cache)]
        else:
            branch_outs = [net.forward(f, cache=cache) for net, f in zip(self.branches, functions)]
        fused = branch_outs[0]
        for g in branch_outs[1:]:
            fused = fused * g
        out = np.einsum("ij,ij->i", fused, trunk_out)
        if self._has_b0():
            out = out + self.b0[0]
        if cache:
            self._cache = (branch_outs, fused, trunk_out)
        return out

    def predict(self, functions, y):
        return self.forward(functions, y, cache=False)

    def backward(self, grad_output):
        """Accumulate parameter gradients given ``dLoss/dOutput`` per batch element."""
        if self._cache is None:
            raise StateError("backward called before forward")
        grad_output = np.asarray(grad_output, dtype=np.float64)
        if self.net is not None:
            self.net.backward(grad_output[:, None], input_grad=False)
            return
        branch_outs, fused, trunk_out = self._cache
        if grad_output.shape != (trunk_out.shape[0],):
            raise DimensionError(
                f"upstream gradient must have shape ({trunk_out.shape[0]},), got {grad_output.shape}"
            )
        if self._has_b0():
            self.grad_b0 += grad_output.sum()
        g = grad_output[:, None]
        self.trunk.backward(g * fused, input_grad=False)
        weighted = g * trunk_out
        for i, net in enumerate(self.branches):
            grad = weighted
            for j, other in enumerate(branch_outs):
                if j != i:
                    grad = grad * other
            net.backward(grad, input_grad=False)


def build(spec):
    """Build and initialize a model from ``spec`` (Glorot-uniform weights, zero biases)."""
    return OperatorModel(spec)


def _single(model, kind, functions, y):
    if model.kind != kind:
        raise UsageError(f"expected a {kind} model, got {model.kind}")
    functions = [np.asarray(f, dtype=np.float64)[None, :] for f in functions]
    y = np.asarray(y, dtype=np.float64)[None, :]
    return float(model.predict(functions, y)[0])


def forward_fnn(model, u, v, y):
    return _single(model, "fnn", [u, v], y)


def forward_deeponet_concat(model, u, v, y):
    return _single(model, "deeponet", [u, v], y)


def forward_edeeponet(model, functions, y):
    return _single(model, "edeeponet", list(functions), y)


def _template(reference, target_kind, width):
    if target_kind == "fnn":
        depth = len(reference.fnn_widths) if reference.kind == "fnn" else 3
        return replace(reference, kind="fnn", fnn_widths=(width,) * depth)
    if reference.kind == "fnn":
        branch_depth = trunk_depth = 2
        latent = ModelSpec.latent_dim
    else:
        branch_depth = len(reference.branch_widths)
        trunk_depth = len(reference.trunk_widths)
        latent = reference.latent_dim
    return replace(
        reference,
        kind=target_kind,
        branch_widths=(width,) * branch_depth,
        trunk_widths=(width,) * trunk_depth,
        latent_dim=latent,
    )


def match_parameter_counts(reference, target_kind, tolerance=0.05, max_width=4096):
    """Find a ``target_kind`` spec whose parameter count is within ``tolerance`` of ``reference``.

    Hidden widths (all set equal) are scanned upward from 1; the closest
    count inside the tolerance band wins. Depth, latent size, sensor count
    and seed are carried over from the reference where they apply.
    """
    if target_kind not in KINDS:
        raise SpecError(f"unknown model kind {target_kind!r}; valid kinds: {', '.join(KINDS)}")
    target = parameter_count(reference)
    best = None
    best_gap = None
    for width in range(1, max_width + 1):
        try:
            candidate = _template(reference, target_kind, width)
        except SpecError:
            continue
        count = parameter_count(candidate)
        gap = abs(count - target)
        if best_gap is None or gap < best_gap:
            best, best_gap = candidate, gap
        if count > target * (1 + tolerance):
            break
    if best is None or best_gap > tolerance * target:
        closest = parameter_count(best) if best is not None else None
        raise SearchError(
            f"no {target_kind} width within {tolerance:.0%} of {target} parameters; "
            f"closest has {closest}",
            closest=best,
        )
    return best


def checkpoint_bytes(model):
    """Serialize: magic, u32 spec-JSON length, spec JSON, u64 scalar count, little-endian f64 parameters."""
    spec_json = model.spec.to_json().encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", len(spec_json)))
    buf.write(spec_json)
    params = model.parameters()
    buf.write(struct.pack("<Q", sum(p.size for p in params)))
    for p in params:
        buf.write(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return buf.getvalue()


def model_from_bytes(data):
    if data[:8] != CHECKPOINT_MAGIC:
        raise SpecError("not an operon model checkpoint (bad magic)")
    (n_json,) = struct.unpack_from("<I", data, 8)
    spec = ModelSpec.from_dict(json.loads(data[12:12 + n_json].decode()))
    offset = 12 + n_json
    (n_values,) = struct.unpack_from("<Q", data, offset)
    offset += 8
    model = build(spec)
    if n_values != model.parameter_count or len(data) != offset + 8 * n_values:
        raise SpecError("checkpoint parameter block does not match its model spec")
    flat = np.frombuffer(data, dtype="<f8", count=n_values, offset=offset)
    pos = 0
    for p in model.parameters():
        p[...] = flat[pos:pos + p.size].reshape(p.shape)
        pos += p.size
    return model


def save_checkpoint(model, path):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
