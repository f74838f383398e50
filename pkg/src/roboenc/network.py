"""Small configurable classifiers with pluggable output heads.

A model is an ordered stack of dense / conv2d / relu / flatten / dropout
layers followed by one of four heads:

  onehot_ce        softmax + cross-entropy over one-hot targets
  codebook_mse     mean squared error to a scaled orthogonal codebook row
  codebook_softmax cross-entropy over cosine logits against unit rows
  onehot_mse       mean squared error to the one-hot vector itself

Classification is argmax of the softmax for one-hot heads and
nearest-row-by-MSE for codebook heads, ties broken toward the lowest
class index.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .codebook import Codebook
from .errors import ContractError, FormatError, NumericError, ShapeError
from .seeding import rng
from .tensor import Tensor

_MAGIC = b"ROMD"
_VERSION = 1

HEAD_VARIANTS = ("onehot_ce", "codebook_mse", "codebook_softmax", "onehot_mse")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("dense", "conv2d", "relu", "flatten", "dropout"):
            raise ContractError(f"unknown layer kind {self.kind!r}")


def dense(n_in: int, n_out: int) -> LayerSpec:
    return LayerSpec("dense", {"in": n_in, "out": n_out})


def conv2d(in_ch: int, out_ch: int, kernel: int, stride: int = 1) -> LayerSpec:
    return LayerSpec("conv2d", {"in_ch": in_ch, "out_ch": out_ch, "kernel": kernel, "stride": stride})


def relu() -> LayerSpec:
    return LayerSpec("relu")


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def dropout(p: float) -> LayerSpec:
    if not 0.0 <= p < 1.0:
        raise ContractError("dropout probability must be in [0, 1)")
    return LayerSpec("dropout", {"p": p})


@dataclass(frozen=True)
class Head:
    variant: str
    k: int
    codebook: Codebook | None = None

    def __post_init__(self):
        if self.variant not in HEAD_VARIANTS:
            raise ContractError(f"unknown head variant {self.variant!r}")
        if self.variant.startswith("codebook"):
            if self.codebook is None:
                raise ContractError(f"{self.variant} head needs a codebook")
            self.codebook.validate()
            if self.codebook.k != self.k:
                raise ContractError("codebook class count does not match head")

    @property
    def width(self) -> int:
        """Output width the final layer must produce."""
        if self.variant.startswith("codebook"):
            return self.codebook.l
        return self.k


def _infer_shapes(layers, input_shape):
    """Walk the stack symbolically; raises ShapeError on any mismatch."""
    shape = tuple(input_shape)
    shapes = [shape]
    for idx, spec in enumerate(layers):
        if spec.kind == "dense":
            if len(shape) != 1 or shape[0] != spec.params["in"]:
                raise ShapeError(f"layer {idx}: dense expects ({spec.params['in']},), got {shape}")
            shape = (spec.params["out"],)
        elif spec.kind == "conv2d":
            if len(shape) != 3 or shape[0] != spec.params["in_ch"]:
                raise ShapeError(f"layer {idx}: conv2d expects {spec.params['in_ch']} channels, got {shape}")
            c, h, w = shape
            k, s = spec.params["kernel"], spec.params["stride"]
            if k > h or k > w:
                raise ShapeError(f"layer {idx}: kernel {k} exceeds input {h}x{w}")
            shape = (spec.params["out_ch"], (h - k) // s + 1, (w - k) // s + 1)
        elif spec.kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif spec.kind == "dropout":
            nxt = layers[idx + 1] if idx + 1 < len(layers) else None
            if nxt is None or nxt.kind != "dense":
                raise ContractError(f"layer {idx}: dropout must immediately precede a dense layer")
        shapes.append(shape)
    return shapes


class Model:
    """Layer stack with weights, a head, and the seed that initialized it."""

    def __init__(self, layers, head: Head, input_shape, seed: int = 0):
        self.layers = list(layers)
        self.head = head
        self.input_shape = tuple(input_shape)
        self.seed = seed
        self.shapes = _infer_shapes(self.layers, self.input_shape)
        out = self.shapes[-1]
        if out != (head.width,):
            raise ShapeError(f"stack produces {out}, head needs ({head.width},)")
        self.weights = []       # per layer: {'w': Tensor, 'b': Tensor} or None
        self.trainable = []     # per layer: bool, only meaningful for weighted layers
        for idx, spec in enumerate(self.layers):
            gen = rng(seed, "init", idx)
            if spec.kind == "dense":
                fan_in = spec.params["in"]
                bound = np.sqrt(6.0 / fan_in)
                w = gen.uniform(-bound, bound, size=(spec.params["in"], spec.params["out"]))
                b = np.zeros(spec.params["out"])
                self.weights.append({"w": Tensor(w, requires_grad=True), "b": Tensor(b, requires_grad=True)})
            elif spec.kind == "conv2d":
                p = spec.params
                fan_in = p["in_ch"] * p["kernel"] ** 2
                bound = np.sqrt(6.0 / fan_in)
                w = gen.uniform(-bound, bound, size=(p["out_ch"], p["in_ch"], p["kernel"], p["kernel"]))
                b = np.zeros(p["out_ch"])
                self.weights.append({"w": Tensor(w, requires_grad=True), "b": Tensor(b, requires_grad=True)})
            else:
                self.weights.append(None)
            self.trainable.append(self.weights[idx] is not None)

    def parameters(self):
        """(layer_idx, name, tensor) triples for trainable layers only."""
        out = []
        for idx, slot in enumerate(self.weights):
            if slot is not None and self.trainable[idx]:
                for name in ("w", "b"):
                    out.append((idx, name, slot[name]))
        return out

    def all_weights(self):
        out = []
        for idx, slot in enumerate(self.weights):
            if slot is not None:
                for name in ("w", "b"):
                    out.append((idx, name, slot[name]))
        return out

    def set_weight(self, idx: int, name: str, value: np.ndarray):
        self.weights[idx][name] = Tensor(value, requires_grad=True)

    def conv_tags(self):
        """Activation tags in order: conv1, conv2, ... for each conv layer."""
        tags = []
        n = 0
        for spec in self.layers:
            if spec.kind == "conv2d":
                n += 1
                tags.append(f"conv{n}")
        return tags


def forward(model: Model, x: Tensor, train_mode: bool = False, seed: int = 0,
            capture: bool = False):
    """Run the stack on a batch, returning the final activation s.

    x is (N, *input_shape). Dropout draws its masks from streams derived
    from `seed`, so a fixed seed reproduces masks exactly; in eval mode
    dropout is the identity. With capture=True, returns (s, activations)
    where activations maps 'input', 'conv1', ... to graph tensors.
    """
    if x.shape[1:] != model.input_shape:
        raise ShapeError(f"input {x.shape[1:]} does not match model input {model.input_shape}")
    n = x.shape[0]
    acts = {"input": x}
    h = x
    conv_seen = 0
    for idx, spec in enumerate(model.layers):
        if spec.kind == "dense":
            slot = model.weights[idx]
            h = T.add(T.matmul(h, slot["w"]), slot["b"])
        elif spec.kind == "conv2d":
            slot = model.weights[idx]
            h = T.conv2d(h, slot["w"], stride=spec.params["stride"])
            h = T.add(h, T.reshape(slot["b"], (1, spec.params["out_ch"], 1, 1)))
            conv_seen += 1
            acts[f"conv{conv_seen}"] = h
        elif spec.kind == "relu":
            h = T.relu(h)
        elif spec.kind == "flatten":
            h = T.reshape(h, (n, int(np.prod(h.shape[1:]))))
        elif spec.kind == "dropout":
            if train_mode:
                p = spec.params["p"]
                gen = rng(seed, "dropout", idx)
                mask = (gen.random(h.shape) >= p) / (1.0 - p)
                h = T.mul(h, Tensor(mask))
    if capture:
        return h, acts
    return h


def _as_batch(s: Tensor):
    if len(s.shape) == 1:
        return T.reshape(s, (1, s.shape[0])), True
    if len(s.shape) == 2:
        return s, False
    raise ShapeError(f"head input must be 1-d or 2-d, got {s.shape}")


def _labels_array(t, n: int, k: int) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(t, dtype=np.int64))
    if arr.shape != (n,):
        raise ContractError(f"labels shape {arr.shape} does not match batch {n}")
    if np.any(arr < 0) or np.any(arr >= k):
        raise ContractError("class index out of range")
    return arr


def per_example_loss(head: Head, s: Tensor, t) -> Tensor:
    """Length-N tensor of losses; stays on the graph for backward."""
    s2, _ = _as_batch(s)
    if not np.all(np.isfinite(s2.data)):
        raise NumericError("non-finite head input")
    n = s2.shape[0]
    labels = _labels_array(t, n, head.k)

    if head.variant == "onehot_ce":
        onehot = np.zeros((n, head.k))
        onehot[np.arange(n), labels] = 1.0
        return T.neg(T.tsum(T.mul(T.log_softmax(s2), Tensor(onehot)), axis=1))

    if head.variant == "onehot_mse":
        onehot = np.zeros((n, head.k))
        onehot[np.arange(n), labels] = 1.0
        return T.tmean(T.square(T.sub(s2, Tensor(onehot))), axis=1)

    if head.variant == "codebook_mse":
        targets = head.codebook.rows[labels]
        return T.tmean(T.square(T.sub(s2, Tensor(targets))), axis=1)

    # codebook_softmax: cross-entropy over <normalized s, unit rows>
    sq = T.tsum(T.square(s2), axis=1, keepdims=True)
    shat = T.mul(s2, T.powi(sq, -0.5))
    logits = T.matmul(shat, Tensor(head.codebook.unit_rows().T))
    onehot = np.zeros((n, head.k))
    onehot[np.arange(n), labels] = 1.0
    return T.neg(T.tsum(T.mul(T.log_softmax(logits), Tensor(onehot)), axis=1))


def loss(head: Head, s: Tensor, t) -> Tensor:
    """Scalar loss: the per-example loss averaged across the batch."""
    return T.tmean(per_example_loss(head, s, t))


def head_distances(head: Head, s_data: np.ndarray) -> np.ndarray:
    """(N, k) decision scores: lower is closer for codebook heads."""
    s2 = np.atleast_2d(s_data)
    if head.variant in ("onehot_ce", "codebook_softmax"):
        if head.variant == "onehot_ce":
            logits = s2
        else:
            norms = np.maximum(np.linalg.norm(s2, axis=1, keepdims=True), 1e-300)
            logits = (s2 / norms) @ head.codebook.unit_rows().T
        return -logits
    if head.variant == "onehot_mse":
        targets = np.eye(head.k)
    else:
        targets = head.codebook.rows
    diff = s2[:, None, :] - targets[None, :, :]
    return np.mean(diff * diff, axis=2)


def classify(head: Head, s) -> np.ndarray:
    """Predicted class per example; ties resolve to the lowest index."""
    s_data = s.data if isinstance(s, Tensor) else np.asarray(s, dtype=np.float64)
    if not np.all(np.isfinite(s_data)):
        raise NumericError("non-finite head input")
    d = head_distances(head, s_data)
    return np.argmin(d, axis=1)


def predict(model: Model, x: Tensor) -> np.ndarray:
    return classify(model.head, forward(model, x, train_mode=False))


def accuracy(model: Model, x: Tensor, labels) -> float:
    pred = predict(model, x)
    labels = np.asarray(labels)
    if pred.shape != labels.shape:
        raise ContractError("prediction/label length mismatch")
    return float(np.mean(pred == labels))


def input_gradient(model: Model, x: Tensor, t) -> Tensor:
    """Gradient of the summed batch loss with respect to the input pixels.

    Summing (not averaging) over the batch keeps each example's gradient
    identical to a per-example run, since examples do not interact.
    """
    x_in = Tensor(x.data, requires_grad=True)
    s = forward(model, x_in, train_mode=False)
    total = T.tsum(per_example_loss(model.head, s, t))
    return T.backward(total).get(x_in)


def head_gradient_check(head: Head, s, t) -> float:
    """Max deviation between the analytic softmax-CE gradient (y - t)
    and the autodiff gradient of the loss at s. Only defined for the
    one-hot cross-entropy head."""
    if head.variant != "onehot_ce":
        raise ContractError("analytic gradient identity applies to the onehot_ce head")
    s_t = Tensor(np.atleast_2d(np.asarray(s, dtype=np.float64)), requires_grad=True)
    n = s_t.shape[0]
    labels = _labels_array(t, n, head.k)
    total = T.tsum(per_example_loss(head, s_t, labels))
    auto = T.backward(total).get(s_t).data
    y = T.softmax(Tensor(s_t.data)).data
    onehot = np.zeros((n, head.k))
    onehot[np.arange(n), labels] = 1.0
    analytic = y - onehot
    return float(np.max(np.abs(analytic - auto)))


# ---------------------------------------------------------------------------
# presets


def net_a(input_shape, out_width: int):
    """Two strided 5x5 convolutions into a dropout-guarded dense output."""
    c = input_shape[0]
    stack = [conv2d(c, 8, 5, 2), relu(), conv2d(8, 16, 5, 2), relu(), flatten()]
    flat = _infer_shapes(stack, input_shape)[-1][0]
    return stack + [dropout(0.5), dense(flat, out_width)]


def net_c(input_shape, out_width: int):
    """Deeper all-dense variant."""
    flat = int(np.prod(input_shape))
    return [
        flatten(),
        dense(flat, 128), relu(),
        dense(128, 64), relu(),
        dropout(0.5),
        dense(64, out_width),
    ]


PRESETS = {"net-a": net_a, "net-c": net_c}


def build_model(preset: str, input_shape, head: Head, seed: int = 0) -> Model:
    try:
        builder = PRESETS[preset]
    except KeyError:
        raise ContractError(f"unknown preset {preset!r}") from None
    return Model(builder(input_shape, head.width), head, input_shape, seed=seed)


# ---------------------------------------------------------------------------
# checkpoints


def _layer_to_json(spec: LayerSpec):
    return {"kind": spec.kind, "params": spec.params}


def _layer_from_json(doc) -> LayerSpec:
    return LayerSpec(doc["kind"], dict(doc["params"]))


def save_model(model: Model, path) -> None:
    """Checkpoint: header JSON (architecture, head, codebook meta, seeds)
    followed by raw float64 payloads. Round-trips bit-exactly."""
    header = {
        "layers": [_layer_to_json(s) for s in model.layers],
        "input_shape": list(model.input_shape),
        "seed": model.seed,
        "trainable": list(model.trainable),
        "head": {"variant": model.head.variant, "k": model.head.k},
    }
    cb = model.head.codebook
    if cb is not None:
        header["codebook"] = {"k": cb.k, "l": cb.l, "beta": cb.beta, "seed": cb.seed}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(blob)))
        fh.write(blob)
        if cb is not None:
            fh.write(np.ascontiguousarray(cb.rows, dtype="<f8").tobytes())
        for _, _, tens in model.all_weights():
            fh.write(np.ascontiguousarray(tens.data, dtype="<f8").tobytes())


def load_model(path) -> Model:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != _MAGIC:
        raise FormatError("bad model magic")
    version, hlen = struct.unpack_from("<II", blob, 4)
    if version != _VERSION:
        raise FormatError(f"unsupported model version {version}")
    if len(blob) < 12 + hlen:
        raise FormatError("model file truncated")
    header = json.loads(blob[12:12 + hlen].decode("utf-8"))
    offset = 12 + hlen

    codebook = None
    if "codebook" in header:
        meta = header["codebook"]
        count = meta["k"] * meta["l"] * 8
        if len(blob) < offset + count:
            raise FormatError("model file truncated in codebook payload")
        rows = np.frombuffer(blob, dtype="<f8", count=meta["k"] * meta["l"], offset=offset)
        rows = rows.reshape(meta["k"], meta["l"]).astype(np.float64)
        codebook = Codebook(k=meta["k"], l=meta["l"], beta=meta["beta"], rows=rows, seed=meta["seed"])
        offset += count

    head = Head(header["head"]["variant"], header["head"]["k"], codebook)
    layers = [_layer_from_json(d) for d in header["layers"]]
    model = Model(layers, head, tuple(header["input_shape"]), seed=header["seed"])
    model.trainable = [bool(v) for v in header["trainable"]]

    for idx, name, tens in model.all_weights():
        count = tens.data.size
        if len(blob) < offset + count * 8:
            raise FormatError("model file truncated in weight payload")
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(tens.shape)
        model.set_weight(idx, name, arr.astype(np.float64))
        offset += count * 8
    if offset != len(blob):
        raise FormatError("trailing bytes after model payload")
    return model
