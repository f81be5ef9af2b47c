"""Covariance-matrix CNN: architecture, three-stage workflow, persistence.

The network maps an (m, m, 2) covariance feature to a 2-vector of softmax
scores, with score index 0 standing for the reflecting hypothesis (bit 1)
and index 1 for the resting hypothesis (bit 0).

Workflow: ``train_offline`` fits fresh weights on a large SOURCE set drawn
across many channel realizations; ``transfer_finetune`` freezes the conv
stack and adapts only the dense head to one frame's pilot-derived TARGET
set; ``detect`` converts the scores of a block covariance into the bit via
the score-ratio test, with a ratio of exactly 1 resolving to bit 0.
"""
import struct
from dataclasses import dataclass

import numpy as np

from .features import to_feature_tensor
from .nn import Adam, Conv2d, Dense, Dropout, Flatten, MaxPool2, Relu
from .nn.gradcheck import fd_grad, max_relative_error
from .nn.losses import cross_entropy, softmax, softmax_xent_grad

STAGE_FRESH = "fresh"
STAGE_PRETRAINED = "pretrained"
STAGE_TRANSFERRED = "transferred"

SOURCE = "source"
TARGET = "target"


@dataclass(frozen=True)
class CmnetArchitecture:
    """Layer plan: two 3x3 conv layers (32 maps), 2x2 pool, then a dense head."""

    m: int
    conv_channels: int = 32
    ksize: int = 3
    dense_hidden: int = 128
    num_classes: int = 2
    drop1: float = 0.5
    drop2: float = 0.25

    def __post_init__(self):
        if self.m < 4 or self.m % 2 != 0:
            raise ValueError("antenna count m must be even and at least 4 "
                             "(2x2 pooling halves the spatial size)")

    @property
    def flatten_dim(self):
        return self.conv_channels * (self.m // 2) ** 2


@dataclass(frozen=True)
class TrainConfig:
    """Schedule for one training stage."""

    epochs: int
    batch_size: int
    lr: float

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("invalid training configuration")


def offline_defaults():
    """Default offline schedule: 10 epochs, batch 128, lr 1e-3."""
    return TrainConfig(epochs=10, batch_size=128, lr=1e-3)


def transfer_defaults():
    """Default fine-tune schedule: 50 epochs, batch 64, lr 1e-4."""
    return TrainConfig(epochs=50, batch_size=64, lr=1e-4)


@dataclass(frozen=True)
class TrainReport:
    epoch_losses: tuple
    final_loss: float


@dataclass
class LabeledCovarianceSet:
    """Covariance features (k, m, m, 2) with bit labels (k,) and a domain tag.

    SOURCE sets (offline corpus) must be label-balanced within 1%; TARGET
    sets inherit whatever the pilot pattern provides.
    """

    features: np.ndarray
    labels: np.ndarray
    domain: str
    ident: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features)
        self.labels = np.asarray(self.labels)
        if self.features.ndim != 4 or self.features.shape[3] != 2:
            raise ValueError("features must be (k, m, m, 2)")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must be (k,)")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0/1 valued")
        if self.domain not in (SOURCE, TARGET):
            raise ValueError("domain must be SOURCE or TARGET")
        if self.domain == SOURCE and len(self) > 0:
            balance = self.labels.mean()
            if abs(balance - 0.5) > 0.005:
                raise ValueError(f"SOURCE labels unbalanced: mean {balance:.4f}")

    def __len__(self):
        return self.features.shape[0]


def labels_to_onehot(labels, dtype=np.float32):
    """Bit labels to one-hot rows: 1 -> [1, 0], 0 -> [0, 1]."""
    labels = np.asarray(labels).astype(int)
    onehot = np.zeros((labels.shape[0], 2), dtype=dtype)
    onehot[np.arange(labels.shape[0]), 1 - labels] = 1
    return onehot


class CmnetModel:
    """The network plus its stage, freeze state, and provenance record."""

    def __init__(self, m, dtype=np.float32, rng=None, seed=None):
        self.arch = CmnetArchitecture(m=m)
        self.dtype = np.dtype(dtype)
        ch = self.arch.conv_channels
        k = self.arch.ksize
        self.c1 = Conv2d(2, ch, k, dtype=dtype, rng=rng)
        self.c2 = Conv2d(ch, ch, k, dtype=dtype, rng=rng)
        self.f1 = Dense(self.arch.flatten_dim, self.arch.dense_hidden,
                        dtype=dtype, rng=rng)
        self.f2 = Dense(self.arch.dense_hidden, self.arch.num_classes,
                        dtype=dtype, rng=rng)
        self.prefix_layers = [self.c1, Relu(), self.c2, Relu(), MaxPool2(), Flatten()]
        self.head_layers = [Dropout(self.arch.drop1), self.f1, Relu(),
                            Dropout(self.arch.drop2), self.f2]
        self.layers = self.prefix_layers + self.head_layers
        self.stage = STAGE_FRESH
        self.seed = seed
        self.provenance = {}

    @property
    def m(self):
        return self.arch.m

    def named_param_layers(self):
        """Parameterized layers in fixed checkpoint order."""
        return (("c1", self.c1), ("c2", self.c2), ("f1", self.f1), ("f2", self.f2))

    def _check_features(self, features):
        features = np.asarray(features)
        if features.ndim == 3:
            features = features[None]
        if features.shape[1:] != (self.m, self.m, 2):
            raise ValueError(f"feature shape {features.shape[1:]} does not "
                             f"match model input ({self.m}, {self.m}, 2)")
        return np.ascontiguousarray(features, dtype=self.dtype)

    def forward_scores(self, features, train=False, rng=None):
        """Softmax scores, (b, 2).  train=True activates dropout."""
        x = self._check_features(features)
        for layer in self.layers:
            x = layer.forward(x, train=train, rng=rng)
        return softmax(x)

    def backward_from_scores(self, scores, onehot):
        """Populate parameter gradients for the batch cross-entropy cost."""
        g = softmax_xent_grad(scores, onehot).astype(self.dtype, copy=False)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def prefix_forward(self, features):
        """Conv-stack output (deterministic, so safe to cache under freezing)."""
        x = self._check_features(features)
        for layer in self.prefix_layers:
            x = layer.forward(x, train=False)
        return x

    def head_scores(self, flat, train=False, rng=None):
        x = flat
        for layer in self.head_layers:
            x = layer.forward(x, train=train, rng=rng)
        return softmax(x)

    def head_backward_from_scores(self, scores, onehot):
        g = softmax_xent_grad(scores, onehot).astype(self.dtype, copy=False)
        for layer in reversed(self.head_layers):
            g = layer.backward(g)
        return g

    def freeze_conv(self):
        self.c1.trainable = False
        self.c2.trainable = False

    @property
    def freeze_mask(self):
        """Map layer name -> True when the layer's parameters are frozen."""
        return {name: not layer.trainable for name, layer in self.named_param_layers()}

    def clone(self):
        """Independent copy with identical parameters, stage and provenance."""
        out = CmnetModel(self.m, dtype=self.dtype, seed=self.seed)
        for (_, src), (_, dst) in zip(self.named_param_layers(),
                                      out.named_param_layers()):
            dst.w = src.w.copy()
            dst.b = src.b.copy()
            dst.trainable = src.trainable
        out.stage = self.stage
        out.provenance = dict(self.provenance)
        return out


def build_cmnet(m, rng, dtype=np.float32, seed=None):
    """Fresh model with Kaiming-initialized weights and zero biases."""
    return CmnetModel(m, dtype=dtype, rng=rng, seed=seed)


def forward(model, feature):
    """Score 2-vector of a single (m, m, 2) feature in EVAL mode."""
    return model.forward_scores(feature)[0]


def evaluate_loss(model, data):
    """Cross-entropy of the model on a labeled set, EVAL mode."""
    scores = model.forward_scores(data.features)
    return cross_entropy(scores, labels_to_onehot(data.labels, dtype=scores.dtype))


def evaluate_accuracy(model, data):
    """Fraction of the labeled set classified correctly, EVAL mode."""
    scores = model.forward_scores(data.features)
    decided = (scores[:, 0] > scores[:, 1]).astype(int)
    return float((decided == data.labels).mean())


def _minibatch_indices(rng, count, batch_size):
    perm = rng.permutation(count)
    for start in range(0, count, batch_size):
        yield perm[start:start + batch_size]


def train_offline(model, data, cfg, rng):
    """Fit a fresh model on a SOURCE set by minibatch Adam; stage PRETRAINED."""
    if model.stage != STAGE_FRESH:
        raise ValueError(f"train_offline expects a fresh model, got {model.stage}")
    if data.domain != SOURCE:
        raise ValueError("offline training expects a SOURCE set")
    if len(data) == 0:
        raise ValueError("offline training set is empty")
    features = model._check_features(data.features)
    onehot = labels_to_onehot(data.labels, dtype=model.dtype)
    adam = Adam(model.layers, lr=cfg.lr)
    epoch_losses = []
    for _ in range(cfg.epochs):
        total = 0.0
        for idx in _minibatch_indices(rng, len(data), cfg.batch_size):
            scores = model.forward_scores(features[idx], train=True, rng=rng)
            total += cross_entropy(scores, onehot[idx]) * idx.size
            model.backward_from_scores(scores, onehot[idx])
            adam.step()
        epoch_losses.append(total / len(data))
    model.stage = STAGE_PRETRAINED
    final = epoch_losses[-1] if epoch_losses else evaluate_loss(model, data)
    model.provenance.update({
        "offline_dataset": data.ident,
        "offline_loss": repr(float(final)),
    })
    return TrainReport(epoch_losses=tuple(epoch_losses), final_loss=float(final))


def transfer_finetune(model, pilots, cfg, rng):
    """Freeze the conv stack and fine-tune the dense head on a TARGET set.

    The frozen conv output of every target feature is computed once and
    reused across epochs, which leaves the trained function identical while
    removing the dominant per-step cost.
    """
    if model.stage != STAGE_PRETRAINED:
        raise ValueError(f"transfer_finetune expects stage {STAGE_PRETRAINED!r}, "
                         f"got {model.stage!r}")
    if pilots.domain != TARGET:
        raise ValueError("transfer fine-tuning expects a TARGET set")
    if len(pilots) == 0:
        raise ValueError("target set is empty")
    model.freeze_conv()
    flat = model.prefix_forward(pilots.features)
    onehot = labels_to_onehot(pilots.labels, dtype=model.dtype)
    adam = Adam(model.head_layers, lr=cfg.lr)
    epoch_losses = []
    for _ in range(cfg.epochs):
        total = 0.0
        for idx in _minibatch_indices(rng, len(pilots), cfg.batch_size):
            scores = model.head_scores(flat[idx], train=True, rng=rng)
            total += cross_entropy(scores, onehot[idx]) * idx.size
            model.head_backward_from_scores(scores, onehot[idx])
            adam.step()
        epoch_losses.append(total / len(pilots))
    model.stage = STAGE_TRANSFERRED
    final = epoch_losses[-1] if epoch_losses else evaluate_loss(model, pilots)
    model.provenance.update({
        "target_dataset": pilots.ident,
        "transfer_loss": repr(float(final)),
    })
    return TrainReport(epoch_losses=tuple(epoch_losses), final_loss=float(final))


def detect(model, r):
    """Tag bit and score ratio for one sample covariance (or feature tensor).

    c = 1 iff score(H1)/score(H0) > 1; a ratio of exactly 1 gives c = 0.
    """
    r = np.asarray(r)
    feature = r if (r.ndim == 3 and r.shape[2] == 2) else to_feature_tensor(r)
    scores = model.forward_scores(feature)[0]
    with np.errstate(divide="ignore"):
        ratio = float(scores[0] / scores[1]) if scores[1] != scores[0] else 1.0
    return int(scores[0] > scores[1]), ratio


def detect_batch(model, features):
    """Vectorized detect over (b, m, m, 2) features; returns the bit array."""
    scores = model.forward_scores(features)
    return (scores[:, 0] > scores[:, 1]).astype(int)


# --- gradient checking -----------------------------------------------------

def gradcheck(model, features, labels, step=1e-6):
    """Max relative error between analytic and central-FD gradients, per tensor.

    Runs in EVAL mode (dropout is the identity) on a float64 model.  Dense
    parameters are checked through the cached conv output, which is exact
    because they cannot influence the frozen prefix computation.

    The step is kept small because the loss has ReLU and max-pool kinks: a
    perturbation of a shared conv weight shifts thousands of preactivations,
    and any one of them crossing a kink inside the step corrupts that finite
    difference.  At 1e-6 a crossing needs a preactivation within ~1e-6 of
    zero (vanishingly rare) while float64 FD noise stays near 1e-9.
    """
    if model.dtype != np.float64:
        raise TypeError("gradcheck needs a float64 model")
    features = model._check_features(features)
    onehot = labels_to_onehot(labels, dtype=np.float64)

    scores = model.forward_scores(features)
    model.backward_from_scores(scores, onehot)
    analytic = {f"{name}.{pname}": layer.grads()[pname].copy()
                for name, layer in model.named_param_layers()
                for pname in ("w", "b")}

    def full_loss():
        return cross_entropy(model.forward_scores(features), onehot)

    flat = model.prefix_forward(features)

    def head_loss():
        return cross_entropy(model.head_scores(flat), onehot)

    if abs(full_loss() - head_loss()) > 1e-12:
        raise AssertionError("prefix cache does not reproduce the full loss")

    errors = {}
    for name, layer in model.named_param_layers():
        loss_fn = head_loss if name in ("f1", "f2") else full_loss
        for pname in ("w", "b"):
            fd = fd_grad(loss_fn, layer.params()[pname], step=step)
            errors[f"{name}.{pname}"] = max_relative_error(
                fd, analytic[f"{name}.{pname}"])
    return errors


# --- checkpoint persistence -------------------------------------------------

CHECKPOINT_MAGIC = b"CMNETCK\x00"
CHECKPOINT_VERSION = 1

_STAGE_CODES = {STAGE_FRESH: 0, STAGE_PRETRAINED: 1, STAGE_TRANSFERRED: 2}
_STAGE_NAMES = {v: k for k, v in _STAGE_CODES.items()}


class CheckpointError(Exception):
    """Base error for checkpoint I/O."""


class CheckpointFormatError(CheckpointError):
    """Bad magic, malformed structure, or trailing bytes."""


class CheckpointVersionError(CheckpointError):
    """Unsupported format version."""


class CheckpointTruncatedError(CheckpointError):
    """File ends in the middle of a declared field."""


class CheckpointShapeError(CheckpointError):
    """Stored tensor shapes do not match the declared architecture."""


def checkpoint_bytes(model):
    """Serialize parameters (as float32), stage, seed, freeze mask, provenance."""
    chunks = [CHECKPOINT_MAGIC, struct.pack("<HHBB", CHECKPOINT_VERSION,
                                            model.m,
                                            _STAGE_CODES[model.stage], 0)]
    seed = -1 if model.seed is None else int(model.seed)
    chunks.append(struct.pack("<q", seed))
    prov = sorted(model.provenance.items())
    chunks.append(struct.pack("<H", len(prov)))
    for key, value in prov:
        for text in (key, value):
            raw = str(text).encode("utf-8")
            chunks.append(struct.pack("<H", len(raw)))
            chunks.append(raw)
    named = model.named_param_layers()
    chunks.append(struct.pack("<H", len(named)))
    for name, layer in named:
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        params = layer.params()
        chunks.append(struct.pack("<BB", int(layer.trainable), len(params)))
        for pname, p in params.items():
            rawp = pname.encode("utf-8")
            chunks.append(struct.pack("<H", len(rawp)))
            chunks.append(rawp)
            data = np.ascontiguousarray(p, dtype="<f4")
            chunks.append(struct.pack("<B", data.ndim))
            chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
            payload = data.tobytes()
            chunks.append(struct.pack("<Q", len(payload)))
            chunks.append(payload)
    return b"".join(chunks)


def save_checkpoint(model, path):
    """Write the model checkpoint to a file."""
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointTruncatedError(
                f"needed {n} bytes at offset {self.pos}, file has {len(self.data)}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def text(self):
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")

    def done(self):
        return self.pos == len(self.data)


def model_from_bytes(data):
    """Rebuild a model from checkpoint bytes; strict about every length field."""
    reader = _Reader(data)
    if reader.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CheckpointFormatError("bad magic bytes")
    version, m, stage_code, _reserved = reader.unpack("<HHBB")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"unsupported version {version}")
    if stage_code not in _STAGE_NAMES:
        raise CheckpointFormatError(f"unknown stage code {stage_code}")
    (seed,) = reader.unpack("<q")
    (nprov,) = reader.unpack("<H")
    provenance = {}
    for _ in range(nprov):
        key = reader.text()
        provenance[key] = reader.text()

    try:
        model = CmnetModel(m, dtype=np.float32, seed=None if seed < 0 else seed)
    except ValueError as exc:
        raise CheckpointFormatError(f"invalid antenna count {m}") from exc
    expected = model.named_param_layers()
    (nlayers,) = reader.unpack("<H")
    if nlayers != len(expected):
        raise CheckpointFormatError(
            f"expected {len(expected)} parameter layers, file has {nlayers}")
    for name, layer in expected:
        stored_name = reader.text()
        if stored_name != name:
            raise CheckpointFormatError(
                f"layer order mismatch: expected {name!r}, found {stored_name!r}")
        trainable, nparams = reader.unpack("<BB")
        params = layer.params()
        if nparams != len(params):
            raise CheckpointFormatError(
                f"layer {name!r}: expected {len(params)} tensors, file has {nparams}")
        for pname, p in params.items():
            stored_pname = reader.text()
            if stored_pname != pname:
                raise CheckpointFormatError(
                    f"layer {name!r}: expected tensor {pname!r}, "
                    f"found {stored_pname!r}")
            (ndim,) = reader.unpack("<B")
            shape = tuple(reader.unpack(f"<{ndim}I"))
            if shape != p.shape:
                raise CheckpointShapeError(
                    f"{name}.{pname}: stored shape {shape}, model needs {p.shape}")
            (nbytes,) = reader.unpack("<Q")
            if nbytes != p.size * 4:
                raise CheckpointFormatError(
                    f"{name}.{pname}: payload length {nbytes} does not match shape")
            arr = np.frombuffer(reader.take(nbytes), dtype="<f4").reshape(shape)
            setattr(layer, pname, arr.copy())
        layer.trainable = bool(trainable)
    if not reader.done():
        raise CheckpointFormatError(
            f"{len(reader.data) - reader.pos} trailing bytes after checkpoint body")
    model.stage = _STAGE_NAMES[stage_code]
    model.provenance = provenance
    return model


def load_checkpoint(path):
    """Read a model checkpoint from a file."""
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
