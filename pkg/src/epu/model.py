"""Additive ensemble of per-feature-map CNN sub-networks.

Each perceptual feature map feeds its own small CNN whose tanh head emits a
relative similarity score in [-1, 1]. The binary prediction is
sigmoid(beta + sum of scores); in multiclass mode each head emits one value
per class and the summed vector goes through softmax. The additive structure
makes every sub-network's contribution directly readable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError
from .pfm import PFM_LABELS, PfmStack
from .tensor import Param, Tensor


@dataclass(frozen=True)
class ArchConfig:
    """Sub-network topology: conv blocks, then a dense feature layer."""

    blocks: tuple = ((2, 8), (2, 16), (3, 32))
    kernel_size: int = 3
    fc_width: int = 32
    input_side: int = 64
    preset: str = ""

    def __post_init__(self):
        if not self.blocks:
            raise ConfigError("arch needs at least one conv block")
        for pair in self.blocks:
            if len(pair) != 2 or pair[0] < 1 or pair[1] < 1:
                raise ConfigError(f"bad block spec {pair}; want (conv_count, depth) positive")
        if self.kernel_size < 3 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd and >= 3, got {self.kernel_size}")
        if self.fc_width < 1:
            raise ConfigError(f"fc_width must be >= 1, got {self.fc_width}")
        if self.input_side < 8:
            raise ConfigError(f"input_side must be >= 8, got {self.input_side}")

    @property
    def conv_layer_count(self) -> int:
        return sum(count for count, _ in self.blocks)


PRESETS = {
    "desk": ArchConfig(
        blocks=((2, 8), (2, 16), (3, 32)), kernel_size=3, fc_width=32, input_side=64, preset="desk"
    ),
    "base_i": ArchConfig(
        blocks=((2, 64), (2, 128), (3, 256)),
        kernel_size=3,
        fc_width=128,
        input_side=128,
        preset="base_i",
    ),
}


@dataclass
class RssVector:
    """Per-feature similarity scores, one per perceptual map."""

    values: np.ndarray
    pfm_labels: tuple

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or len(self.values) != len(self.pfm_labels):
            raise DimensionError("RssVector needs one value per label")


@dataclass
class Prediction:
    """Model output plus the additive evidence behind it.

    Binary: probability is a float and rss an RssVector. Multiclass:
    probability is the class distribution and rss the (n_pfms, n_classes)
    pre-softmax contribution matrix.
    """

    probability: object
    rss: object
    label: int
    beta: np.ndarray = field(default_factory=lambda: np.zeros(1))


class _BnState:
    """Scale/shift params plus running stats for one batchnorm layer."""

    def __init__(self, prefix: str, channels: int):
        self.gamma = Param(f"{prefix}.gamma", Tensor(np.ones(channels, np.float32), requires_grad=True))
        self.beta = Param(f"{prefix}.beta", Tensor(np.zeros(channels, np.float32), requires_grad=True))
        self.running_mean = np.zeros(channels, np.float32)
        self.running_var = np.ones(channels, np.float32)
        self.prefix = prefix


class SubNetwork:
    """One per-PFM CNN: conv blocks with pooling and batchnorm, then dense."""

    def __init__(self, arch: ArchConfig, index: int, head_units: int, rng: np.random.Generator):
        self.arch = arch
        self.index = index
        self.head_units = head_units
        k = arch.kernel_size
        self.pad = k // 2
        name = f"subnet{index}"

        self.conv_kernels: list[Param] = []
        self.bn: list[_BnState] = []
        cin, side = 1, arch.input_side
        for b, (count, depth) in enumerate(arch.blocks):
            for c in range(count):
                kernels = T.kaiming_uniform((depth, cin, k, k), fan_in=cin * k * k, rng=rng)
                self.conv_kernels.append(
                    Param(f"{name}.block{b}.conv{c}.kernels", Tensor(kernels, requires_grad=True))
                )
                cin = depth
            side = math.ceil(side / 2)
            self.bn.append(_BnState(f"{name}.block{b}.bn", depth))
        self.flat_dim = cin * side * side

        fc_w = T.kaiming_uniform((self.flat_dim, arch.fc_width), fan_in=self.flat_dim, rng=rng)
        self.fc_weight = Param(f"{name}.fc.weight", Tensor(fc_w, requires_grad=True))
        self.fc_bias = Param(f"{name}.fc.bias", Tensor(np.zeros(arch.fc_width, np.float32), requires_grad=True))
        head_w = T.kaiming_uniform((arch.fc_width, head_units), fan_in=arch.fc_width, rng=rng)
        self.head_weight = Param(f"{name}.head.weight", Tensor(head_w, requires_grad=True))
        self.head_bias = Param(f"{name}.head.bias", Tensor(np.zeros(head_units, np.float32), requires_grad=True))

        self.cached_activations: list[np.ndarray] | None = None

    def parameters(self) -> list[Param]:
        out: list[Param] = []
        conv_iter = iter(self.conv_kernels)
        for (count, _), bn in zip(self.arch.blocks, self.bn):
            for _ in range(count):
                out.append(next(conv_iter))
            out.extend([bn.gamma, bn.beta])
        out.extend([self.fc_weight, self.fc_bias, self.head_weight, self.head_bias])
        return out

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for bn in self.bn:
            out.append((f"{bn.prefix}.running_mean", bn.running_mean))
            out.append((f"{bn.prefix}.running_var", bn.running_var))
        return out

    def forward(self, x: Tensor, training: bool, cache: bool = False) -> Tensor:
        """Map (B, 1, S, S) input to (B, head_units); tanh head in binary mode."""
        if x.data.ndim != 4 or x.data.shape[2] != self.arch.input_side or x.data.shape[3] != self.arch.input_side:
            raise DimensionError(
                f"subnet expects (B, 1, {self.arch.input_side}, {self.arch.input_side}), got {x.data.shape}"
            )
        acts: list[np.ndarray] | None = [] if cache else None
        h = x
        conv_iter = iter(self.conv_kernels)
        for (count, _), bn in zip(self.arch.blocks, self.bn):
            for _ in range(count):
                h = T.relu(T.conv2d(h, next(conv_iter), stride=1, padding=self.pad))
                if acts is not None:
                    acts.append(h.data)
            h = T.maxpool2d(h, 2)
            h = T.batchnorm2d(h, bn.gamma, bn.beta, bn.running_mean, bn.running_var, training)
        h = T.flatten_batch(h)
        h = T.relu(T.dense(h, self.fc_weight, self.fc_bias))
        out = T.dense(h, self.head_weight, self.head_bias)
        if self.head_units == 1:
            out = T.tanh(out)
        if cache:
            self.cached_activations = acts
        return out


class EpuModel:
    """N sub-networks plus a learnable intercept."""

    def __init__(self, arch, subnets, beta: Param, mode: str, pfm_labels, class_names=None):
        self.arch = arch
        self.subnets = list(subnets)
        self.beta = beta
        self.mode = mode
        self.pfm_labels = tuple(pfm_labels)
        self.class_names = tuple(class_names) if class_names else None

    @property
    def n_pfms(self) -> int:
        return len(self.subnets)

    @property
    def n_classes(self) -> int:
        return self.subnets[0].head_units if self.mode == "multiclass" else 2

    def parameters(self) -> list[Param]:
        out: list[Param] = []
        for sn in self.subnets:
            out.extend(sn.parameters())
        out.append(self.beta)
        names = [p.name for p in out]
        if len(set(names)) != len(names):
            raise ContractError("duplicate parameter names in model")
        return out

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for sn in self.subnets:
            out.extend(sn.buffers())
        return out

    def state_entries(self) -> list[tuple[str, np.ndarray]]:
        """Checkpoint payload order: all params, then all running buffers."""
        return [(p.name, p.tensor.data) for p in self.parameters()] + self.buffers()

    def forward_batch(self, stacks, training: bool, cache: bool = False):
        """Run all sub-networks on (B, N, S, S) stacks.

        Binary mode returns (probabilities (B,), per-subnet score tensors);
        multiclass returns (class distributions (B, n_classes), per-subnet
        logit tensors). Scores sum in sub-network index order.
        """
        data = stacks.maps[None] if isinstance(stacks, PfmStack) else np.asarray(stacks)
        if data.ndim != 4 or data.shape[1] != self.n_pfms:
            raise DimensionError(
                f"expected stacks shaped (B, {self.n_pfms}, S, S), got {data.shape}"
            )
        contribs = []
        for i, sn in enumerate(self.subnets):
            xi = Tensor(np.ascontiguousarray(data[:, i : i + 1]))
            contribs.append(sn.forward(xi, training, cache=cache))
        total = contribs[0]
        for c in contribs[1:]:
            total = T.add(total, c)
        logits = T.add(total, self.beta.tensor)
        if self.mode == "binary":
            prob = T.sigmoid(T.reshape(logits, (data.shape[0],)))
        else:
            prob = T.softmax(logits, axis=-1)
        return prob, contribs


def build_model(
    arch: ArchConfig,
    n_pfms: int = 4,
    mode: str = "binary",
    seed: int = 0,
    n_classes: int | None = None,
    pfm_labels=None,
    class_names=None,
) -> EpuModel:
    """Construct N independently initialized sub-networks and a zero intercept."""
    if n_pfms < 1:
        raise ConfigError(f"n_pfms must be >= 1, got {n_pfms}")
    if mode not in ("binary", "multiclass"):
        raise ConfigError(f"mode must be binary or multiclass, got {mode!r}")
    if mode == "multiclass":
        if n_classes is None or n_classes < 2:
            raise ConfigError("multiclass mode needs n_classes >= 2")
        head_units = n_classes
    else:
        head_units = 1
    if pfm_labels is None:
        pfm_labels = PFM_LABELS if n_pfms == 4 else tuple(f"pfm{i}" for i in range(n_pfms))
    if len(pfm_labels) != n_pfms:
        raise ConfigError(f"need {n_pfms} pfm labels, got {len(pfm_labels)}")

    subnets = [
        SubNetwork(arch, i, head_units, np.random.default_rng([seed, i])) for i in range(n_pfms)
    ]
    beta = Param("beta", Tensor(np.zeros(head_units if mode == "multiclass" else 1, np.float32), requires_grad=True))
    return EpuModel(arch, subnets, beta, mode, pfm_labels, class_names)


def subnet_forward(subnet: SubNetwork, pfm_plane: np.ndarray):
    """Score a single feature-map plane; caches per-conv-layer activations."""
    plane = np.asarray(pfm_plane, dtype=np.float32)
    if plane.ndim != 2:
        raise DimensionError(f"expected a 2-D plane, got shape {plane.shape}")
    with T.no_grad():
        out = subnet.forward(Tensor(plane[None, None]), training=False, cache=True)
    subnet.cached_activations = [a[0] for a in subnet.cached_activations]
    if subnet.head_units == 1:
        return float(out.data[0, 0]), subnet.cached_activations
    return out.data[0].copy(), subnet.cached_activations


def epu_forward(model: EpuModel, stack: PfmStack) -> Prediction:
    """Binary prediction with per-PFM scores; caches activations for maps."""
    if model.mode != "binary":
        raise ContractError("epu_forward requires a binary-mode model")
    if stack.count != model.n_pfms:
        raise DimensionError(f"stack has {stack.count} maps, model expects {model.n_pfms}")
    with T.no_grad():
        prob, contribs = model.forward_batch(stack.maps[None], training=False, cache=True)
    for sn in model.subnets:
        sn.cached_activations = [a[0] for a in sn.cached_activations]
    values = np.array([float(c.data[0, 0]) for c in contribs])
    p = float(prob.data[0])
    return Prediction(
        probability=p,
        rss=RssVector(values, model.pfm_labels),
        label=int(p >= 0.5),
        beta=model.beta.tensor.data.copy(),
    )


def epu_forward_multiclass(model: EpuModel, stack: PfmStack) -> Prediction:
    """Multiclass prediction; rss holds the (n_pfms, n_classes) contributions."""
    if model.mode != "multiclass":
        raise ContractError("epu_forward_multiclass requires a multiclass-mode model")
    if stack.count != model.n_pfms:
        raise DimensionError(f"stack has {stack.count} maps, model expects {model.n_pfms}")
    with T.no_grad():
        dist, contribs = model.forward_batch(stack.maps[None], training=False, cache=True)
    for sn in model.subnets:
        sn.cached_activations = [a[0] for a in sn.cached_activations]
    matrix = np.stack([c.data[0] for c in contribs]).astype(np.float64)
    probs = dist.data[0].copy()
    return Prediction(
        probability=probs,
        rss=matrix,
        label=int(np.argmax(probs)),
        beta=model.beta.tensor.data.copy(),
    )


def multiclass_interp_values(prediction: Prediction) -> np.ndarray:
    """Per-PFM pull toward the predicted class vs the best competing class."""
    matrix = np.asarray(prediction.rss, dtype=np.float64)
    if matrix.ndim != 2:
        raise ContractError("multiclass interpretation needs a contribution matrix")
    label = prediction.label
    others = np.delete(matrix, label, axis=1)
    return matrix[:, label] - others.max(axis=1)
