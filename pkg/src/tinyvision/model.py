"""The fixed tiny CNN and its training engine.

Architecture (square RGB or grayscale input S x S x C):

    conv 3x3 valid, 4 filters, leaky relu -> (S-2) x (S-2) x 4
    maxpool 2x2 stride 2                  -> (S-2)/2 square x 4
    conv 3x3 valid, 8 filters, leaky relu -> pool-2 square x 8
    flatten (row-major y, x, f)           -> N
    dense N x K, softmax                  -> K class probabilities

At the reference input size of 64 the chain is 62x62x4 -> 31x31x4 ->
29x29x8 -> 6728 -> K, giving 112 + 296 + 20,187 = 20,595 parameters for
K = 3. Training is plain softmax cross-entropy under Adam, one optimizer
step per mini-batch, with inverted dropout on the flattened activation.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .ops import ShapeError

DEFAULT_LEARNING_RATE = 0.0003
DEFAULT_BATCH_SIZE = 6
DEFAULT_DROPOUT = 0.3
BRIGHTNESS_JITTER = 0.15   # additive, uniform in +-
CONTRAST_JITTER = 0.15     # multiplicative about the per-image mean, uniform in 1 +-
STATUS_WINDOW = 10         # batch losses averaged for the status label


class EpochMode(enum.Enum):
    USE_ALL_DATA = "all"       # shuffled permutation, every image once per epoch
    RANDOM_BATCH = "random"    # uniform draws with replacement


class TrainingStatus(enum.Enum):
    IMPROVING = "Improving"
    CONVERGING = "Converging"
    WELL_TRAINED = "Well Trained"


def status_label(avg_recent_loss: float) -> TrainingStatus:
    """Label for the mean of the last few batch losses.

    Above 0.7 the model is still improving; 0.15 to 0.7 inclusive counts as
    converging; below 0.15 it is well trained.
    """
    if avg_recent_loss > 0.7:
        return TrainingStatus.IMPROVING
    if avg_recent_loss >= 0.15:
        return TrainingStatus.CONVERGING
    return TrainingStatus.WELL_TRAINED


# ======================================================================
# architecture
# ======================================================================

@dataclass(frozen=True)
class ModelSpec:
    """Dimensions of the fixed architecture for one input configuration."""

    input_size: int
    channels: int = 3
    conv1_filters: int = 4
    conv2_filters: int = 8
    num_classes: int = 3

    def __post_init__(self):
        if self.input_size < 8:
            raise ShapeError(f"input size {self.input_size} leaves no conv2 output")
        if self.channels not in (1, 3):
            raise ShapeError(f"channels must be 1 or 3, got {self.channels}")
        if self.num_classes < 2:
            raise ShapeError(f"need at least 2 classes, got {self.num_classes}")

    @property
    def conv1_out(self) -> int:
        return self.input_size - 2

    @property
    def pool_out(self) -> int:
        return self.conv1_out // 2

    @property
    def conv2_out(self) -> int:
        return self.pool_out - 2

    @property
    def flatten_size(self) -> int:
        return self.conv2_out * self.conv2_out * self.conv2_filters

    def param_counts(self):
        """(conv1, conv2, dense) parameter counts, weights plus biases."""
        c1 = self.conv1_filters * 9 * self.channels + self.conv1_filters
        c2 = self.conv2_filters * 9 * self.conv1_filters + self.conv2_filters
        d = self.flatten_size * self.num_classes + self.num_classes
        return c1, c2, d

    def param_count(self) -> int:
        return sum(self.param_counts())


@dataclass
class ModelWeights:
    """All trainable arrays, float32, in the layouts the engine computes with.

    Conv kernels are filter-major F x 3 x 3 x C; the dense matrix is N x K
    with N indexed by the row-major (y, x, f) flatten of the conv2 activation.
    """

    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    dense_w: np.ndarray
    dense_b: np.ndarray

    FIELDS = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "dense_w", "dense_b")

    def arrays(self):
        return {name: getattr(self, name) for name in self.FIELDS}

    def clone(self) -> "ModelWeights":
        return ModelWeights(**{k: v.copy() for k, v in self.arrays().items()})

    def param_count(self) -> int:
        return sum(int(a.size) for a in self.arrays().values())

    @property
    def spec(self) -> ModelSpec:
        f1, _, _, channels = self.conv1_w.shape
        f2 = self.conv2_w.shape[0]
        num_classes = self.dense_b.shape[0]
        side = int(round((self.dense_w.shape[0] / f2) ** 0.5))
        return ModelSpec(input_size=(side + 2) * 2 + 2, channels=channels,
                         conv1_filters=f1, conv2_filters=f2, num_classes=num_classes)


def build_model(spec: ModelSpec, seed: int = 0) -> ModelWeights:
    """Fresh weights: uniform +-sqrt(6/fan_in) per layer, zero biases."""
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in):
        bound = np.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(np.float32)

    return ModelWeights(
        conv1_w=uniform((spec.conv1_filters, 3, 3, spec.channels), 9 * spec.channels),
        conv1_b=np.zeros(spec.conv1_filters, dtype=np.float32),
        conv2_w=uniform((spec.conv2_filters, 3, 3, spec.conv1_filters), 9 * spec.conv1_filters),
        conv2_b=np.zeros(spec.conv2_filters, dtype=np.float32),
        dense_w=uniform((spec.flatten_size, spec.num_classes), spec.flatten_size),
        dense_b=np.zeros(spec.num_classes, dtype=np.float32),
    )


# ======================================================================
# forward / backward
# ======================================================================

@dataclass
class ForwardCache:
    image: np.ndarray
    z1: np.ndarray
    a1: np.ndarray
    pool_argmax: np.ndarray
    p1: np.ndarray
    z2: np.ndarray
    a2: np.ndarray
    flat: np.ndarray
    drop_mask: np.ndarray | None   # already scaled by 1/(1-rate); None outside training
    dense_in: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


def _check_chain(weights: ModelWeights, image: np.ndarray) -> None:
    """Assert the whole shape chain for this image against the weight arrays."""
    if image.ndim != 3:
        raise ShapeError(f"image must be H x W x C, got {image.shape}")
    H, W, C = image.shape
    if H != W:
        raise ShapeError(f"input must be square, got {H}x{W}")
    if C != weights.conv1_w.shape[3]:
        raise ShapeError(f"image has {C} channels, conv1 expects {weights.conv1_w.shape[3]}")
    side = (H - 2) // 2 - 2
    if side < 1:
        raise ShapeError(f"input {H} too small for the architecture")
    flat = side * side * weights.conv2_w.shape[0]
    if flat != weights.dense_w.shape[0]:
        raise ShapeError(
            f"flatten of {flat} (input {H}) does not match dense rows {weights.dense_w.shape[0]}")


def apply_dropout(flat_activation: np.ndarray, rate: float, rng, training: bool) -> np.ndarray:
    """Inverted dropout on a flat activation; identity outside training."""
    if not training or rate == 0.0:
        return flat_activation
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    return flat_activation * dropout_mask(flat_activation.shape[0], rate, rng)


def dropout_mask(n: int, rate: float, rng) -> np.ndarray:
    """Keep mask pre-scaled by 1/(1-rate) so the expected activation is unchanged."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    keep = (rng.random(n) >= rate).astype(np.float32)
    return keep / np.float32(1.0 - rate)


def forward(weights: ModelWeights, image: np.ndarray, *,
            dropout_rate: float = 0.0, rng=None, training: bool = False):
    """Full forward pass. Returns (probs, cache)."""
    _check_chain(weights, image)
    z1 = ops.conv2d_forward(image, weights.conv1_w, weights.conv1_b)
    a1 = ops.leaky_relu(z1)
    p1, pool_argmax = ops.maxpool2x2(a1)
    z2 = ops.conv2d_forward(p1, weights.conv2_w, weights.conv2_b)
    a2 = ops.leaky_relu(z2)
    flat = a2.reshape(-1)

    drop_mask = None
    dense_in = flat
    if training and dropout_rate > 0.0:
        drop_mask = dropout_mask(flat.shape[0], dropout_rate, rng)
        dense_in = flat * drop_mask

    logits = ops.dense_forward(dense_in, weights.dense_w, weights.dense_b)
    probs = ops.softmax(logits)
    cache = ForwardCache(image=image, z1=z1, a1=a1, pool_argmax=pool_argmax, p1=p1,
                         z2=z2, a2=a2, flat=flat, drop_mask=drop_mask,
                         dense_in=dense_in, logits=logits, probs=probs)
    return probs, cache


def backward(weights: ModelWeights, cache: ForwardCache, grad_logits: np.ndarray) -> dict:
    """Gradients for every weight array, keyed like ModelWeights.FIELDS."""
    d_dense_in, g_dense_w, g_dense_b = ops.dense_backward(
        cache.dense_in, weights.dense_w, grad_logits)
    d_flat = d_dense_in if cache.drop_mask is None else d_dense_in * cache.drop_mask
    d_a2 = d_flat.reshape(cache.a2.shape)
    d_z2 = ops.leaky_relu_backward(cache.z2, d_a2)
    d_p1, g_conv2_w, g_conv2_b = ops.conv2d_backward(cache.p1, weights.conv2_w, d_z2)
    d_a1 = ops.maxpool2x2_backward(d_p1, cache.pool_argmax, cache.a1.shape)
    d_z1 = ops.leaky_relu_backward(cache.z1, d_a1)
    _, g_conv1_w, g_conv1_b = ops.conv2d_backward(cache.image, weights.conv1_w, d_z1)
    return {"conv1_w": g_conv1_w, "conv1_b": g_conv1_b,
            "conv2_w": g_conv2_w, "conv2_b": g_conv2_b,
            "dense_w": g_dense_w, "dense_b": g_dense_b}


def infer(weights: ModelWeights, image: np.ndarray):
    """Dropout-free classification. Returns (class_index, probability).

    Ties resolve to the lowest class index (argmax semantics).
    """
    probs, _ = forward(weights, image)
    idx = int(np.argmax(probs))
    return idx, float(probs[idx])


def confusion_matrix(weights: ModelWeights, dataset) -> np.ndarray:
    """K x K counts, rows = true label, columns = predicted label."""
    k = weights.dense_b.shape[0]
    counts = np.zeros((k, k), dtype=np.int64)
    for item in dataset:
        image, label = _as_pair(item)
        pred, _ = infer(weights, image)
        counts[label, pred] += 1
    return counts


def convergence_epoch(epoch_losses, threshold: float = 0.2,
                      sustain: int = 3):
    """First epoch whose loss stays under threshold for `sustain` epochs.

    Reporting convenience only; the cutoff is a convention, not a property
    of the training algorithm. Returns None if never sustained.
    """
    run = 0
    for i, loss in enumerate(epoch_losses):
        run = run + 1 if loss < threshold else 0
        if run >= sustain:
            return i - sustain + 1
    return None


# ======================================================================
# heatmap
# ======================================================================

def conv2_heatmap(activation: np.ndarray) -> np.ndarray:
    """Collapse an R x C x F conv2 activation to R x C by max over filters."""
    if activation.ndim != 3:
        raise ShapeError(f"activation must be R x C x F, got {activation.shape}")
    return activation.max(axis=2)


def quantize_heatmap(heatmap: np.ndarray) -> np.ndarray:
    """Min-max quantize a 2-D float map to uint8, per frame.

    The frame minimum maps to 0 and the maximum to 255; a constant frame
    quantizes to all zeros.
    """
    if heatmap.ndim != 2:
        raise ShapeError(f"heatmap must be 2-D, got {heatmap.shape}")
    lo = float(heatmap.min())
    hi = float(heatmap.max())
    if hi <= lo:
        return np.zeros(heatmap.shape, dtype=np.uint8)
    scaled = (heatmap.astype(np.float64) - lo) * (255.0 / (hi - lo))
    return np.rint(scaled).astype(np.uint8)


# ======================================================================
# augmentation
# ======================================================================

def photometric(image: np.ndarray, brightness_delta: float, contrast_factor: float) -> np.ndarray:
    """Contrast scaling about the per-image mean, then a brightness shift, clamped to [0, 1]."""
    mean = image.mean(dtype=np.float64)
    out = (image - np.float32(mean)) * np.float32(contrast_factor) \
        + np.float32(mean) + np.float32(brightness_delta)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def augment(image: np.ndarray, rng, *, enabled: bool = True) -> np.ndarray:
    """Random photometric jitter. Disabled, the image passes through untouched."""
    if not enabled:
        return image
    delta = rng.uniform(-BRIGHTNESS_JITTER, BRIGHTNESS_JITTER)
    factor = rng.uniform(1.0 - CONTRAST_JITTER, 1.0 + CONTRAST_JITTER)
    return photometric(image, delta, factor)


# ======================================================================
# training state and engine
# ======================================================================

@dataclass
class TrainState:
    """Everything the stepwise trainer mutates between batches."""

    weights: ModelWeights
    adam: dict
    rng: np.random.Generator
    batch_size: int = DEFAULT_BATCH_SIZE
    dropout_rate: float = DEFAULT_DROPOUT
    mode: EpochMode = EpochMode.USE_ALL_DATA
    batch_counter: int = 0
    epoch_counter: int = 0
    paused: bool = False
    loss_history: deque = field(default_factory=lambda: deque(maxlen=256))
    _perm: np.ndarray | None = None
    _cursor: int = 0

    def pause(self):
        self.paused = True

    def resume(self):
        self.paused = False

    def snapshot_weights(self) -> ModelWeights:
        return self.weights.clone()

    def avg_recent_loss(self) -> float:
        if not self.loss_history:
            return float("inf")
        recent = list(self.loss_history)[-STATUS_WINDOW:]
        return float(np.mean(recent))

    def status(self) -> TrainingStatus:
        if not self.loss_history:
            return TrainingStatus.IMPROVING
        return status_label(self.avg_recent_loss())


def init_train_state(weights: ModelWeights, *, learning_rate: float = DEFAULT_LEARNING_RATE,
                     batch_size: int = DEFAULT_BATCH_SIZE, dropout_rate: float = DEFAULT_DROPOUT,
                     mode: EpochMode = EpochMode.USE_ALL_DATA, seed: int = 0) -> TrainState:
    if learning_rate < 0:
        raise ValueError(f"learning rate must not be negative, got {learning_rate}")
    if batch_size < 1:
        raise ValueError(f"batch size must be at least 1, got {batch_size}")
    adam = {name: ops.AdamState.for_param(arr, lr=learning_rate)
            for name, arr in weights.arrays().items()}
    return TrainState(weights=weights, adam=adam, rng=np.random.default_rng(seed),
                      batch_size=batch_size, dropout_rate=dropout_rate, mode=mode)


def _as_pair(item):
    if isinstance(item, tuple):
        return item
    return item.pixels, item.class_index   # dataset.LabeledImage


def next_batch(state: TrainState, dataset) -> list:
    """Select the next mini-batch of (image, label) pairs from the dataset.

    UseAllData walks a freshly shuffled permutation each epoch so every image
    appears exactly once per epoch; the epoch counter increments when the
    permutation wraps. RandomBatch draws uniformly with replacement, with the
    epoch counter advancing every ceil(N / batch) draws to keep the two modes
    comparable on the dashboard.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("dataset is empty")
    b = state.batch_size

    if state.mode is EpochMode.RANDOM_BATCH:
        idx = state.rng.integers(0, n, size=b)
        batches_per_epoch = -(-n // b)
        if (state.batch_counter + 1) % batches_per_epoch == 0:
            state.epoch_counter += 1
        return [_as_pair(dataset[int(i)]) for i in idx]

    if state._perm is None:
        state._perm = state.rng.permutation(n)
        state._cursor = 0
    idx = state._perm[state._cursor:state._cursor + b]
    state._cursor += b
    if state._cursor >= n:
        state.epoch_counter += 1
        state._perm = state.rng.permutation(n)
        state._cursor = 0
    return [_as_pair(dataset[int(i)]) for i in idx]


def train_batch(state: TrainState, batch) -> float:
    """One optimizer step on gradients averaged over the batch.

    Returns the mean loss. Raises if the engine is paused or the batch is
    empty; a label outside the class range raises IndexError before any
    state is touched for that batch.
    """
    if state.paused:
        raise RuntimeError("training is paused; resume before stepping")
    if len(batch) == 0:
        raise ValueError("empty batch")

    total = {name: np.zeros_like(arr) for name, arr in state.weights.arrays().items()}
    loss_sum = 0.0
    for image, label in batch:
        probs, cache = forward(state.weights, image, dropout_rate=state.dropout_rate,
                               rng=state.rng, training=True)
        loss, grad_logits, _ = ops.softmax_cross_entropy(cache.logits, label)
        grads = backward(state.weights, cache, grad_logits)
        loss_sum += loss
        for name, g in grads.items():
            total[name] += g

    scale = np.float32(1.0 / len(batch))
    for name in ModelWeights.FIELDS:
        new_param, new_adam = ops.adam_step(getattr(state.weights, name),
                                            total[name] * scale, state.adam[name])
        setattr(state.weights, name, new_param)
        state.adam[name] = new_adam

    mean_loss = loss_sum / len(batch)
    state.batch_counter += 1
    state.loss_history.append(mean_loss)
    return mean_loss


@dataclass
class StepResult:
    batch: int
    epoch: int
    loss: float
    avg_recent_loss: float
    status: TrainingStatus


class Trainer:
    """Stepwise driver: one mini-batch per step() so a host loop can interleave
    other work (inference, protocol traffic) between batches."""

    def __init__(self, state: TrainState, dataset, *, augment_enabled: bool = True):
        if len(dataset) == 0:
            raise ValueError("cannot train on an empty dataset")
        self.state = state
        self.dataset = dataset
        self.augment_enabled = augment_enabled
        self.batch_losses: list[float] = []
        self.batch_epochs: list[int] = []

    def step(self) -> StepResult | None:
        """Train one batch; None if paused."""
        st = self.state
        if st.paused:
            return None
        epoch_before = st.epoch_counter
        batch = next_batch(st, self.dataset)
        batch = [(augment(img, st.rng, enabled=self.augment_enabled), label)
                 for img, label in batch]
        loss = train_batch(st, batch)
        self.batch_losses.append(loss)
        self.batch_epochs.append(epoch_before)
        return StepResult(batch=st.batch_counter, epoch=st.epoch_counter, loss=loss,
                          avg_recent_loss=st.avg_recent_loss(), status=st.status())

    def run_epochs(self, epochs: int, callback=None):
        """Run whole epochs (from the current position). Callback sees each StepResult."""
        target = self.state.epoch_counter + epochs
        while self.state.epoch_counter < target:
            result = self.step()
            if result is None:
                break
            if callback is not None:
                callback(result)

    def epoch_losses(self) -> list[float]:
        """Mean batch loss per completed (or current partial) epoch."""
        sums: dict[int, float] = {}
        counts: dict[int, int] = {}
        for loss, epoch in zip(self.batch_losses, self.batch_epochs):
            sums[epoch] = sums.get(epoch, 0.0) + loss
            counts[epoch] = counts.get(epoch, 0) + 1
        return [sums[e] / counts[e] for e in sorted(sums)]

    def pause(self):
        self.state.pause()

    def resume(self):
        self.state.resume()
