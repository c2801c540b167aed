"""Seeded mini-batch training and the binary checkpoint format."""
import json
import logging
import math
import struct
from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .errors import FormatError, IntegrityError, TrainingError, UsageError
from .market_data import NormStats
from .models import ModelConfig, build_model

log = logging.getLogger(__name__)

MAGIC = b"OPNN"
FORMAT_VERSION = 1
DEFAULT_EPOCHS = {"cnn_rnn": 100, "conv_lstm_3c": 200, "conv_lstm_1c": 200, "lstm": 200}


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    batch_size: int = 64
    learning_rate: float = 1e-4
    epochs: int = None  # None: per-model default
    seed: int = 0
    data: str = None
    out: str = None
    n_train_options: int = 600
    min_days: int = 20

    def __post_init__(self):
        if self.model.model == "bs":
            raise UsageError("B-S baseline has no trainable parameters")
        if self.epochs is None:
            object.__setattr__(self, "epochs", DEFAULT_EPOCHS[self.model.model])
        if self.batch_size < 1:
            raise UsageError("batch_size must be >= 1")
        if self.epochs < 1:
            raise UsageError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise UsageError("learning_rate must be positive")

    def hyperparams(self):
        return {
            "batch_size": self.batch_size, "learning_rate": self.learning_rate,
            "epochs": self.epochs, "seed": self.seed,
            "n_train_options": self.n_train_options, "min_days": self.min_days,
        }


@dataclass
class Checkpoint:
    config: dict  # {"model": ModelConfig dict, "train": hyperparameters}
    norm_stats: list
    params: dict  # name -> float64 array, lexicographic order
    version: int = FORMAT_VERSION
    history: list = field(default=None, compare=False)

    @property
    def model_config(self):
        names = {f.name for f in fields(ModelConfig)}
        return ModelConfig(**{k: v for k, v in self.config["model"].items() if k in names})

    def build(self, model_config=None):
        """Instantiate the model and load the stored weights into it."""
        model = build_model(model_config or self.model_config)
        expected = {n: p.shape for n, p in model.params.items()}
        stored = {n: a.shape for n, a in self.params.items()}
        if expected != stored:
            missing = sorted(set(expected) - set(stored))
            extra = sorted(set(stored) - set(expected))
            shape = sorted(n for n in set(expected) & set(stored) if expected[n] != stored[n])
            raise IntegrityError(
                f"checkpoint does not match model {model.kind}: missing {missing[:3]}, "
                f"unexpected {extra[:3]}, shape mismatch {shape[:3]}"
            )
        for name, p in model.params.items():
            p.data = self.params[name].copy()
        return model


def _epoch_batches(rng, n, batch_size):
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def train(config, data, log_path=None):
    """Fit ``config.model`` to ``data`` (normalized targets) and return a checkpoint."""
    n = len(data)
    if n == 0:
        raise UsageError("training set is empty")
    init_seed, shuffle_seed = np.random.SeedSequence(config.seed).spawn(2)
    model = build_model(config.model, seed=init_seed)
    opt = ad.Adam(model.params, lr=config.learning_rate)
    rng = np.random.default_rng(shuffle_seed)
    x_all = model.prepare(data.inputs.data)
    y_all = data.targets.data
    tape = ad.get_tape()

    history = []
    log_fh = open(log_path, "w", encoding="utf-8", newline="\n") if log_path else None
    try:
        for epoch in range(1, config.epochs + 1):
            total = 0.0
            for b, idx in enumerate(_epoch_batches(rng, n, config.batch_size), start=1):
                tape.clear()
                pred = model.forward(ad.Tensor(x_all[:, idx]))
                loss = ad.mse_loss(pred, ad.Tensor(y_all[idx]))
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}: {value}")
                ad.backward(loss)
                opt.step()
                opt.zero_grad()
                total += value * len(idx)
            epoch_loss = total / n
            history.append(epoch_loss)
            if log_fh:
                log_fh.write(f"epoch,{epoch},train_mse,{epoch_loss!r}\n")
            log.info("%s epoch %d/%d train_mse %.6g", model.kind, epoch, config.epochs, epoch_loss)
    finally:
        if log_fh:
            log_fh.close()

    return Checkpoint(
        config={"model": config.model.to_dict(), "train": config.hyperparams()},
        norm_stats=list(data.norm_stats),
        params={name: p.data.copy() for name, p in model.params.items()},
        history=history,
    )


# binary format -----------------------------------------------------------
# "OPNN" | u32 version | u32 header_len | header JSON | u32 n_params |
# per param: u16 name_len | name | u8 rank | u32 dims[rank] | f64 values (all little-endian)

def dumps_checkpoint(ckpt):
    header = json.dumps(
        {"config": ckpt.config, "norm_stats": [[s.mean, s.std] for s in ckpt.norm_stats]},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", ckpt.version, len(header)), header,
             struct.pack("<I", len(ckpt.params))]
    for name in sorted(ckpt.params):
        arr = np.ascontiguousarray(ckpt.params[name], dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf):
        self.buf, self.pos = buf, 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise FormatError(f"checkpoint truncated at byte {self.pos} (wanted {n} more)")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads_checkpoint(buf):
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    version, header_len = r.unpack("<II")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    try:
        header = json.loads(r.take(header_len).decode("utf-8"))
        config = header["config"]
        stats = [NormStats(float(m), float(s)) for m, s in header["norm_stats"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"corrupt checkpoint header: {exc}") from None
    (count,) = r.unpack("<I")
    params = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        try:
            name = r.take(name_len).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("corrupt parameter name") from None
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}I")
        n = int(np.prod(shape, dtype=np.int64))
        params[name] = np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes after the last parameter")
    return Checkpoint(config=config, norm_stats=stats, params=params, version=version)


def save_checkpoint(ckpt, path):
    with open(path, "wb") as fh:
        fh.write(dumps_checkpoint(ckpt))


def load_checkpoint(path, model_config=None):
    """Read a checkpoint; with ``model_config`` also verify it fits that model."""
    with open(path, "rb") as fh:
        ckpt = loads_checkpoint(fh.read())
    if model_config is not None:
        ckpt.build(model_config)
    else:
        try:
            ckpt.model_config
        except (TypeError, UsageError) as exc:
            raise FormatError(f"checkpoint carries an invalid model config: {exc}") from None
    return ckpt
