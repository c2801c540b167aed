"""Window-to-price predictors built on :mod:`optensor.autodiff`.

Every trainable model takes the dataset frame ``(T, C, N, D)`` through
``prepare`` into its own input layout, and ``forward`` maps that to ``(N, 1)``.
Parameters live in a flat ``{dotted.name: Tensor}`` dict kept in lexicographic
order.
"""
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import blackscholes as bs
from .autodiff import Tensor
from .errors import DimensionError, UsageError

MODEL_KINDS = ("conv_lstm_3c", "conv_lstm_1c", "cnn_rnn", "lstm", "bs")
TRAINABLE = MODEL_KINDS[:-1]


@dataclass(frozen=True)
class ModelConfig:
    model: str = "conv_lstm_3c"
    hidden_channels: int = 16
    kernel_size: int = 3
    dilations: tuple = (1, 2, 4)
    conv_channels: int = 16
    gru_hidden: tuple = (8, 16, 16)
    regression_hidden: int = 16
    lstm_hidden: int = 32
    window: int = 10
    channels: int = 3
    features_per_channel: int = 5

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise UsageError(f"unknown model {self.model!r}; choose from {', '.join(MODEL_KINDS)}")
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        object.__setattr__(self, "gru_hidden", tuple(int(h) for h in self.gru_hidden))
        sizes = (self.hidden_channels, self.kernel_size, self.conv_channels, self.regression_hidden,
                 self.lstm_hidden, self.window, self.channels, self.features_per_channel)
        if min(sizes) < 1 or min(self.dilations, default=0) < 1 or min(self.gru_hidden, default=0) < 1:
            raise UsageError("model sizes, dilations and GRU widths must be positive")

    def to_dict(self):
        d = asdict(self)
        d["dilations"] = list(self.dilations)
        d["gru_hidden"] = list(self.gru_hidden)
        return d


class _ParamBuilder:
    def __init__(self, rng, params, prefix=""):
        self.rng, self.params, self.prefix = rng, params, prefix

    def child(self, name):
        return _ParamBuilder(self.rng, self.params, f"{self.prefix}{name}.")

    def __call__(self, name, shape, fan_in):
        t = ad.uniform_init(self.rng, shape, fan_in)
        t.name = self.prefix + name
        if t.name in self.params:
            raise UsageError(f"duplicate parameter name {t.name}")
        self.params[t.name] = t
        return t


class Model:
    kind = None

    def __init__(self, config, seed=0):
        self.config = config
        self.seed = seed
        params = {}
        self._build(_ParamBuilder(np.random.default_rng(seed), params))
        self.params = dict(sorted(params.items()))

    def _build(self, p):
        raise NotImplementedError

    def prepare(self, frame):
        raise NotImplementedError

    def forward(self, x):
        raise NotImplementedError

    def n_params(self):
        return sum(p.size for p in self.params.values())

    def summary(self):
        lines = [f"{self.kind}: {self.n_params()} parameters"]
        lines += [f"  {name:<32} {tuple(p.shape)}" for name, p in self.params.items()]
        return "\n".join(lines)

    def predict(self, frame, batch_size=1024):
        """Normalized predictions for a (T, C, N, D) frame, shape (N, 1)."""
        x = self.prepare(frame)
        n = x.shape[1]
        out = []
        with ad.no_grad():
            for start in range(0, n, batch_size):
                out.append(self.forward(Tensor(x[:, start:start + batch_size])).data)
        return np.concatenate(out, axis=0) if out else np.zeros((0, 1))

    def _check_frame(self, frame):
        cfg = self.config
        want = (cfg.window, cfg.channels, cfg.features_per_channel)
        if frame.ndim != 4 or (frame.shape[0], frame.shape[1], frame.shape[3]) != want:
            raise DimensionError(f"{self.kind}: expected a (T={want[0]}, C={want[1]}, N, D={want[2]}) frame, got {frame.shape}")


# dense helpers -----------------------------------------------------------

def linear(x, weight, bias):
    return ad.batch_add(ad.matmul(x, weight), bias)


def _project_sequence(xs, weight, bias):
    """(T, B, in) @ (in, out) + bias -> (T, B, out) as one matmul."""
    t, b, f = xs.shape
    flat = ad.reshape(xs, (t * b, f))
    return ad.reshape(linear(flat, weight, bias), (t, b, weight.shape[1]))


# Conv-LSTM ---------------------------------------------------------------

class ConvLstm1dCell:
    """Conv-LSTM cell whose ``*`` is a same-padded 1D convolution along the feature axis."""

    GATES = ("i", "f", "c", "o")

    def __init__(self, p, in_ch, hidden, width, k):
        self.in_ch, self.hidden, self.width, self.k = in_ch, hidden, width, k
        for g in self.GATES:
            setattr(self, f"W_x{g}", p(f"W_x{g}", (hidden, in_ch, k), in_ch * k))
        for g in self.GATES:
            setattr(self, f"W_h{g}", p(f"W_h{g}", (hidden, hidden, k), hidden * k))
        for g in ("i", "f", "o"):
            setattr(self, f"W_c{g}", p(f"W_c{g}", (hidden, width), hidden * k))
        for g in self.GATES:
            setattr(self, f"b_{g}", p(f"b_{g}", (hidden,), in_ch * k))

    def fused(self):
        """Gate kernels stacked along output channels, so each step runs two convolutions."""
        wx = ad.concat([getattr(self, f"W_x{g}") for g in self.GATES], axis=0)
        wh = ad.concat([getattr(self, f"W_h{g}") for g in self.GATES], axis=0)
        b = ad.concat([getattr(self, f"b_{g}") for g in self.GATES], axis=0)
        return wx, wh, b

    def step(self, x, h_prev=None, c_prev=None, fused=None):
        """One time step; ``None`` states stand for zeros."""
        if x.ndim != 3 or x.shape[1:] != (self.in_ch, self.width):
            raise DimensionError(f"conv-lstm step: input {x.shape} does not match (batch, {self.in_ch}, {self.width})")
        state = (x.shape[0], self.hidden, self.width)
        for s in (h_prev, c_prev):
            if s is not None and s.shape != state:
                raise DimensionError(f"conv-lstm step: state {s.shape} does not match {state}")
        wx, wh, b = fused or self.fused()
        hc = self.hidden
        gates = ad.conv1d(x, wx, b, padding="same")
        if h_prev is not None:
            gates = ad.add(gates, ad.conv1d(h_prev, wh, None, padding="same"))
        pre_i = ad.narrow(gates, 1, 0, hc)
        pre_f = ad.narrow(gates, 1, hc, hc)
        pre_c = ad.narrow(gates, 1, 2 * hc, hc)
        pre_o = ad.narrow(gates, 1, 3 * hc, hc)
        if c_prev is not None:
            pre_i = ad.add(pre_i, ad.batch_mul(c_prev, self.W_ci))
            pre_f = ad.add(pre_f, ad.batch_mul(c_prev, self.W_cf))
        i = ad.sigmoid(pre_i)
        c = ad.mul(i, ad.tanh(pre_c))
        if c_prev is not None:
            c = ad.add(ad.mul(ad.sigmoid(pre_f), c_prev), c)
        o = ad.sigmoid(ad.add(pre_o, ad.batch_mul(c, self.W_co)))
        h = ad.mul(o, ad.tanh(c))
        return h, c


class ConvLstmModel(Model):
    def __init__(self, config, seed=0, single_channel=False):
        self.single_channel = single_channel
        self.kind = "conv_lstm_1c" if single_channel else "conv_lstm_3c"
        super().__init__(config, seed)

    @property
    def input_shape(self):
        cfg = self.config
        if self.single_channel:
            return 1, cfg.channels * cfg.features_per_channel
        return cfg.channels, cfg.features_per_channel

    def _build(self, p):
        cfg = self.config
        in_ch, width = self.input_shape
        self.cell = ConvLstm1dCell(p.child("cell"), in_ch, cfg.hidden_channels, width, cfg.kernel_size)
        head = p.child("head")
        fan = cfg.hidden_channels * width
        self.head_w = head("weight", (fan, 1), fan)
        self.head_b = head("bias", (1,), fan)

    def prepare(self, frame):
        self._check_frame(frame)
        t, c, n, d = frame.shape
        x = frame.transpose(0, 2, 1, 3)  # (T, N, C, D)
        if self.single_channel:
            x = x.reshape(t, n, 1, c * d)
        return np.ascontiguousarray(x)

    def forward(self, x):
        in_ch, width = self.input_shape
        if x.ndim != 4 or x.shape[2:] != (in_ch, width):
            raise DimensionError(f"{self.kind}: expected (T, batch, {in_ch}, {width}) input, got {x.shape}")
        fused = self.cell.fused()
        h = c = None
        for t in range(x.shape[0]):
            h, c = self.cell.step(ad.select(x, t), h, c, fused)
        flat = ad.reshape(h, (x.shape[1], -1))
        return linear(flat, self.head_w, self.head_b)


# GRU / CNN+RNN -----------------------------------------------------------

class GruCell:
    def __init__(self, p, in_size, hidden):
        self.in_size, self.hidden = in_size, hidden
        for g in ("z", "r", "n"):
            setattr(self, f"W_{g}", p(f"W_{g}", (in_size, hidden), hidden))
            setattr(self, f"U_{g}", p(f"U_{g}", (hidden, hidden), hidden))
            setattr(self, f"b_{g}", p(f"b_{g}", (hidden,), hidden))

    def run(self, xs, reverse=False):
        """Hidden states for every step of (T, B, in), returned in time order."""
        if xs.ndim != 3 or xs.shape[2] != self.in_size:
            raise DimensionError(f"gru: input {xs.shape} does not match (T, batch, {self.in_size})")
        hd = self.hidden
        w = ad.concat([self.W_z, self.W_r, self.W_n], axis=1)
        b = ad.concat([self.b_z, self.b_r, self.b_n], axis=0)
        u_zr = ad.concat([self.U_z, self.U_r], axis=1)
        proj = _project_sequence(xs, w, b)
        steps = range(xs.shape[0] - 1, -1, -1) if reverse else range(xs.shape[0])
        h, out = None, {}
        for t in steps:
            xt = ad.select(proj, t)
            if h is None:
                # zero initial state: U h and U (r*h) vanish and h' = z * n
                z = ad.sigmoid(ad.narrow(xt, 1, 0, hd))
                n = ad.tanh(ad.narrow(xt, 1, 2 * hd, hd))
                h = ad.mul(z, n)
            else:
                hu = ad.matmul(h, u_zr)
                z = ad.sigmoid(ad.add(ad.narrow(xt, 1, 0, hd), ad.narrow(hu, 1, 0, hd)))
                r = ad.sigmoid(ad.add(ad.narrow(xt, 1, hd, hd), ad.narrow(hu, 1, hd, hd)))
                n = ad.tanh(ad.add(ad.narrow(xt, 1, 2 * hd, hd), ad.matmul(ad.mul(r, h), self.U_n)))
                h = ad.add(h, ad.mul(z, ad.sub(n, h)))
            out[t] = h
        return [out[t] for t in range(xs.shape[0])], h


class BiGru:
    def __init__(self, p, in_size, hidden):
        self.fwd = GruCell(p.child("fwd"), in_size, hidden)
        self.bwd = GruCell(p.child("bwd"), in_size, hidden)

    def run(self, xs):
        f, _ = self.fwd.run(xs)
        b, _ = self.bwd.run(xs, reverse=True)
        return ad.concat([ad.stack(f), ad.stack(b)], axis=2)


class CnnRnnModel(Model):
    kind = "cnn_rnn"

    def _build(self, p):
        cfg = self.config
        in_ch = cfg.channels * cfg.features_per_channel
        k, width = cfg.kernel_size, cfg.conv_channels
        sp = p.child("spatial")
        self.blocks = []
        for d in cfg.dilations:
            blk = sp.child(f"conv_d{d}")
            self.blocks.append((d, blk("weight", (width, in_ch, k), in_ch * k), blk("bias", (width,), in_ch * k)))
        merged = width * len(cfg.dilations)
        mg = sp.child("merge")
        self.merge_w = mg("weight", (width, merged, 1), merged)
        self.merge_b = mg("bias", (width,), merged)

        tp = p.child("temporal")
        self.grus, size = [], width
        for j, h in enumerate(cfg.gru_hidden):
            self.grus.append(BiGru(tp.child(f"gru{j}"), size, h))
            size = 2 * h
        rg = p.child("regression")
        self.reg_gru = GruCell(rg.child("gru"), size, cfg.regression_hidden)
        lin = rg.child("linear")
        self.lin_w = lin("weight", (cfg.regression_hidden, 1), cfg.regression_hidden)
        self.lin_b = lin("bias", (1,), cfg.regression_hidden)

    def prepare(self, frame):
        self._check_frame(frame)
        return np.ascontiguousarray(frame.transpose(0, 2, 1, 3))

    def forward(self, x):
        cfg = self.config
        want = (cfg.window, cfg.channels, cfg.features_per_channel)
        if x.ndim != 4 or (x.shape[0],) + x.shape[2:] != want:
            raise DimensionError(f"cnn_rnn: expected (T={want[0]}, batch, {want[1]}, {want[2]}) input, got {x.shape}")
        t, b = x.shape[:2]
        # spatial: the C*D variables become channels, convolved along the timeline
        seq = ad.transpose(ad.reshape(x, (t, b, -1)), (1, 2, 0))  # (B, C*D, T)
        feats = [ad.tanh(ad.conv1d(seq, w, bias, dilation=d, padding="same")) for d, w, bias in self.blocks]
        merged = ad.tanh(ad.conv1d(ad.concat(feats, axis=1), self.merge_w, self.merge_b))
        hs = ad.transpose(merged, (2, 0, 1))  # (T, B, conv_channels)
        for gru in self.grus:
            hs = gru.run(hs)
        _, last = self.reg_gru.run(hs)
        return linear(last, self.lin_w, self.lin_b)


# vector LSTM baseline ----------------------------------------------------

class LstmModel(Model):
    """Fully connected LSTM with peephole connections over the flattened 15 features."""

    kind = "lstm"
    GATES = ("i", "f", "c", "o")

    def _build(self, p):
        cfg = self.config
        n_in, hd = cfg.channels * cfg.features_per_channel, cfg.lstm_hidden
        self.n_in = n_in
        cell = p.child("cell")
        for g in self.GATES:
            setattr(self, f"W_x{g}", cell(f"W_x{g}", (n_in, hd), hd))
            setattr(self, f"W_h{g}", cell(f"W_h{g}", (hd, hd), hd))
            setattr(self, f"b_{g}", cell(f"b_{g}", (hd,), hd))
        for g in ("i", "f", "o"):
            setattr(self, f"W_c{g}", cell(f"W_c{g}", (hd,), hd))
        head = p.child("head")
        self.head_w = head("weight", (hd, 1), hd)
        self.head_b = head("bias", (1,), hd)

    def prepare(self, frame):
        self._check_frame(frame)
        t, c, n, d = frame.shape
        return np.ascontiguousarray(frame.transpose(0, 2, 1, 3).reshape(t, n, c * d))

    def forward(self, x):
        if x.ndim != 3 or x.shape[2] != self.n_in:
            raise DimensionError(f"lstm: expected (T, batch, {self.n_in}) input, got {x.shape}")
        hd = self.config.lstm_hidden
        wx = ad.concat([getattr(self, f"W_x{g}") for g in self.GATES], axis=1)
        wh = ad.concat([getattr(self, f"W_h{g}") for g in self.GATES], axis=1)
        b = ad.concat([getattr(self, f"b_{g}") for g in self.GATES], axis=0)
        proj = _project_sequence(x, wx, b)
        h = c = None
        for t in range(x.shape[0]):
            gates = ad.select(proj, t)
            if h is not None:
                gates = ad.add(gates, ad.matmul(h, wh))
            pre = [ad.narrow(gates, 1, j * hd, hd) for j in range(4)]
            if c is not None:
                pre[0] = ad.add(pre[0], ad.batch_mul(c, self.W_ci))
                pre[1] = ad.add(pre[1], ad.batch_mul(c, self.W_cf))
            c_new = ad.mul(ad.sigmoid(pre[0]), ad.tanh(pre[2]))
            if c is not None:
                c_new = ad.add(ad.mul(ad.sigmoid(pre[1]), c), c_new)
            c = c_new
            o = ad.sigmoid(ad.add(pre[3], ad.batch_mul(c, self.W_co)))
            h = ad.mul(o, ad.tanh(c))
        return linear(h, self.head_w, self.head_b)


# Black-Scholes baseline --------------------------------------------------

def bs_baseline_predict(records, rate=bs.DEFAULT_RATE):
    """B-S price on each record's own day from its spot, strike, expiry, type and implied vol."""
    prices = [
        bs.bs_price(bs.BsInputs(r.spot, r.strike, r.days_to_expire, rate, r.implied_vol, r.call_put))
        for r in records
    ]
    return Tensor(np.array(prices, dtype=np.float64).reshape(len(prices), 1))


def build_model(config, seed=0):
    if config.model == "bs":
        raise UsageError("B-S baseline has no trainable parameters")
    if config.model == "conv_lstm_3c":
        return ConvLstmModel(config, seed)
    if config.model == "conv_lstm_1c":
        return ConvLstmModel(config, seed, single_channel=True)
    if config.model == "cnn_rnn":
        return CnnRnnModel(config, seed)
    return LstmModel(config, seed)
