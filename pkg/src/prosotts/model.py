"""Trainable network components: phoneme/prosody encoders, attention
mapping, prosody/duration/variance predictors, length regulator,
auxiliary mel predictor, and a toy upsampling vocoder.

Sequences are time-major tensors without a batch axis; the trainer loops
over utterances. All stacks preserve sequence length (same-padding
convolutions), so receptive-field accounting stays additive.
"""

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .aligner import AlignmentMatrix, soft_alignment

# fixed affine applied to log-mels before learned projections, so initial
# distances and activations start well-scaled (log floor is about -11.5)
MEL_NORM_MEAN = -6.0
MEL_NORM_STD = 3.0


@dataclass
class ModelConfig:
    vocab_size: int = 40
    dim: int = 32
    enc_blocks: int = 2
    ff_kernel: int = 3
    leaky_slope: float = 0.1
    mel_bands: int = 80
    hop: int = 256
    # shared residual-stack layout: RF = 1 + (pre-1) + 6*(block-1) + (post-1)
    pre_kernel: int = 5
    block_kernel: int = 3
    post_kernel: int = 3
    n_res_blocks: int = 3
    aux_channels: int = 32
    voc_channels: int = 32
    disc_channels: int = 32
    disc_proj_channels: int = 128


@dataclass
class EmbeddingSequence:
    """Length x dim tensor tagged with its time scale."""

    values: ad.Tensor
    scale: str  # "phoneme" | "frame"

    def __post_init__(self):
        if self.scale not in ("phoneme", "frame"):
            raise ValueError(f"bad scale tag {self.scale!r}")
        if self.values.data.ndim != 2 or self.values.shape[0] < 1:
            raise ValueError(f"embedding sequence needs 2-D values, got {self.values.shape}")

    @property
    def length(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[1]


def xavier(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Module:
    """Tiny parameter container: explicit registration, named traversal."""

    def __init__(self):
        self._params = {}
        self._children = {}

    def param(self, name, array):
        t = ad.Tensor(array, requires_grad=True)
        self._params[name] = t
        return t

    def child(self, name, module):
        self._children[name] = module
        return module

    def named_params(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, c in self._children.items():
            yield from c.named_params(prefix + cname + ".")

    def params(self):
        return [p for _, p in self.named_params()]

    def state(self):
        return {name: p.data.copy() for name, p in self.named_params()}

    def load_state(self, table, prefix=""):
        for name, p in self.named_params(prefix):
            if name not in table:
                raise KeyError(f"checkpoint is missing tensor {name!r}")
            arr = np.asarray(table[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != model {p.data.shape}")
            p.data = arr.copy()
            p.grad = None


class Linear(Module):
    def __init__(self, rng, in_dim, out_dim, bias=True):
        super().__init__()
        self.w = self.param("w", xavier(rng, (in_dim, out_dim), in_dim, out_dim))
        self.b = self.param("b", np.zeros(out_dim)) if bias else None

    def __call__(self, x):
        y = ad.matmul(x, self.w)
        return ad.add(y, self.b) if self.b is not None else y


class Conv(Module):
    def __init__(self, rng, in_ch, out_ch, kernel, dilation=1):
        super().__init__()
        fan_in, fan_out = in_ch * kernel, out_ch * kernel
        self.w = self.param("w", xavier(rng, (kernel, in_ch, out_ch), fan_in, fan_out))
        self.b = self.param("b", np.zeros(out_ch))
        self.kernel = kernel
        self.dilation = dilation

    def __call__(self, x):
        return ad.conv1d(x, self.w, self.b, dilation=self.dilation)

    def spec(self):
        return (self.kernel, self.dilation)


class EncoderBlock(Module):
    """Pre-norm transformer block: single-head self-attention plus a
    conv feed-forward pair, both with residual connections."""

    def __init__(self, rng, dim, ff_kernel=3, slope=0.1):
        super().__init__()
        self.wq = self.param("wq", xavier(rng, (dim, dim), dim, dim))
        self.wk = self.param("wk", xavier(rng, (dim, dim), dim, dim))
        self.wv = self.param("wv", xavier(rng, (dim, dim), dim, dim))
        self.wo = self.param("wo", xavier(rng, (dim, dim), dim, dim))
        self.ff1 = self.child("ff1", Conv(rng, dim, dim, ff_kernel))
        self.ff2 = self.child("ff2", Conv(rng, dim, dim, ff_kernel))
        self.scale = 1.0 / np.sqrt(dim)
        self.slope = slope

    def __call__(self, x):
        h = ad.layer_norm(x, axis=-1)
        q = ad.matmul(h, self.wq)
        k = ad.matmul(h, self.wk)
        v = ad.matmul(h, self.wv)
        attn = ad.softmax(ad.mul(ad.matmul(q, ad.transpose(k)), self.scale), axis=-1)
        x = ad.add(x, ad.matmul(ad.matmul(attn, v), self.wo))
        h = ad.layer_norm(x, axis=-1)
        h = self.ff2(ad.leaky_relu(self.ff1(h), self.slope))
        return ad.add(x, h)


def positional_encoding(length, dim):
    pos = np.arange(length)[:, None]
    i = np.arange(dim)[None, :]
    angles = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    table = np.where(i % 2 == 0, np.sin(angles), np.cos(angles))
    return table


class PhonemeEncoder(Module):
    """Embedding lookup + positional encoding + encoder block stack."""

    def __init__(self, rng, cfg: ModelConfig):
        super().__init__()
        self.vocab_size = cfg.vocab_size
        self.emb = self.param("emb", rng.normal(0.0, 0.3, size=(cfg.vocab_size, cfg.dim)))
        self.blocks = [self.child(f"block{i}", EncoderBlock(rng, cfg.dim, cfg.ff_kernel,
                                                            cfg.leaky_slope))
                       for i in range(cfg.enc_blocks)]
        self.dim = cfg.dim

    def __call__(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 1 or ids.size == 0:
            raise ValueError("phoneme id sequence must be non-empty and 1-D")
        if ids.min() < 0 or ids.max() >= self.vocab_size:
            bad = ids[(ids < 0) | (ids >= self.vocab_size)][0]
            raise ValueError(f"phoneme id {bad} outside vocabulary of {self.vocab_size}")
        x = ad.add(ad.gather(self.emb, ids), ad.Tensor(positional_encoding(len(ids), self.dim)))
        for block in self.blocks:
            x = block(x)
        return EmbeddingSequence(x, "phoneme")


class ProsodyEncoder(Module):
    """Mel frames to frame-scale prosody embeddings (h'_pr)."""

    def __init__(self, rng, cfg: ModelConfig):
        super().__init__()
        self.proj = self.child("proj", Linear(rng, cfg.mel_bands, cfg.dim))
        self.blocks = [self.child(f"block{i}", EncoderBlock(rng, cfg.dim, cfg.ff_kernel,
                                                            cfg.leaky_slope))
                       for i in range(cfg.enc_blocks)]

    def __call__(self, mel_values):
        mel = ad.Tensor((np.asarray(mel_values) - MEL_NORM_MEAN) / MEL_NORM_STD)
        x = self.proj(mel)
        for block in self.blocks:
            x = block(x)
        return EmbeddingSequence(x, "frame")


class ProsodyAttention(Module):
    """Map frame-scale prosody onto phoneme scale by attention with the
    phoneme embeddings; outputs are convex combinations of frame vectors."""

    def __init__(self, rng, dim):
        super().__init__()
        self.wq = self.param("wq", xavier(rng, (dim, dim), dim, dim))
        self.wk = self.param("wk", xavier(rng, (dim, dim), dim, dim))
        self.scale = 1.0 / np.sqrt(dim)

    def __call__(self, h_ph: EmbeddingSequence, h_pr_frame: EmbeddingSequence):
        if h_ph.scale != "phoneme" or h_pr_frame.scale != "frame":
            raise ValueError("attention map needs (phoneme, frame) scale inputs")
        q = ad.matmul(h_ph.values, self.wq)
        k = ad.matmul(h_pr_frame.values, self.wk)
        weights = ad.softmax(ad.mul(ad.matmul(q, ad.transpose(k)), self.scale), axis=-1)
        return EmbeddingSequence(ad.matmul(weights, h_pr_frame.values), "phoneme")

    def attention_weights(self, h_ph, h_pr_frame):
        q = ad.matmul(h_ph.values, self.wq)
        k = ad.matmul(h_pr_frame.values, self.wk)
        return ad.softmax(ad.mul(ad.matmul(q, ad.transpose(k)), self.scale), axis=-1)


class ProsodyPredictor(Module):
    """Deterministic stand-in for the target prosody embedding, from h_ph."""

    def __init__(self, rng, cfg: ModelConfig):
        super().__init__()
        self.blocks = [self.child(f"block{i}", EncoderBlock(rng, cfg.dim, cfg.ff_kernel,
                                                            cfg.leaky_slope))
                       for i in range(cfg.enc_blocks)]
        self.head = self.child("head", Linear(rng, cfg.dim, cfg.dim))

    def __call__(self, h_ph: EmbeddingSequence):
        if h_ph.scale != "phoneme":
            raise ValueError("prosody predictor expects phoneme-scale input")
        x = h_ph.values
        for block in self.blocks:
            x = block(x)
        return EmbeddingSequence(self.head(x), "phoneme")


class DurationPredictor(Module):
    """Two conv1d+layer_norm+leaky_relu layers and a linear head on a
    stop-gradient copy of the phoneme embeddings; outputs log durations."""

    def __init__(self, rng, cfg: ModelConfig):
        super().__init__()
        self.conv1 = self.child("conv1", Conv(rng, cfg.dim, cfg.dim, 3))
        self.conv2 = self.child("conv2", Conv(rng, cfg.dim, cfg.dim, 3))
        self.head = self.child("head", Linear(rng, cfg.dim, 1))
        self.slope = cfg.leaky_slope

    def __call__(self, h_ph: EmbeddingSequence):
        if h_ph.scale != "phoneme":
            raise ValueError("duration predictor expects phoneme-scale input")
        x = ad.stop_gradient(h_ph.values)
        x = ad.leaky_relu(ad.layer_norm(self.conv1(x), axis=-1), self.slope)
        x = ad.leaky_relu(ad.layer_norm(self.conv2(x), axis=-1), self.slope)
        return ad.reshape(self.head(x), (h_ph.length,))


def durations_from_log(log_durations):
    """Inference rounding rule: d = max(1, round(exp(x) - 1))."""
    x = log_durations.data if isinstance(log_durations, ad.Tensor) else np.asarray(log_durations)
    return np.maximum(1, np.round(np.exp(x) - 1.0)).astype(np.int64)


class VarianceHead(Module):
    """Two-layer conv head producing one value per frame."""

    def __init__(self, rng, dim, slope):
        super().__init__()
        self.conv1 = self.child("conv1", Conv(rng, dim, dim, 3))
        self.conv2 = self.child("conv2", Conv(rng, dim, 1, 3))
        self.slope = slope

    def __call__(self, x):
        h = ad.leaky_relu(self.conv1(x), self.slope)
        return ad.reshape(self.conv2(h), (x.shape[0],))


class VariancePredictors(Module):
    """Independent frame-level pitch and energy heads on h'_pr."""

    def __init__(self, rng, cfg: ModelConfig):
        super().__init__()
        self.pitch = self.child("pitch", VarianceHead(rng, cfg.dim, cfg.leaky_slope))
        self.energy = self.child("energy", VarianceHead(rng, cfg.dim, cfg.leaky_slope))

    def __call__(self, h_pr_frame: EmbeddingSequence):
        if h_pr_frame.scale != "frame":
            raise ValueError("variance predictors expect frame-scale input")
        return self.pitch(h_pr_frame.values), self.energy(h_pr_frame.values)


def variance_loss(pitch_pred, energy_pred, pitch_target, voiced_mask, energy_target):
    """L1 losses on frame-level prosody targets; pitch masked to voiced frames."""
    mask = np.asarray(voiced_mask, dtype=np.float64)
    count = mask.sum()
    e_l1 = ad.mean(ad.abs_(ad.sub(energy_pred, ad.Tensor(energy_target))))
    if count == 0:
        return e_l1  # fully unvoiced: pitch term vanishes
    diff = ad.mul(ad.abs_(ad.sub(pitch_pred, ad.Tensor(pitch_target))), ad.Tensor(mask))
    p_l1 = ad.mul(ad.sum(diff), 1.0 / count)
    return ad.add(p_l1, e_l1)


def length_regulate(emb: EmbeddingSequence, durations):
    """Repeat row i of a phoneme-scale sequence durations[i] times."""
    if emb.scale != "phoneme":
        raise ValueError("length_regulate expects phoneme-scale input")
    d = np.asarray(durations, dtype=np.int64)
    if d.shape != (emb.length,):
        raise ValueError(f"need one duration per phoneme: {d.shape} vs {emb.length}")
    if (d < 0).any():
        raise ValueError("durations must be nonnegative")
    if d.sum() < 1:
        raise ValueError("durations sum to zero; nothing to regulate")
    idx = np.repeat(np.arange(emb.length), d)
    return EmbeddingSequence(ad.gather(emb.values, idx), "frame")


class ResConvBlock(Module):
    """conv -> leaky_relu -> conv -> leaky_relu plus skip; optional layer
    norm on the last stage (auxiliary-predictor variant)."""

    def __init__(self, rng, channels, kernel, slope, final_norm=False):
        super().__init__()
        self.conv1 = self.child("conv1", Conv(rng, channels, channels, kernel))
        self.conv2 = self.child("conv2", Conv(rng, channels, channels, kernel))
        self.slope = slope
        self.final_norm = final_norm

    def __call__(self, x, maps=None):
        h1 = self.conv1(x)
        h2 = self.conv2(ad.leaky_relu(h1, self.slope))
        if maps is not None:
            maps.extend([h1, h2])
        out = ad.add(x, ad.leaky_relu(h2, self.slope))
        return ad.layer_norm(out, axis=-1) if self.final_norm else out


class ConvStack(Module):
    """PreConv1D -> residual blocks -> PostConv1D, all same-padding.

    The layout (kernel, dilation) pairs are exposed via spec() for the
    analytic receptive-field calculator.
    """

    def __init__(self, rng, in_ch, hidden, out_ch, cfg: ModelConfig, final_norm=False):
        super().__init__()
        self.pre = self.child("pre", Conv(rng, in_ch, hidden, cfg.pre_kernel))
        self.blocks = [self.child(f"res{i}",
                                  ResConvBlock(rng, hidden, cfg.block_kernel,
                                               cfg.leaky_slope, final_norm))
                       for i in range(cfg.n_res_blocks)]
        self.post = self.child("post", Conv(rng, hidden, out_ch, cfg.post_kernel))
        self.slope = cfg.leaky_slope

    def __call__(self, x, collect_maps=False):
        maps = [] if collect_maps else None
        h = self.pre(x)
        if maps is not None:
            maps.append(h)
        h = ad.leaky_relu(h, self.slope)
        for block in self.blocks:
            h = block(h, maps)
        out = self.post(h)
        return (out, maps) if collect_maps else out

    def spec(self):
        layers = [self.pre.spec()]
        for block in self.blocks:
            layers.extend([block.conv1.spec(), block.conv2.spec()])
        layers.append(self.post.spec())
        return layers


class AuxiliaryPredictor(Module):
    """Frame embeddings to a predicted mel; receptive field matches the
    vocoder stack. Residual blocks end in layer norm."""

    def __init__(self, rng, cfg: ModelConfig):
        super().__init__()
        self.stack = self.child("stack", ConvStack(rng, cfg.dim, cfg.aux_channels,
                                                   cfg.mel_bands, cfg, final_norm=True))

    def __call__(self, intermediate: EmbeddingSequence):
        if intermediate.scale != "frame":
            raise ValueError("auxiliary predictor expects frame-scale input")
        return self.stack(intermediate.values)

    def conv_spec(self):
        return self.stack.spec()


def upsample_factors(hop):
    factors = []
    h = hop
    while h % 4 == 0:
        factors.append(4)
        h //= 4
    while h % 2 == 0:
        factors.append(2)
        h //= 2
    if h != 1:
        raise ValueError(f"hop {hop} is not a power of two")
    return factors


class ToyVocoder(Module):
    """Frame-scale conv stack (receptive field matches the discriminator
    and auxiliary predictor) plus transposed-conv upsampling to samples."""

    def __init__(self, rng, cfg: ModelConfig):
        super().__init__()
        self.frame_stack = self.child("frame_stack",
                                      ConvStack(rng, cfg.dim, cfg.voc_channels,
                                                cfg.voc_channels, cfg))
        self.slope = cfg.leaky_slope
        self.hop = cfg.hop
        self.factors = upsample_factors(cfg.hop)
        self.ups = []
        ch = cfg.voc_channels
        for i, s in enumerate(self.factors):
            out_ch = 1 if i == len(self.factors) - 1 else max(2, ch // 2)
            fan_in, fan_out = ch * 2 * s, out_ch * 2 * s
            w = self.param(f"up{i}.w", xavier(rng, (2 * s, ch, out_ch), fan_in, fan_out))
            b = self.param(f"up{i}.b", np.zeros(out_ch))
            self.ups.append((w, b, s))
            ch = out_ch

    def __call__(self, intermediate: EmbeddingSequence):
        if intermediate.scale != "frame":
            raise ValueError("vocoder expects frame-scale input")
        x = self.frame_stack(intermediate.values)
        for i, (w, b, s) in enumerate(self.ups):
            x = ad.conv_transpose1d(x, w, b, stride=s)
            if i < len(self.ups) - 1:
                x = ad.leaky_relu(x, self.slope)
        return ad.reshape(x, (intermediate.length * self.hop,))

    def conv_spec(self):
        return self.frame_stack.spec()


class MelAligner(Module):
    """Learned acoustic side of the aligner: a linear mel projection plus
    a scalar distance scale feeding the soft-alignment softmax."""

    def __init__(self, rng, cfg: ModelConfig):
        super().__init__()
        self.proj = self.child("proj", Linear(rng, cfg.mel_bands, cfg.dim))
        self.scale = self.param("scale", np.float64(1.0))

    def __call__(self, phon: EmbeddingSequence, mel_values) -> AlignmentMatrix:
        mel = ad.Tensor((np.asarray(mel_values) - MEL_NORM_MEAN) / MEL_NORM_STD)
        acous = self.proj(mel)
        return soft_alignment(phon.values, acous, scale=self.scale)


class TTSModel(Module):
    """Generator-side assembly of every trainable component."""

    def __init__(self, cfg: ModelConfig, seed=0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.phoneme_encoder = self.child("phoneme_encoder", PhonemeEncoder(rng, cfg))
        self.prosody_encoder = self.child("prosody_encoder", ProsodyEncoder(rng, cfg))
        self.prosody_attention = self.child("prosody_attention", ProsodyAttention(rng, cfg.dim))
        self.prosody_predictor = self.child("prosody_predictor", ProsodyPredictor(rng, cfg))
        self.duration_predictor = self.child("duration_predictor", DurationPredictor(rng, cfg))
        self.variance_predictors = self.child("variance_predictors", VariancePredictors(rng, cfg))
        self.aligner = self.child("aligner", MelAligner(rng, cfg))
        self.auxiliary_predictor = self.child("auxiliary_predictor", AuxiliaryPredictor(rng, cfg))
        self.vocoder = self.child("vocoder", ToyVocoder(rng, cfg))

    def infer(self, ids):
        """Inference path: predicted prosody + predicted durations to waveform.

        Returns (waveform ndarray, durations ndarray).
        """
        with ad.no_grad():
            h_ph = self.phoneme_encoder(ids)
            h_pred = self.prosody_predictor(h_ph)
            log_d = self.duration_predictor(h_ph)
            durations = durations_from_log(log_d)
            combined = EmbeddingSequence(ad.add(h_ph.values, h_pred.values), "phoneme")
            intermediate = length_regulate(combined, durations)
            wave = self.vocoder(intermediate)
        return wave.data.copy(), durations


# --- checkpoint file format (documented in README) ---

CKPT_MAGIC = b"CKP0"


def save_checkpoint(path, table, step=0):
    """Named tensor table: little-endian float64 with shape headers."""
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<IQ", len(table), step))
        for name, arr in table.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            encoded = name.encode()
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        if f.read(4) != CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        count, step = struct.unpack("<IQ", f.read(12))
        table = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode()
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim)) if ndim else ()
            n = int(np.prod(shape)) if ndim else 1
            table[name] = np.frombuffer(f.read(8 * n), dtype="<f8").reshape(shape).copy()
    return table, step
