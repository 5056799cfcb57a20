"""Prosody-conditioned likelihood aligner.

Soft text-to-frame alignments come from a softmax over negative squared
L2 distances between projected acoustic frames and phoneme embeddings.
Training pulls the soft matrix toward (a) high total monotonic-path
likelihood (forward algorithm) and (b) the single best monotonic path
(Viterbi), whose column counts give phoneme durations.

Path convention throughout: one column per frame, starting at column 0,
ending at column N-1, advancing by 0 or 1 columns per frame.
"""

import numpy as np

from . import autodiff as ad
from . import kernels


class AlignmentMatrix:
    """T x N alignment, soft (rows sum to 1) or hard (binary monotonic path).

    ``values`` may be an autodiff Tensor (trainable soft alignments) or a
    plain ndarray. Soft matrices produced by ``soft_alignment`` also carry
    ``log_values`` so losses can stay in log space.
    """

    def __init__(self, values, kind, log_values=None):
        if kind not in ("soft", "hard"):
            raise ValueError(f"kind must be soft|hard, got {kind!r}")
        self.values = values
        self.kind = kind
        self.log_values = log_values

    @property
    def array(self):
        return self.values.data if isinstance(self.values, ad.Tensor) else np.asarray(self.values)

    @property
    def frames(self):
        return self.array.shape[0]

    @property
    def phonemes(self):
        return self.array.shape[1]

    def validate(self):
        """Check the structural invariants for this matrix kind."""
        a = self.array
        if a.ndim != 2 or a.size == 0:
            raise ValueError(f"alignment must be non-empty 2-D, got shape {a.shape}")
        if self.kind == "soft":
            if (a < 0).any():
                raise ValueError("soft alignment has negative entries")
            if np.abs(a.sum(axis=1) - 1.0).max() > 1e-9:
                raise ValueError("soft alignment rows must sum to 1")
            return
        if not np.isin(a, (0.0, 1.0)).all():
            raise ValueError("hard alignment must be binary")
        if (a.sum(axis=1) != 1).any():
            raise ValueError("hard alignment needs exactly one 1 per row")
        cols = a.argmax(axis=1)
        if (np.diff(cols) < 0).any() or (np.diff(cols) > 1).any():
            raise ValueError("hard alignment columns must advance by 0 or 1")
        if cols[0] != 0 or cols[-1] != a.shape[1] - 1:
            raise ValueError("hard alignment must start at column 0 and end at the last column")


def soft_alignment(phon, acous, scale=None):
    """Softmax over phonemes of minus the squared distance to each frame.

    phon is (N, C), acous is (T, C); an optional scalar Tensor scales the
    distances before the softmax. Returns a soft AlignmentMatrix whose
    rows sum to 1.
    """
    phon = ad.as_tensor(phon)
    acous = ad.as_tensor(acous)
    if phon.shape[1] != acous.shape[1]:
        raise ad.ShapeMismatch("soft_alignment", phon.shape, acous.shape)
    sq_a = ad.sum(ad.square(acous), axis=1, keepdims=True)            # (T, 1)
    sq_p = ad.reshape(ad.sum(ad.square(phon), axis=1), (1, phon.shape[0]))
    cross = ad.matmul(acous, ad.transpose(phon))                      # (T, N)
    d2 = ad.add(ad.sub(sq_a, ad.mul(cross, 2.0)), sq_p)
    logits = ad.neg(d2 if scale is None else ad.mul(d2, scale))
    log_soft = ad.log_softmax(logits, axis=1)
    return AlignmentMatrix(ad.exp(log_soft), "soft", log_values=log_soft)


def _log_values(am):
    if am.log_values is not None:
        return am.log_values
    if isinstance(am.values, ad.Tensor) and am.values.requires_grad:
        return ad.log(am.values)
    with np.errstate(divide="ignore"):
        return np.log(am.array)


def forward_sum_loss(am):
    """Negative log-likelihood of all monotonic paths through a soft matrix."""
    if am.kind != "soft":
        raise ValueError("forward_sum_loss expects a soft alignment")
    t_len, n_len = am.array.shape
    if t_len < n_len:
        raise ValueError(f"impossible alignment: {t_len} frames < {n_len} phonemes")
    logv = _log_values(am)
    if isinstance(logv, ad.Tensor):
        return ad.monotonic_forward_sum(logv)
    nll, _ = kernels.forward_sum_fb(np.ascontiguousarray(logv))
    return ad.Tensor(nll)


def monotonic_best_path(am):
    """Viterbi-maximal monotonic path as a hard AlignmentMatrix.

    Ties between staying on a column and advancing break toward staying.
    No gradients flow: the path is a discrete constant.
    """
    if am.kind != "soft":
        raise ValueError("monotonic_best_path expects a soft alignment")
    t_len, n_len = am.array.shape
    if t_len < n_len:
        raise ValueError(f"impossible alignment: {t_len} frames < {n_len} phonemes")
    with np.errstate(divide="ignore"):
        logv = np.log(am.array)
    cols = kernels.viterbi_path(np.ascontiguousarray(logv))
    hard = np.zeros((t_len, n_len))
    hard[np.arange(t_len), cols] = 1.0
    return AlignmentMatrix(hard, "hard")


def durations_from_path(hard):
    """Per-phoneme frame counts of a hard path; sums to T, all entries >= 1."""
    if hard.kind != "hard":
        raise ValueError("durations_from_path expects a hard alignment")
    hard.validate()
    cols = hard.array.argmax(axis=1)
    return np.bincount(cols, minlength=hard.phonemes).astype(np.int64)


def kl_binarization_loss(hard, soft):
    """KL(hard || soft) averaged over frames.

    With a binary hard matrix this reduces to the per-frame cross-entropy
    of the chosen path: -mean_t log soft[t, path(t)]. The hard matrix is a
    constant; gradients flow into the soft side only.
    """
    if hard.array.shape != soft.array.shape:
        raise ad.ShapeMismatch("kl_binarization_loss", hard.array.shape, soft.array.shape)
    t_len, n_len = hard.array.shape
    cols = hard.array.argmax(axis=1)
    flat_idx = np.arange(t_len) * n_len + cols
    if soft.log_values is not None:
        picked = ad.gather(ad.reshape(soft.log_values, (t_len * n_len,)), flat_idx)
        return ad.neg(ad.mean(picked))
    if isinstance(soft.values, ad.Tensor) and soft.values.requires_grad:
        vals = ad.gather(ad.reshape(soft.values, (t_len * n_len,)), flat_idx)
        return ad.neg(ad.mean(ad.log(vals)))
    picked = soft.array.reshape(-1)[flat_idx]
    return ad.Tensor(-np.mean(np.log(picked)))


def duration_loss(log_dur_pred, target_durations):
    """MSE between predicted log-durations and log(1 + target frames)."""
    target = ad.Tensor(np.log1p(np.asarray(target_durations, dtype=np.float64)))
    pred = ad.reshape(log_dur_pred, target.shape)
    return ad.mean(ad.square(ad.sub(pred, target)))


def align_loss(soft, hard, log_dur_pred=None, target_durations=None):
    """Forward-sum + KL binarization (+ duration MSE when predictions are
    given), all at unit weight."""
    total = ad.add(forward_sum_loss(soft), kl_binarization_loss(hard, soft))
    if log_dur_pred is not None:
        total = ad.add(total, duration_loss(log_dur_pred, target_durations))
    return total


def write_pgm(am, path):
    """Dump an alignment as a binary 8-bit PGM, one image row per frame."""
    a = np.clip(am.array, 0.0, 1.0)
    img = np.round(255.0 * a).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        f.write(img.tobytes())


def read_pgm(path):
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P5":
            raise ValueError(f"{path}: not a binary PGM")
        dims = f.readline().split()
        width, height = int(dims[0]), int(dims[1])
        f.readline()  # maxval
        img = np.frombuffer(f.read(width * height), dtype=np.uint8)
    return img.reshape(height, width)
