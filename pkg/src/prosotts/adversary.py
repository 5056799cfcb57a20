"""Projection-based conditional discriminator and adversarial objectives.

The discriminator runs two mirrored same-padding conv stacks, one on the
upsampled embeddings under judgement and one on the upsampled phonetic
condition. The per-frame score is a learned linear readout of the main
branch plus the projection inner product between the two branch outputs.
Seven feature maps (PreConv1D plus two per residual block) feed the
feature-matching loss.

Both stacks share one receptive field, matched to the vocoder and
auxiliary predictor, so the discriminator judges exactly the span of
context the vocoder can exploit.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .model import ConvStack, EmbeddingSequence, ModelConfig, Module, xavier

FEATURE_MAP_COUNT = 7


def receptive_field(spec):
    """Analytic receptive field of a same-padding conv stack.

    ``spec`` is an ordered list of (kernel, dilation) pairs; the result is
    1 + sum((kernel - 1) * dilation). Kernels must be odd (same-padding
    symmetry) and dilations positive.
    """
    rf = 1
    for kernel, dilation in spec:
        if kernel % 2 == 0:
            raise ValueError(f"even kernel {kernel} breaks same-padding symmetry")
        if dilation < 1:
            raise ValueError(f"dilation must be >= 1, got {dilation}")
        rf += (kernel - 1) * dilation
    return rf


def perturbation_support(fn, t_len, in_dim, rng=None, delta=1.0):
    """Empirical receptive field probe of a frame-to-frame map.

    Perturbs each input frame in turn and records which output frames
    change bitwise. Returns a list of (lo, hi) inclusive output index
    ranges, one per input position.
    """
    rng = rng or np.random.default_rng(0)
    x = rng.normal(size=(t_len, in_dim))
    base = fn(x)
    spans = []
    for t in range(t_len):
        xp = x.copy()
        xp[t] += delta
        changed = np.flatnonzero(np.any(fn(xp) != base, axis=-1))
        if changed.size == 0:
            spans.append(None)
        else:
            spans.append((int(changed.min()), int(changed.max())))
    return spans


def probe_matches_analytic(fn, t_len, in_dim, rf, rng=None):
    """True when the observed support equals the analytic window at every
    input position (clipped at the sequence edges)."""
    half = (rf - 1) // 2
    spans = perturbation_support(fn, t_len, in_dim, rng)
    for t, span in enumerate(spans):
        want = (max(0, t - half), min(t_len - 1, t + half))
        if span != want:
            return False
    return True


@dataclass
class DiscriminatorOutput:
    """Per-frame scores plus the seven main-branch feature maps."""

    scores: ad.Tensor
    feature_maps: list

    def __post_init__(self):
        if len(self.feature_maps) != FEATURE_MAP_COUNT:
            raise ValueError(f"expected {FEATURE_MAP_COUNT} feature maps, "
                             f"got {len(self.feature_maps)}")
        t_len = self.scores.shape[0]
        for i, fm in enumerate(self.feature_maps):
            if fm.shape[0] != t_len:
                raise ValueError(f"feature map {i} has length {fm.shape[0]}, expected {t_len}")


class ConditionalDiscriminator(Module):
    """Score frame-scale embeddings conditioned on phonetic embeddings."""

    def __init__(self, cfg: ModelConfig, seed=0):
        super().__init__()
        rng = np.random.default_rng(seed)
        proj = cfg.disc_proj_channels
        self.main = self.child("main", ConvStack(rng, cfg.dim, cfg.disc_channels, proj, cfg))
        self.cond = self.child("cond", ConvStack(rng, cfg.dim, cfg.disc_channels, proj, cfg))
        self.readout = self.param("readout", xavier(rng, (proj, 1), proj, 1))

    def __call__(self, h: EmbeddingSequence, h_cond: EmbeddingSequence):
        if h.scale != "frame" or h_cond.scale != "frame":
            raise ValueError("discriminator expects frame-scale inputs")
        if h.length != h_cond.length:
            raise ad.ShapeMismatch("discriminator_forward",
                                   h.values.shape, h_cond.values.shape)
        f_main, maps = self.main(h.values, collect_maps=True)
        f_cond = self.cond(h_cond.values)
        linear = ad.matmul(f_main, self.readout)                      # (T, 1)
        projection = ad.sum(ad.mul(f_main, f_cond), axis=1, keepdims=True)
        scores = ad.reshape(ad.add(linear, projection), (h.length,))
        return DiscriminatorOutput(scores=scores, feature_maps=maps)

    def main_spec(self):
        return self.main.spec()

    def cond_spec(self):
        return self.cond.spec()


def lsgan_d_loss(real: DiscriminatorOutput, fake: DiscriminatorOutput):
    """Least-squares discriminator loss: real toward 1, fake toward 0.

    The caller must build ``fake`` (and the real/condition inputs) from
    stop-gradient copies so only discriminator parameters receive grads.
    """
    real_term = ad.mean(ad.square(ad.sub(real.scores, 1.0)))
    fake_term = ad.mean(ad.square(fake.scores))
    return ad.add(real_term, fake_term)


def lsgan_g_loss(fake: DiscriminatorOutput):
    """Least-squares generator loss pushing fake scores toward 1."""
    return ad.mean(ad.square(ad.sub(fake.scores, 1.0)))


def feature_matching_loss(fm_pred, fm_real):
    """Sum over the seven map pairs of the mean absolute difference.

    Real-side maps are detached: feature matching shapes the prediction,
    not the target statistics.
    """
    if len(fm_pred) != FEATURE_MAP_COUNT or len(fm_real) != FEATURE_MAP_COUNT:
        raise ValueError(f"feature matching needs {FEATURE_MAP_COUNT} maps per side")
    total = None
    for p, r in zip(fm_pred, fm_real):
        if p.shape != r.shape:
            raise ad.ShapeMismatch("feature_matching_loss", p.shape, r.shape)
        term = ad.mean(ad.abs_(ad.sub(p, ad.stop_gradient(r))))
        total = term if total is None else ad.add(total, term)
    return total


def recon_loss(h_pred, h_target):
    """Mean absolute difference; the target side is a constant."""
    h_pred = ad.as_tensor(h_pred)
    h_target = ad.as_tensor(h_target)
    if h_pred.shape != h_target.shape:
        raise ad.ShapeMismatch("recon_loss", h_pred.shape, h_target.shape)
    return ad.mean(ad.abs_(ad.sub(h_pred, ad.stop_gradient(h_target))))


def prosody_g_loss(disc, h_pred_up, h_pr_up, h_ph_up, adversarial=True):
    """Total prosody-predictor loss.

    Before the adversarial stage only the reconstruction term applies;
    afterwards the least-squares generator term and feature matching are
    added at unit weight. Returns (total, parts dict).
    """
    parts = {"recon": recon_loss(h_pred_up.values, h_pr_up.values)}
    total = parts["recon"]
    if adversarial:
        fake = disc(h_pred_up, h_ph_up)
        with ad.no_grad():
            real = disc(EmbeddingSequence(ad.Tensor(h_pr_up.values.data), "frame"),
                        EmbeddingSequence(ad.Tensor(h_ph_up.values.data), "frame"))
        parts["adv"] = lsgan_g_loss(fake)
        parts["fm"] = feature_matching_loss(fake.feature_maps, real.feature_maps)
        total = ad.add(ad.add(total, parts["adv"]), parts["fm"])
    return total, parts
