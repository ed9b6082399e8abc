"""Differentiable training objectives for the attribute-transfer system.

Each loss is a pure function from networks / tensors to a scalar Tensor,
built on the active GradTape.  Perceptual losses are squared feature
distances normalized by 1/(2*C*H*W); batched inputs are averaged over
the batch for perceptual/adversarial terms and summed for the pixel-sum
losses, matching their definitions.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .tensor import Tensor, ShapeError

LOG_EPS = 1e-7


@dataclass
class LossConfig:
    lam: float = 0.1           # identity loss weight
    gamma: float = 0.001       # smooth regularizer weight
    w4: float = 0.5            # perceptual layer weights
    w5: float = 0.5
    beta0: float = 0.1         # local-enhancement feature weights
    beta1: float = 0.5
    beta2: float = 1.0
    sigma: float = 1.8         # blur std for the global enhancer
    generator_loss_form: str = "non_saturating"
    adaptive_in_d_update: bool = False

    def __post_init__(self):
        for name in ("lam", "gamma", "w4", "w5", "beta0", "beta1", "beta2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if self.generator_loss_form not in ("saturating", "non_saturating"):
            raise ValueError(f"unknown generator_loss_form {self.generator_loss_form!r}")

    @property
    def layer_weights(self):
        return {"conv4": self.w4, "conv5": self.w5}


def _percept(a, b):
    """1/(2*C*H*W) * ||a - b||_F^2, averaged over the batch if present."""
    if a.shape != b.shape:
        raise ShapeError(f"feature maps differ in shape: {a.shape} vs {b.shape}")
    if a.ndim < 3:
        raise ShapeError("perceptual loss expects (C,H,W) or (N,C,H,W) feature maps")
    denom = 2.0 * float(np.prod(a.shape[-3:]))
    if a.ndim == 4:
        denom *= a.shape[0]
    return tc.frobenius_sq(tc.sub(a, b)) / denom


def perceptual_content_loss(taps_hat, taps_x, layer):
    return _percept(taps_hat[layer], taps_x[layer])


def _tapped(net, x):
    taps = {}
    net(x, taps)
    return taps


def identity_loss(phi, x_hat, x, cfg):
    """Weighted perceptual distance between x_hat and x on phi's conv4/conv5."""
    taps_hat = _tapped(phi, x_hat)
    taps_x = _tapped(phi, x if isinstance(x, Tensor) else Tensor(x))
    terms = [w * perceptual_content_loss(taps_hat, taps_x, layer)
             for layer, w in cfg.layer_weights.items() if w != 0.0]
    return _sum_terms(terms)


def _sum_terms(terms):
    if not terms:
        return Tensor(np.zeros((), dtype=np.float32))
    total = terms[0]
    for t in terms[1:]:
        total = tc.add(total, t)
    return total


def _log_clamped(t):
    return tc.log(tc.clip(t, LOG_EPS, 1.0 - LOG_EPS))


def _check_batch(t, what):
    if t.ndim != 4 or t.shape[0] == 0:
        raise ValueError(f"{what} must be a non-empty batched image tensor")


def discriminator_loss(D, real, fake, cfg=None):
    """-E[log D(a)] - E[log(1 - D(T(x)))], fake detached."""
    _check_batch(real, "real batch")
    _check_batch(fake, "fake batch")
    d_real = D(real)
    d_fake = D(fake.detach())
    loss = tc.sub(tc.mul_scalar(tc.mean(_log_clamped(d_real)), -1.0),
                  tc.mean(_log_clamped(tc.mul_scalar(d_fake, -1.0) + 1.0)))
    return loss


def generator_adv_loss(D, fake, cfg, taps=None):
    """Generator-side attribute term; taps, if given, collects D's features."""
    _check_batch(fake, "fake batch")
    d_fake = D(fake, taps)
    if cfg.generator_loss_form == "saturating":
        return tc.mean(_log_clamped(tc.mul_scalar(d_fake, -1.0) + 1.0))
    return tc.mul_scalar(tc.mean(_log_clamped(d_fake)), -1.0)


def adversarial_losses(D, real, fake, cfg):
    """(loss_D, loss_T) of the minimax attribute game."""
    return discriminator_loss(D, real, fake, cfg), generator_adv_loss(D, fake, cfg)


def reconstruction_objective(g, phi, x, cfg):
    """Perceptual reconstruction loss training the artifact-synthesis net g."""
    return identity_loss(phi, g(x), x, cfg)


def denoiser_objective(f, g, x):
    """||f(g(x)) - x||_F^2 + ||f(x) - x||_F^2 with g frozen."""
    gx = g(x).detach()
    return tc.add(tc.frobenius_sq(tc.sub(f(gx), x)),
                  tc.frobenius_sq(tc.sub(f(x), x)))


def smooth_regularizer(f, tx):
    """||f(T(x)) - T(x)||_F^2; f frozen, gradient flows through both slots."""
    return tc.frobenius_sq(tc.sub(f(tx), tx))


def pretrain_recon_loss(T, x):
    """Sum of squared reconstruction errors over the batch."""
    return tc.frobenius_sq(tc.sub(x, T(x)))


def pretrain_disc_loss(D, x, labels):
    """Sum of (y_i - D(x_i))^2 with y in {0,1}."""
    d = D(x)
    y = labels if isinstance(labels, Tensor) else Tensor(
        np.asarray(labels, dtype=np.float32).reshape(d.shape))
    if y.shape != d.shape:
        raise ShapeError(f"label shape {y.shape} != discriminator output {d.shape}")
    return tc.frobenius_sq(tc.sub(y, d))


def diat_objective(T, D, f, phi, x, a, cfg):
    """Full transform-net objective: adversarial + identity + smoothness."""
    tx = T(x)
    loss_d = discriminator_loss(D, a, tx, cfg)
    loss_t = generator_adv_loss(D, tx, cfg)
    if cfg.lam != 0.0:
        loss_t = tc.add(loss_t, tc.mul_scalar(identity_loss(phi, tx, x, cfg), cfg.lam))
    if cfg.gamma != 0.0:
        loss_t = tc.add(loss_t, tc.mul_scalar(smooth_regularizer(f, tx), cfg.gamma))
    return loss_d, loss_t


def _expand_mask(mask, like):
    """Match a (1,S,S), (C,S,S), (N,1,S,S) or (N,C,S,S) mask to `like`."""
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask, dtype=np.float32)
    if m.ndim not in (3, 4) or m.shape[-2:] != like.shape[-2:]:
        raise ShapeError(f"mask shape {m.shape} does not match image {like.shape}")
    c = like.shape[-3]
    if m.shape[-3] == 1 and c != 1:
        m = np.repeat(m, c, axis=-3)
    elif m.shape[-3] != c:
        raise ShapeError(f"mask has {m.shape[-3]} channels, image has {c}")
    if like.ndim == 4 and m.ndim == 3:
        m = np.broadcast_to(m, like.shape).copy()
    if m.shape != like.shape:
        raise ShapeError(f"mask shape {m.shape} does not match image {like.shape}")
    return Tensor(m.astype(like.dtype))


def local_enhance_loss(E, tx, x, mask, phi, cfg):
    """Pixel fidelity outside the mask + perceptual fidelity to T(x) inside."""
    m = _expand_mask(mask, x)
    inv = Tensor(1.0 - m.data)
    ex = E(tc.concat([x, tx], axis=-3))
    # normalized like the perceptual terms so the two sides stay balanced
    pixel = tc.mul_scalar(tc.mean(tc.square(tc.mul(inv, tc.sub(ex, x)))), 0.5)
    betas = (cfg.beta0, cfg.beta1, cfg.beta2)
    terms = [pixel]
    if any(b != 0.0 for b in betas):
        taps_t = _tapped(phi, tc.mul(m, tx))
        taps_e = _tapped(phi, tc.mul(m, ex))
        for i, beta in enumerate(betas):
            if beta == 0.0:
                continue
            terms.append(tc.mul_scalar(
                perceptual_content_loss(taps_t, taps_e, f"conv{i + 1}"), beta))
    return _sum_terms(terms)


def global_enhance_loss(E, x, sigma):
    """||E(B(x)) - x||_F^2 where B is a Gaussian blur of std sigma."""
    bx = tc.gaussian_blur(x if isinstance(x, Tensor) else Tensor(x), sigma)
    return tc.frobenius_sq(tc.sub(E(bx.detach()), x))


def adaptive_layer_loss(d_taps_hat, d_taps_x, layer):
    """Perceptual distance on discriminator feature maps."""
    return perceptual_content_loss(d_taps_hat, d_taps_x, layer)


def adaptive_identity_loss(D, tx, x, cfg):
    """Identity loss on the discriminator's conv4/conv5 feature maps."""
    taps_hat = _tapped(D, tx)
    taps_x = _tapped(D, x if isinstance(x, Tensor) else Tensor(x))
    terms = [w * adaptive_layer_loss(taps_hat, taps_x, layer)
             for layer, w in cfg.layer_weights.items() if w != 0.0]
    return _sum_terms(terms)


def diat_a_objective(T, D, x, a, cfg):
    """Transform-net objective with the adaptive identity loss, no smooth term."""
    tx = T(x)
    loss_d = discriminator_loss(D, a, tx, cfg)
    if cfg.adaptive_in_d_update and cfg.lam != 0.0:
        loss_d = tc.add(loss_d, tc.mul_scalar(
            adaptive_identity_loss(D, tx.detach(), x, cfg), cfg.lam))
    loss_t = generator_adv_loss(D, tx, cfg)
    if cfg.lam != 0.0:
        loss_t = tc.add(loss_t, tc.mul_scalar(
            adaptive_identity_loss(D, tx, x, cfg), cfg.lam))
    return loss_d, loss_t
