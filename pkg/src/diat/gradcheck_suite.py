"""Finite-difference verification of every differentiable op and loss.

Each check draws random small instances and compares tape gradients
against central differences in float64.  Used by the ``gradcheck`` CLI
command and by the acceptance tests.
"""

import numpy as np

from . import losses as L
from . import tensor as tc
from .nn import LayerSpec, Network, NetworkSpec, init_params, _act
from .tensor import Tensor, grad_check

TOLERANCE = 1e-4


def _t(rng, *shape, offset=0.0, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale + offset, dtype=np.float64)


def _avoid_kinks(x, eps=1e-2):
    # keep relu/leaky-relu inputs away from zero so FD stays valid
    d = x.data
    d[np.abs(d) < eps] += 2 * eps
    return x


def _tiny_net(name, layers, input_shape, seed):
    net = init_params(Network(NetworkSpec(name, input_shape, tuple(layers))), seed)
    # re-draw all parameters at a larger scale: fan-in init plus sigmoid
    # activations attenuates input gradients toward the 1e-8 denominator
    # floor of grad_check, where FD roundoff dominates the comparison
    rng = np.random.default_rng(seed + 1)
    for k, p in net.params.items():
        p.data = rng.uniform(-0.6, 0.6, size=p.shape).astype(np.float32)
    return net.astype(np.float64)


# The tiny nets below use sigmoid activations throughout so finite
# differences stay valid (relu/leaky-relu kinks are exercised by the
# dedicated op checks, with inputs nudged away from zero).

def tiny_embedder(seed=0, size=8, width=4):
    layers = []
    for i in range(1, 6):
        layers.append(LayerSpec("conv", channels=width, kernel=3, pad=1,
                                stride=2 if i == 2 else 1))
        layers.append(_act("sigmoid", tap=f"conv{i}"))
    return _tiny_net("tiny_embedder", layers, (3, size, size), seed)


def tiny_discriminator(seed=0, size=8, width=4):
    layers = [
        LayerSpec("conv", channels=width, kernel=3, pad=1, stride=1),
        _act("sigmoid", tap="conv4"),
        LayerSpec("conv", channels=width, kernel=3, pad=1, stride=2),
        _act("sigmoid", tap="conv5"),
        LayerSpec("flatten"),
        LayerSpec("dense", units=1),
        _act("sigmoid"),
    ]
    return _tiny_net("tiny_discriminator", layers, (3, size, size), seed)


def tiny_generator(seed=0, size=8, width=4):
    layers = [
        LayerSpec("conv", channels=width, kernel=3, pad=1, stride=1),
        _act("sigmoid"),
        LayerSpec("deconv", channels=3, kernel=3, pad=1, stride=1),
        _act("sigmoid"),
    ]
    return _tiny_net("tiny_generator", layers, (3, size, size), seed)


def tiny_denoiser(seed=0, size=8, width=4):
    layers = [
        LayerSpec("conv", channels=width, kernel=3, pad=1, stride=1),
        _act("sigmoid"),
        LayerSpec("conv", channels=3, kernel=3, pad=1, stride=1),
    ]
    return _tiny_net("tiny_denoiser", layers, (3, size, size), seed)


def tiny_local_enhancer(seed=0, size=8, width=4):
    layers = [
        LayerSpec("conv", channels=width, kernel=3, pad=1, stride=1),
        _act("sigmoid"),
        LayerSpec("conv", channels=3, kernel=3, pad=1, stride=1),
    ]
    return _tiny_net("tiny_local_enhancer", layers, (6, size, size), seed)


def _param_fn(net, key, lossfn):
    """Turn `lossfn()` into a function of one named network parameter."""

    def f(t):
        old = net.params[key]
        net.params[key] = t
        try:
            return lossfn()
        finally:
            net.params[key] = old

    return f


def op_checks(rng):
    """(name, fn, x) triples covering every differentiable tensor op."""
    w = Tensor(rng.standard_normal((4, 3, 3, 3)) * 0.4, dtype=np.float64)
    b = Tensor(rng.standard_normal(4) * 0.1, dtype=np.float64)
    wt = Tensor(rng.standard_normal((3, 4, 3, 3)) * 0.4, dtype=np.float64)
    wd = Tensor(rng.standard_normal((3, 12)) * 0.4, dtype=np.float64)
    bd = Tensor(rng.standard_normal(3) * 0.1, dtype=np.float64)
    other = _t(rng, 2, 3, 4, 4)
    img = _t(rng, 3, 6, 6)
    small = _t(rng, 2, 3, 4, 4)
    vin = _t(rng, 12)

    return [
        ("add", lambda x: tc.tsum(tc.add(x, other)), small),
        ("sub", lambda x: tc.tsum(tc.sub(other, x)), small),
        ("mul", lambda x: tc.tsum(tc.mul(x, other)), small),
        ("mul_scalar", lambda x: tc.tsum(tc.mul_scalar(x, 1.7)), small),
        ("square", lambda x: tc.tsum(tc.square(x)), small),
        ("mean", tc.mean, small),
        ("sum", tc.tsum, small),
        ("frobenius_sq", tc.frobenius_sq, small),
        ("log", lambda x: tc.tsum(tc.log(x)), _t(rng, 3, 4, offset=3.0, scale=0.3)),
        ("clip", lambda x: tc.tsum(tc.clip(x, -0.5, 0.5)), _avoid_kinks(_t(rng, 3, 4), 0.1)),
        ("relu", lambda x: tc.tsum(tc.relu(x)), _avoid_kinks(small)),
        ("leaky_relu", lambda x: tc.tsum(tc.leaky_relu(x, 0.2)), _avoid_kinks(small)),
        ("sigmoid", lambda x: tc.tsum(tc.sigmoid(x)), small),
        ("reshape", lambda x: tc.tsum(tc.reshape(x, -1)), small),
        ("concat", lambda x: tc.tsum(tc.concat([x, other], axis=1)), small),
        ("dense_input", lambda x: tc.tsum(tc.dense(x, wd, bd)), vin),
        ("dense_weight", lambda x: tc.tsum(tc.dense(vin, x, bd)), wd),
        ("conv2d_input", lambda x: tc.tsum(tc.conv2d(x, w, b, 1, 2)), img),
        ("conv2d_weight", lambda x: tc.tsum(tc.conv2d(img, x, b, 1, 1)), w),
        ("conv2d_bias", lambda x: tc.tsum(tc.conv2d(img, w, x, 1, 1)), b),
        ("conv_transpose2d_input",
         lambda x: tc.tsum(tc.conv_transpose2d(x, wt, b, 1, 2, 1)), img),
        ("conv_transpose2d_weight",
         lambda x: tc.tsum(tc.conv_transpose2d(img, x, b, 1, 2, 1)), wt),
        ("gaussian_blur", lambda x: tc.tsum(tc.gaussian_blur(x, 0.9)), img),
        ("instance_norm", lambda x: tc.tsum(tc.mul(tc.instance_norm(x), other)), small),
        ("conv_relu_mean",
         lambda x: tc.mean(tc.relu(tc.conv2d(x, w, b, 1, 1))), _avoid_kinks(img)),
    ]


def loss_checks(rng, seed):
    """(name, fn, x) triples covering every loss in the losses module."""
    cfg = L.LossConfig()
    size = 6
    phi = tiny_embedder(seed, size)
    disc = tiny_discriminator(seed + 10, size)
    gen = tiny_generator(seed + 20, size)
    den = tiny_denoiser(seed + 30, size)
    enh = tiny_local_enhancer(seed + 40, size)

    x1 = Tensor(rng.random((1, 3, size, size)), dtype=np.float64)
    x2 = Tensor(rng.random((1, 3, size, size)), dtype=np.float64)
    mask = np.zeros((1, size, size), dtype=np.float64)
    mask[:, 2:5, 2:5] = 1.0

    def tapped(net, t):
        taps = {}
        net(t, taps)
        return taps

    checks = [
        ("perceptual_content_loss",
         lambda x: L.perceptual_content_loss(tapped(phi, x), tapped(phi, x2), "conv4"),
         x1),
        ("identity_loss", lambda x: L.identity_loss(phi, x, x2, cfg), x1),
        ("adversarial_loss_d",
         lambda x: L.discriminator_loss(disc, x, x2, cfg), x1),
        ("adversarial_loss_t",
         lambda x: L.generator_adv_loss(disc, x, cfg), x1),
        ("reconstruction_objective",
         lambda x: L.reconstruction_objective(gen, phi, x, cfg), x1),
        # denoiser_objective detaches g(x), so check w.r.t. f's weights
        ("denoiser_objective",
         _param_fn(den, "00.weight", lambda: L.denoiser_objective(den, gen, x1)),
         den.params["00.weight"]),
        ("smooth_regularizer", lambda x: L.smooth_regularizer(den, x), x1),
        ("pretrain_recon_loss", lambda x: L.pretrain_recon_loss(gen, x), x1),
        ("pretrain_disc_loss",
         lambda x: L.pretrain_disc_loss(disc, x, Tensor(np.array([[1.0]]), dtype=np.float64)),
         x1),
        ("local_enhance_loss",
         lambda x: L.local_enhance_loss(enh, x, x2, Tensor(mask, dtype=np.float64), phi, cfg),
         x1),
        # the blurred input is detached, so check w.r.t. E's weights
        ("global_enhance_loss",
         _param_fn(gen, "00.weight", lambda: L.global_enhance_loss(gen, x1, 0.9)),
         gen.params["00.weight"]),
        ("adaptive_layer_loss",
         lambda x: L.adaptive_layer_loss(tapped(disc, x), tapped(disc, x2), "conv5"),
         x1),
        ("adaptive_identity_loss",
         lambda x: L.adaptive_identity_loss(disc, x, x2, cfg), x1),
        # composed objectives: check w.r.t. the transform net's weights,
        # where gradients are far from the FD noise floor
        ("diat_objective_t",
         _param_fn(gen, "00.weight",
                   lambda: L.diat_objective(gen, disc, den, phi, x1, x2, cfg)[1]),
         gen.params["00.weight"]),
        ("diat_a_objective_t",
         _param_fn(gen, "00.weight",
                   lambda: L.diat_a_objective(gen, disc, x1, x2, cfg)[1]),
         gen.params["00.weight"]),
    ]
    # parameter-side checks: gradient w.r.t. an upstream weight tensor
    checks.append((
        "identity_loss_wrt_generator_weight",
        _param_fn(gen, "00.weight",
                  lambda: L.identity_loss(phi, gen(x1), x2, cfg)),
        gen.params["00.weight"],
    ))
    checks.append((
        "adv_loss_wrt_disc_weight",
        _param_fn(disc, "00.weight",
                  lambda: L.discriminator_loss(disc, x1, x2, cfg)),
        disc.params["00.weight"],
    ))
    return checks


def run_suite(n_instances=20, eps=1e-5, seed=0, include_losses=True):
    """Returns list of (name, max_rel_err) over all checks."""
    results = []
    groups = {}
    for k in range(n_instances):
        rng = np.random.default_rng([seed, k])
        for name, fn, x in op_checks(rng):
            groups.setdefault(name, []).append(grad_check(fn, x, eps))
        if include_losses:
            for name, fn, x in loss_checks(rng, seed=1000 + k):
                groups.setdefault(name, []).append(grad_check(fn, x, eps))
    for name, errs in groups.items():
        results.append((name, max(errs)))
    return results
