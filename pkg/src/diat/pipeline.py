"""Training orchestration: pretraining, the alternating adversarial loop,
regularizer and enhancement training, transfer inference and evaluation.

All trainers are deterministic under their seed: batch sampling uses a
dedicated numpy Generator whose state rides along in checkpoints, so a
resumed run replays the uninterrupted one bit-exactly.
"""

import json
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import data as dataset_mod
from . import losses as L
from . import nn
from . import tensor as tc
from .errors import ConfigError, DivergenceError, MissingPrerequisiteError
from .optim import Adam, zero_grads
from .tensor import GradTape, Tensor

VARIANTS = ("DIAT", "DIAT-A", "DIAT-A0", "DIAT1", "DIAT2", "DIAT3")


@dataclass
class TrainConfig:
    variant: str = "DIAT-A"
    loss: L.LossConfig = field(default_factory=L.LossConfig)
    lr_transform: float = 0.0        # 0 = resolve from variant
    lr_discriminator: float = 0.0
    dstep: int = 1
    tstep: int = 2
    batch_size: int = 16
    max_iters: int = 3000
    pretrain_transform_steps: int = 1500
    pretrain_disc_steps: int = 400
    embedder_steps: int = 800
    regularizer_steps: int = 600
    enhancer_steps: int = 2400
    seed: int = 0
    scale_factor: float = 0.25
    attribute: str = "glasses"
    attribute_target: bool = False   # desired attribute value after transfer
    enhancement: str = "local"       # local | global | none
    input_set_size: int = 2000
    heldout_fraction: float = 0.2
    eval_every: int = 10
    plateau_window: int = 200
    plateau_min_delta: float = 0.005
    checkpoint_every: int = 100

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.enhancement not in ("local", "global", "none"):
            raise ConfigError(f"unknown enhancement mode {self.enhancement!r}")
        if self.dstep < 1 or self.tstep < 1 or self.batch_size < 1:
            raise ConfigError("dstep, tstep and batch_size must be >= 1")

    # --- variant contract -------------------------------------------------
    @property
    def identity_source(self):
        """Where the identity loss lives: embedder features, discriminator
        features (adaptive), or nowhere."""
        if self.variant in ("DIAT-A", "DIAT-A0"):
            return "adaptive"
        if self.variant == "DIAT1":
            return "none"
        return "embedder"

    @property
    def uses_smooth_term(self):
        return self.variant in ("DIAT", "DIAT3")

    @property
    def uses_enhancer(self):
        return self.variant in ("DIAT", "DIAT-A") and self.enhancement != "none"

    def effective_loss(self):
        cfg = self.loss
        if self.variant == "DIAT1":
            cfg = replace(cfg, lam=0.0, gamma=0.0)
        elif not self.uses_smooth_term:
            cfg = replace(cfg, gamma=0.0)
        return cfg

    def active_loss_terms(self):
        cfg = self.effective_loss()
        terms = {"adversarial"}
        if cfg.lam != 0.0 and self.identity_source == "adaptive":
            terms.add("adaptive_identity")
        elif cfg.lam != 0.0 and self.identity_source == "embedder":
            terms.add("identity")
        if cfg.gamma != 0.0 and self.uses_smooth_term:
            terms.add("smooth")
        return terms

    def learning_rates(self):
        base = 1e-5 if self.variant in ("DIAT-A", "DIAT-A0") else 1e-4
        return (self.lr_transform or base, self.lr_discriminator or base)


class TrainReport:
    """Append-only per-iteration scalars, serialized as tab-separated UTF-8."""

    COLUMNS = ("iter", "loss_d", "loss_t_adv", "loss_t_id", "loss_t_smooth",
               "loss_t_total", "attr_score", "id_dist")

    def __init__(self):
        self.rows = []
        self.wall_clock = 0.0

    def add(self, **kw):
        self.rows.append(tuple(kw[c] for c in self.COLUMNS))

    @staticmethod
    def _fmt(v):
        return str(int(v)) if isinstance(v, (int, np.integer)) else f"{float(v):.6g}"

    def line(self, row):
        return "\t".join(self._fmt(v) for v in row)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\t".join(self.COLUMNS) + "\n")
            for row in self.rows:
                fh.write(self.line(row) + "\n")

    @classmethod
    def load(cls, path):
        rep = cls()
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n").split("\t")
            assert tuple(header) == cls.COLUMNS
            for line in fh:
                vals = line.rstrip("\n").split("\t")
                rep.rows.append(tuple(int(v) if i == 0 else float(v)
                                      for i, v in enumerate(vals)))
        return rep

    def iterations_to_score(self, threshold):
        idx = self.COLUMNS.index("attr_score")
        for row in self.rows:
            if row[idx] >= threshold:
                return row[0]
        return None


# ---------------------------------------------------------------------------
# batching helpers

def images_array(manifest, rows):
    return np.stack([manifest.image(r["index"]) for r in rows])


def masks_array(manifest, rows, attribute):
    return np.stack([manifest.mask(r["index"], attribute) for r in rows])


def _sample_batch(rng, pool, n):
    idx = rng.integers(0, len(pool), size=n)
    return pool[idx]


def _rng_state(rng):
    return json.dumps(rng.bit_generator.state, sort_keys=True)


def _restore_rng(state_json):
    rng = np.random.default_rng(0)
    rng.bit_generator.state = json.loads(state_json)
    return rng


def _finite_or_raise(value, what):
    if not np.isfinite(value):
        raise DivergenceError(f"non-finite {what}: {value}")
    return value


# ---------------------------------------------------------------------------
# surrogate identity embedder

def train_embedder(phi, manifest, rows, steps, seed, lr=1e-3, batch_size=32):
    """Train the identity embedder as a classifier over synthetic identities.

    Returns held-out identity accuracy.
    """
    train_rows, held_rows = dataset_mod.split_train_heldout(rows)
    imgs = images_array(manifest, train_rows)
    ids = np.array([r["identity"] for r in train_rows])
    n_ids = phi.spec.layers[-1].units
    rng = np.random.default_rng([seed, 31])
    opt = Adam(phi.params, lr=lr)
    for _ in range(steps):
        idx = rng.integers(0, len(imgs), size=batch_size)
        x = Tensor(imgs[idx])
        onehot = np.zeros((batch_size, n_ids), dtype=np.float32)
        onehot[np.arange(batch_size), ids[idx]] = 1.0
        with GradTape() as tape:
            # least squares on the linear logits: the sigmoid variant
            # saturates into the all-negative solution with 64 classes
            loss = tc.frobenius_sq(tc.sub(Tensor(onehot), phi(x)))
        zero_grads(phi.parameters())
        tape.backward(loss)
        opt.step()
    held = images_array(manifest, held_rows)
    held_ids = np.array([r["identity"] for r in held_rows])
    pred = _forward_batched(phi, held).argmax(axis=1)
    return float((pred == held_ids).mean())


def _forward_batched(net, imgs, batch=64, taps_layer=None):
    outs = []
    for i in range(0, len(imgs), batch):
        taps = {}
        y = net(Tensor(imgs[i:i + batch]), taps)
        outs.append(taps[taps_layer].data if taps_layer else y.data)
    return np.concatenate(outs)


def embed(phi, imgs, layer="conv5"):
    """Spatially pooled feature embedding used for identity distances."""
    feats = _forward_batched(phi, imgs, taps_layer=layer)
    return feats.mean(axis=(2, 3))


# ---------------------------------------------------------------------------
# pretraining

def pretrain_transform(T, manifest, rows, steps, seed, lr=1e-3, batch_size=16):
    """Autoencoder pretraining; returns held-out mean per-pixel MSE."""
    train_rows, held_rows = dataset_mod.split_train_heldout(rows)
    imgs = images_array(manifest, train_rows)
    rng = np.random.default_rng([seed, 47])
    opt = Adam(T.params, lr=lr)
    for _ in range(steps):
        x = Tensor(_sample_batch(rng, imgs, batch_size))
        with GradTape() as tape:
            loss = L.pretrain_recon_loss(T, x)
        zero_grads(T.parameters())
        tape.backward(loss)
        _finite_or_raise(loss.item(), "pretraining loss")
        opt.step()
    held = images_array(manifest, held_rows)
    recon = _forward_batched(T, held)
    return float(np.mean((recon - held) ** 2))


def pretrain_discriminator(D, manifest, rows, attribute, target, steps, seed,
                           lr=1e-3, batch_size=16, stats=None):
    """Squared-error pretraining with balanced positive/negative batches.

    Positives are rows whose attribute equals the guided-set target.
    Returns held-out accuracy at threshold 0.5.
    """
    train_rows, held_rows = dataset_mod.split_train_heldout(rows)
    pos_rows = [r for r in train_rows if r[attribute] == bool(target)]
    neg_rows = [r for r in train_rows if r[attribute] != bool(target)]
    if not pos_rows or not neg_rows:
        raise ValueError(f"attribute {attribute!r} is degenerate: "
                         f"{len(pos_rows)} positives / {len(neg_rows)} negatives")
    pos = images_array(manifest, pos_rows)
    neg = images_array(manifest, neg_rows)
    rng = np.random.default_rng([seed, 53])
    opt = Adam(D.params, lr=lr)
    half = batch_size // 2
    for _ in range(steps):
        xb = np.concatenate([_sample_batch(rng, pos, half),
                             _sample_batch(rng, neg, batch_size - half)])
        yb = np.concatenate([np.ones((half, 1), dtype=np.float32),
                             np.zeros((batch_size - half, 1), dtype=np.float32)])
        if stats is not None:
            stats["pos"] = stats.get("pos", 0) + half
            stats["neg"] = stats.get("neg", 0) + batch_size - half
        with GradTape() as tape:
            loss = L.pretrain_disc_loss(D, Tensor(xb), Tensor(yb))
        zero_grads(D.parameters())
        tape.backward(loss)
        _finite_or_raise(loss.item(), "discriminator pretraining loss")
        opt.step()
    held = images_array(manifest, held_rows)
    held_y = np.array([r[attribute] == bool(target) for r in held_rows])
    pred = _forward_batched(D, held).reshape(-1) > 0.5
    return float((pred == held_y).mean())


# ---------------------------------------------------------------------------
# perceptual regularizer networks (g then f)

def train_reconstruction_net(g, phi, manifest, rows, steps, seed, lr=1e-3,
                             batch_size=16):
    imgs = images_array(manifest, rows)
    rng = np.random.default_rng([seed, 61])
    opt = Adam(g.params, lr=lr)
    last = None
    for _ in range(steps):
        x = Tensor(_sample_batch(rng, imgs, batch_size))
        with GradTape() as tape:
            loss = L.reconstruction_objective(g, phi, x, L.LossConfig())
        zero_grads(g.parameters())
        tape.backward(loss)
        last = _finite_or_raise(loss.item(), "reconstruction loss")
        opt.step()
    return last


def train_denoising_net(f, g, manifest, rows, steps, seed, lr=1e-3, batch_size=16):
    if not g.frozen:
        raise MissingPrerequisiteError(
            "denoiser training requires a frozen reconstruction net; "
            "call g.freeze() after training it")
    imgs = images_array(manifest, rows)
    rng = np.random.default_rng([seed, 67])
    opt = Adam(f.params, lr=lr)
    for _ in range(steps):
        x = Tensor(_sample_batch(rng, imgs, batch_size))
        with GradTape() as tape:
            loss = L.denoiser_objective(f, g, x)
        zero_grads(f.parameters())
        tape.backward(loss)
        _finite_or_raise(loss.item(), "denoiser loss")
        opt.step()


def train_regularizer(g, f, phi, manifest, rows, steps, seed, lr=1e-3,
                      batch_size=16):
    """Train g on perceptual reconstruction, freeze it, then train f against
    g's artifacts.  Returns mean ||f(x)-x||^2 per pixel on held-out images."""
    train_rows, held_rows = dataset_mod.split_train_heldout(rows)
    train_reconstruction_net(g, phi, manifest, train_rows, steps, seed, lr, batch_size)
    g.freeze()
    train_denoising_net(f, g, manifest, train_rows, steps, seed, lr, batch_size)
    held = images_array(manifest, held_rows)
    fx = _forward_batched(f, held)
    return float(np.mean((fx - held) ** 2))


# ---------------------------------------------------------------------------
# Algorithm: alternating adversarial training of the transform network

def _transform_loss(cfg, loss_cfg, T, D, f, phi, x):
    """Returns (total, adv, id, smooth) loss tensors for one T update."""
    tx = T(x)
    adv = L.generator_adv_loss(D, tx, loss_cfg)
    total = adv
    id_term = None
    smooth_term = None
    if loss_cfg.lam != 0.0:
        if cfg.identity_source == "adaptive":
            id_term = L.adaptive_identity_loss(D, tx, x, loss_cfg)
        else:
            id_term = L.identity_loss(phi, tx, x, loss_cfg)
        total = tc.add(total, tc.mul_scalar(id_term, loss_cfg.lam))
    if loss_cfg.gamma != 0.0:
        smooth_term = L.smooth_regularizer(f, tx)
        total = tc.add(total, tc.mul_scalar(smooth_term, loss_cfg.gamma))
    return total, adv, id_term, smooth_term


def _check_prerequisites(cfg, nets):
    missing = []
    if cfg.identity_source == "embedder" and nets.get("embedder") is None:
        missing.append("identity embedder (pretrain phase)")
    if cfg.uses_smooth_term and nets.get("denoiser") is None:
        missing.append("denoising net (regularizer phase)")
    if missing:
        raise MissingPrerequisiteError(
            f"variant {cfg.variant} requires: " + "; ".join(missing))


def train_transform(cfg, nets, manifest, out_dir=None, attr_scorer=None,
                    id_scorer=None, resume=False):
    """Alternating GAN training of the transform network (the main loop).

    nets: dict with 'transform', 'discriminator' and, per variant,
    'embedder' and/or 'denoiser'.  When out_dir is given, a report and
    resumable state checkpoints are written there.
    """
    T, D = nets["transform"], nets["discriminator"]
    f, phi = nets.get("denoiser"), nets.get("embedder")
    _check_prerequisites(cfg, nets)
    loss_cfg = cfg.effective_loss()
    lr_t, lr_d = cfg.learning_rates()
    opt_t = Adam(T.params, lr=lr_t)
    opt_d = Adam(D.params, lr=lr_d)

    guided_rows, input_rows = dataset_mod.split_guided_and_input(
        manifest, cfg.attribute, target=cfg.attribute_target,
        input_size=cfg.input_set_size, seed=cfg.seed)
    train_inputs, held_inputs = dataset_mod.split_train_heldout(
        input_rows, cfg.heldout_fraction)
    guided = images_array(manifest, guided_rows)
    inputs = images_array(manifest, train_inputs)
    probe = images_array(manifest, held_inputs[:64]) if held_inputs else inputs[:64]

    rng = np.random.default_rng([cfg.seed, 71])
    report = TrainReport()
    start_iter = 0
    report_path = os.path.join(out_dir, "report.tsv") if out_dir else None

    attr_score = float("nan")
    id_dist = float("nan")
    eval_history = []

    if resume:
        if not out_dir:
            raise ConfigError("resume requires an output directory")
        start_iter = load_train_state(out_dir, T, D, opt_t, opt_d, rng)
        prev = TrainReport.load(report_path)
        report.rows = prev.rows[:start_iter]
        ai = TrainReport.COLUMNS.index("attr_score")
        di = TrainReport.COLUMNS.index("id_dist")
        if report.rows:
            attr_score = report.rows[-1][ai]
            id_dist = report.rows[-1][di]
        eval_history = [r[ai] for r in report.rows if r[0] % cfg.eval_every == 0]

    t0 = time.monotonic()

    def _probe_scores():
        fakes = _forward_batched(T, probe)
        scores = {}
        scores["attr"] = attr_scorer(fakes) if attr_scorer else float("nan")
        scores["id"] = id_scorer(probe, fakes) if id_scorer else float("nan")
        return scores

    window_evals = max(2, cfg.plateau_window // max(cfg.eval_every, 1))
    for it in range(start_iter, cfg.max_iters):
        # fresh fake pool from the iteration-k transform parameters
        for _ in range(cfg.dstep):
            xb = Tensor(_sample_batch(rng, inputs, cfg.batch_size))
            ab = Tensor(_sample_batch(rng, guided, cfg.batch_size))
            fake = T(xb).detach()
            with GradTape() as tape:
                if cfg.identity_source == "adaptive" and loss_cfg.adaptive_in_d_update:
                    loss_d, _ = L.diat_a_objective(T, D, xb, ab, loss_cfg)
                else:
                    loss_d = L.discriminator_loss(D, ab, fake, loss_cfg)
            zero_grads(D.parameters())
            tape.backward(loss_d)
            d_val = _finite_or_raise(loss_d.item(), "discriminator loss")
            opt_d.step()

        for _ in range(cfg.tstep):
            xb = Tensor(_sample_batch(rng, inputs, cfg.batch_size))
            with GradTape() as tape:
                total, adv, id_term, smooth_term = _transform_loss(
                    cfg, loss_cfg, T, D, f, phi, xb)
            zero_grads(T.parameters())
            if phi is not None:
                zero_grads(phi.parameters())
            zero_grads(D.parameters())
            tape.backward(total)
            t_val = _finite_or_raise(total.item(), "transform loss")
            opt_t.step()

        if attr_scorer or id_scorer:
            if it % cfg.eval_every == 0:
                scores = _probe_scores()
                attr_score, id_dist = scores["attr"], scores["id"]
                eval_history.append(attr_score)

        report.add(iter=it, loss_d=d_val,
                   loss_t_adv=adv.item(),
                   loss_t_id=id_term.item() if id_term is not None else 0.0,
                   loss_t_smooth=smooth_term.item() if smooth_term is not None else 0.0,
                   loss_t_total=t_val,
                   attr_score=attr_score, id_dist=id_dist)

        if out_dir and (it + 1) % cfg.checkpoint_every == 0:
            save_train_state(out_dir, T, D, opt_t, opt_d, rng, it + 1)
            report.save(report_path)

        # plateau detection on the independent attribute score
        if attr_scorer and len(eval_history) >= window_evals:
            tail = eval_history[-window_evals:]
            if max(tail) - min(tail) < cfg.plateau_min_delta:
                break

    report.wall_clock = time.monotonic() - t0
    if out_dir:
        save_train_state(out_dir, T, D, opt_t, opt_d, rng, len(report.rows))
        report.save(report_path)
    return report


def save_train_state(out_dir, T, D, opt_t, opt_d, rng, iteration):
    os.makedirs(out_dir, exist_ok=True)
    nn.save_checkpoint(os.path.join(out_dir, "transform.ckpt"), T,
                       opt_state=opt_t.state_dict(), step=iteration,
                       rng_state=_rng_state(rng))
    nn.save_checkpoint(os.path.join(out_dir, "discriminator.ckpt"), D,
                       opt_state=opt_d.state_dict(), step=iteration)


def load_train_state(out_dir, T, D, opt_t, opt_d, rng):
    t_path = os.path.join(out_dir, "transform.ckpt")
    d_path = os.path.join(out_dir, "discriminator.ckpt")
    if not (os.path.exists(t_path) and os.path.exists(d_path)):
        raise MissingPrerequisiteError(f"no training state under {out_dir}")
    opt_state, step, rng_state = nn.load_checkpoint(t_path, T)
    if opt_state:
        opt_t.load_state_dict(opt_state)
    if rng_state:
        rng.bit_generator.state = json.loads(rng_state)
    d_state, _, _ = nn.load_checkpoint(d_path, D)
    if d_state:
        opt_d.load_state_dict(d_state)
    return int(step)


# ---------------------------------------------------------------------------
# enhancement networks

def train_local_enhancer(E, T, manifest, rows, attribute, phi, loss_cfg,
                         steps, seed, lr=1e-3, batch_size=16):
    """Train E on (x, T(x)) pairs with the attribute mask; T stays frozen."""
    imgs = images_array(manifest, rows)
    masks = masks_array(manifest, rows, attribute)
    rng = np.random.default_rng([seed, 83])
    opt = Adam(E.params, lr=lr)
    for _ in range(steps):
        idx = rng.integers(0, len(imgs), size=batch_size)
        x = Tensor(imgs[idx])
        tx = T(x).detach()
        with GradTape() as tape:
            loss = L.local_enhance_loss(E, tx, x, masks[idx], phi, loss_cfg)
        zero_grads(E.parameters())
        tape.backward(loss)
        _finite_or_raise(loss.item(), "local enhancement loss")
        opt.step()


def train_global_enhancer(E, manifest, rows, sigma, steps, seed, lr=1e-3,
                          batch_size=16):
    """Train E to invert a Gaussian blur of std sigma on clean images."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    imgs = images_array(manifest, rows)
    rng = np.random.default_rng([seed, 89])
    opt = Adam(E.params, lr=lr)
    for _ in range(steps):
        x = Tensor(_sample_batch(rng, imgs, batch_size))
        with GradTape() as tape:
            loss = L.global_enhance_loss(E, x, sigma)
        zero_grads(E.parameters())
        tape.backward(loss)
        _finite_or_raise(loss.item(), "global enhancement loss")
        opt.step()


# ---------------------------------------------------------------------------
# inference and evaluation

def run_transfer(T, E, mode, images, sigma=1.8):
    """Apply the transform (+ optional enhancement); returns float arrays
    clamped to [0,1], batch order preserved."""
    single = images.ndim == 3
    x = images[None] if single else images
    out = []
    for i in range(0, len(x), 64):
        xb = Tensor(x[i:i + 64])
        tx = T(xb)
        if mode == "none" or E is None:
            y = tx
        elif mode == "local":
            y = E(tc.concat([xb, tx], axis=-3))
        elif mode == "global":
            y = E(tc.gaussian_blur(tx, sigma))
        else:
            raise ValueError(f"unknown transfer mode {mode!r}")
        out.append(np.clip(y.data, 0.0, 1.0))
    out = np.concatenate(out)
    return out[0] if single else out


def transfer_latency(T, E, mode, image, repeats=10, sigma=1.8):
    """Median seconds per single-image transfer."""
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        run_transfer(T, E, mode, image, sigma=sigma)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def make_attr_scorer(c_attr, target):
    """Fraction of images the independent classifier labels as `target`."""
    want = 1.0 if target else 0.0

    def scorer(imgs):
        pred = _forward_batched(c_attr, imgs).reshape(-1) > 0.5
        return float((pred == bool(want)).mean())

    return scorer


def make_id_scorer(phi_eval):
    """Mean matched-pair embedding distance between sources and transfers."""

    def scorer(sources, transfers):
        e1 = embed(phi_eval, sources)
        e2 = embed(phi_eval, transfers)
        return float(np.linalg.norm(e1 - e2, axis=1).mean())

    return scorer


def identity_distances(phi_eval, sources, transfers, seed=0):
    """(matched mean distance, random non-matching pair baseline)."""
    e1 = embed(phi_eval, sources)
    e2 = embed(phi_eval, transfers)
    matched = float(np.linalg.norm(e1 - e2, axis=1).mean())
    rng = np.random.default_rng([seed, 97])
    p = rng.permutation(len(e1))
    # pair each source with the next transfer in a random cycle: never matched
    baseline = float(np.linalg.norm(e1[p] - e2[np.roll(p, 1)], axis=1).mean())
    return matched, baseline


def evaluate(T, E, mode, phi_eval, c_attr, manifest, heldout_rows, attribute,
             target, sigma=1.8, seed=0):
    """Attribute success, identity distances and out-of-mask pixel change."""
    sources = images_array(manifest, heldout_rows)
    transfers = run_transfer(T, E, mode, sources, sigma=sigma)
    scorer = make_attr_scorer(c_attr, target)
    matched, baseline = identity_distances(phi_eval, sources, transfers, seed=seed)
    metrics = {
        "attr_success": scorer(transfers),
        "id_dist_matched": matched,
        "id_dist_baseline": baseline,
    }
    if attribute in dataset_mod.LOCAL_ATTRIBUTES:
        masks = masks_array(manifest, heldout_rows, attribute)
        outside = (1.0 - masks)
        delta = np.abs(transfers - sources) * outside
        metrics["pixel_change_outside_mask"] = float(
            delta.sum() / (outside.sum() * 3.0))
    return metrics


# ---------------------------------------------------------------------------
# independent evaluation models (disjoint seed/dataset from training)

def build_attribute_classifier(scale_factor=0.25):
    from .nn import LayerSpec, NetworkSpec, Network, scaled_size, _act
    s = scaled_size(scale_factor)
    layers = (
        LayerSpec("conv", channels=16, kernel=3, pad=1, stride=2),
        _act("leaky_relu"),
        LayerSpec("conv", channels=32, kernel=3, pad=1, stride=2),
        _act("leaky_relu"),
        LayerSpec("conv", channels=32, kernel=3, pad=1, stride=2),
        _act("leaky_relu"),
        LayerSpec("flatten"),
        LayerSpec("dense", units=1),
        _act("sigmoid"),
    )
    return Network(NetworkSpec("attribute_classifier", (3, s, s), layers, scale_factor))


def train_attribute_classifier(c_attr, manifest, rows, attribute, steps, seed,
                               lr=1e-3, batch_size=32):
    """Train the evaluation classifier; returns held-out accuracy."""
    train_rows, held_rows = dataset_mod.split_train_heldout(rows)
    imgs = images_array(manifest, train_rows)
    labels = np.array([[1.0 if r[attribute] else 0.0] for r in train_rows],
                      dtype=np.float32)
    rng = np.random.default_rng([seed, 101])
    opt = Adam(c_attr.params, lr=lr)
    for _ in range(steps):
        idx = rng.integers(0, len(imgs), size=batch_size)
        with GradTape() as tape:
            loss = L.pretrain_disc_loss(c_attr, Tensor(imgs[idx]), Tensor(labels[idx]))
        zero_grads(c_attr.parameters())
        tape.backward(loss)
        opt.step()
    held = images_array(manifest, held_rows)
    held_y = np.array([r[attribute] for r in held_rows])
    pred = _forward_batched(c_attr, held).reshape(-1) > 0.5
    return float((pred == held_y).mean())
