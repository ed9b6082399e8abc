"""Command-line interface: ``diat <command>``.

Commands cover the whole workflow: gen-data, pretrain, train,
enhance-train, transfer, eval and gradcheck.  Exit codes: 0 success,
2 config error, 3 missing prerequisite, 4 numerical divergence,
5 I/O error.

Set DIAT_THREADS to cap BLAS thread count (applied before numpy loads,
so it only takes effect when this module is the process entry point).
"""

import os

if "DIAT_THREADS" in os.environ:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["DIAT_THREADS"])

import argparse
import sys

import numpy as np

from . import data as dataset_mod
from . import nn
from . import pipeline as pl
from .config import RunConfig
from .errors import ConfigError, DivergenceError, MissingPrerequisiteError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PREREQ = 3
EXIT_DIVERGED = 4
EXIT_IO = 5

LOCK_NAME = ".diat.lock"
EVAL_SEED_OFFSET = 9999


def _log(cfg, level, msg):
    if cfg.verbosity >= level:
        print(msg, flush=True)


class _DirLock:
    """Exclusive per-output-directory lock; refuses concurrent writers."""

    def __init__(self, directory):
        os.makedirs(directory, exist_ok=True)
        self.path = os.path.join(directory, LOCK_NAME)
        self.fd = None

    def __enter__(self):
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise OSError(
                f"output directory is locked by another run: {self.path}")
        os.write(self.fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc):
        if self.fd is not None:
            os.close(self.fd)
            os.unlink(self.path)


def _snapshot(cfg, directory):
    os.makedirs(directory, exist_ok=True)
    cfg.save(os.path.join(directory, "effective-config.txt"))


def _load_config(args):
    cfg = RunConfig()
    if args.config:
        cfg = RunConfig.load(args.config)
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    cfg.update(overrides)
    return cfg


def _build_core_nets(cfg):
    sf = cfg.scale_factor
    seed = cfg.seed
    nets = {
        "transform": nn.init_params(nn.build_transform_net(sf), seed + 1),
        "discriminator": nn.init_params(nn.build_discriminator(sf), seed + 2),
    }
    return nets


def _ckpt(cfg, name):
    return os.path.join(cfg.checkpoint_dir, name)


def _require(path, phase):
    if not os.path.exists(path):
        raise MissingPrerequisiteError(
            f"missing checkpoint {path}; run 'diat {phase}' first")
    return path


def _load_net(path, net):
    return nn.load_checkpoint(path, net)


def _manifest(cfg):
    path = os.path.join(cfg.dataset_root, "manifest.tsv")
    if not os.path.exists(path):
        raise MissingPrerequisiteError(
            f"no dataset manifest at {path}; run 'diat gen-data' first")
    return dataset_mod.DatasetManifest.load(cfg.dataset_root)


# ---------------------------------------------------------------------------
# evaluation models: trained on a dataset disjoint from everything the
# training loop sees (different seed stream), to keep metrics non-circular

def _eval_dataset(cfg):
    root = cfg.dataset_root + "_eval"
    path = os.path.join(root, "manifest.tsv")
    if not os.path.exists(path):
        dataset_mod.generate_dataset(
            root, seed=cfg.seed + EVAL_SEED_OFFSET, n=min(cfg.n_samples, 1200),
            s=cfg.image_size, n_identities=cfg.n_identities)
    return dataset_mod.DatasetManifest.load(root)


def _eval_models(cfg):
    """(phi_eval, c_attr), cached under checkpoint_dir/eval."""
    eval_dir = os.path.join(cfg.checkpoint_dir, "eval")
    os.makedirs(eval_dir, exist_ok=True)
    man = _eval_dataset(cfg)
    seed = cfg.seed + EVAL_SEED_OFFSET

    phi = nn.init_params(
        nn.build_identity_embedder(cfg.scale_factor, cfg.n_identities), seed + 1)
    phi_path = os.path.join(eval_dir, "phi_eval.ckpt")
    if os.path.exists(phi_path):
        _load_net(phi_path, phi)
    else:
        acc = pl.train_embedder(phi, man, man.rows, cfg.embedder_steps, seed)
        _log(cfg, 1, f"eval embedder identity accuracy: {acc:.3f}")
        nn.save_checkpoint(phi_path, phi)

    c_attr = nn.init_params(
        pl.build_attribute_classifier(cfg.scale_factor), seed + 2)
    c_path = os.path.join(eval_dir, f"c_attr_{cfg.attribute}.ckpt")
    if os.path.exists(c_path):
        _load_net(c_path, c_attr)
    else:
        acc = pl.train_attribute_classifier(
            c_attr, man, man.rows, cfg.attribute, cfg.embedder_steps, seed)
        _log(cfg, 1, f"eval classifier {cfg.attribute!r} accuracy: {acc:.3f}")
        if acc < 0.95:
            _log(cfg, 0, f"warning: eval classifier accuracy {acc:.3f} < 0.95; "
                         "attribute scores may be unreliable")
        nn.save_checkpoint(c_path, c_attr)
    return phi, c_attr


# ---------------------------------------------------------------------------
# commands

def cmd_gen_data(cfg):
    with _DirLock(cfg.dataset_root):
        _snapshot(cfg, cfg.dataset_root)
        man = dataset_mod.generate_dataset(
            cfg.dataset_root, seed=cfg.seed, n=cfg.n_samples,
            s=cfg.image_size, n_identities=cfg.n_identities)
        counts = man.attribute_counts()
        _log(cfg, 1, f"wrote {len(man.rows)} samples at "
                     f"{cfg.image_size}x{cfg.image_size} to {cfg.dataset_root}")
        _log(cfg, 1, "attribute counts: " +
             ", ".join(f"{k}={v}" for k, v in counts.items()))
    return EXIT_OK


def cmd_pretrain(cfg):
    man = _manifest(cfg)
    tc_cfg = cfg.train_config()
    with _DirLock(cfg.checkpoint_dir):
        _snapshot(cfg, cfg.checkpoint_dir)
        nets = _build_core_nets(cfg)

        mse = pl.pretrain_transform(nets["transform"], man, man.rows,
                                    cfg.pretrain_transform_steps, cfg.seed)
        nn.save_checkpoint(_ckpt(cfg, "transform_pretrain.ckpt"),
                           nets["transform"])
        _log(cfg, 1, f"transform pretraining held-out MSE: {mse:.5f}")

        acc = pl.pretrain_discriminator(
            nets["discriminator"], man, man.rows, cfg.attribute,
            cfg.attribute_target, cfg.pretrain_disc_steps, cfg.seed)
        nn.save_checkpoint(_ckpt(cfg, "discriminator_pretrain.ckpt"),
                           nets["discriminator"])
        _log(cfg, 1, f"discriminator pretraining held-out accuracy: {acc:.3f}")

        if tc_cfg.identity_source == "embedder" or tc_cfg.uses_smooth_term:
            phi = nn.init_params(
                nn.build_identity_embedder(cfg.scale_factor, cfg.n_identities),
                cfg.seed + 3)
            acc = pl.train_embedder(phi, man, man.rows, cfg.embedder_steps,
                                    cfg.seed)
            nn.save_checkpoint(_ckpt(cfg, "embedder.ckpt"), phi)
            _log(cfg, 1, f"identity embedder held-out accuracy: {acc:.3f}")

            if tc_cfg.uses_smooth_term:
                g = nn.init_params(
                    nn.build_reconstruction_net(cfg.scale_factor), cfg.seed + 4)
                f = nn.init_params(
                    nn.build_denoising_net(
                        nn.scaled_channels(32, cfg.scale_factor)), cfg.seed + 5)
                resid = pl.train_regularizer(g, f, phi, man, man.rows,
                                             cfg.regularizer_steps, cfg.seed)
                nn.save_checkpoint(_ckpt(cfg, "recon.ckpt"), g)
                nn.save_checkpoint(_ckpt(cfg, "denoiser.ckpt"), f)
                _log(cfg, 1, f"regularizer residual per pixel: {resid:.5f}")
    return EXIT_OK


def _load_trained_nets(cfg, for_train=True):
    tc_cfg = cfg.train_config()
    nets = _build_core_nets(cfg)
    _load_net(_require(_ckpt(cfg, "transform_pretrain.ckpt"), "pretrain"),
              nets["transform"])
    _load_net(_require(_ckpt(cfg, "discriminator_pretrain.ckpt"), "pretrain"),
              nets["discriminator"])
    if tc_cfg.identity_source == "embedder":
        phi = nn.build_identity_embedder(cfg.scale_factor, cfg.n_identities)
        nn.init_params(phi, cfg.seed + 3)
        _load_net(_require(_ckpt(cfg, "embedder.ckpt"), "pretrain"), phi)
        phi.freeze()
        nets["embedder"] = phi
    if tc_cfg.uses_smooth_term:
        f = nn.build_denoising_net(nn.scaled_channels(32, cfg.scale_factor))
        nn.init_params(f, cfg.seed + 5)
        _load_net(_require(_ckpt(cfg, "denoiser.ckpt"), "pretrain"), f)
        f.freeze()
        nets["denoiser"] = f
    return tc_cfg, nets


def cmd_train(cfg, resume=False):
    man = _manifest(cfg)
    phi_eval, c_attr = _eval_models(cfg)
    attr_scorer = pl.make_attr_scorer(c_attr, cfg.attribute_target)
    id_scorer = pl.make_id_scorer(phi_eval)
    out_dir = os.path.join(cfg.checkpoint_dir, "train")
    with _DirLock(out_dir):
        _snapshot(cfg, out_dir)
        tc_cfg, nets = _load_trained_nets(cfg)
        report = pl.train_transform(tc_cfg, nets, man, out_dir=out_dir,
                                    attr_scorer=attr_scorer,
                                    id_scorer=id_scorer, resume=resume)
        os.makedirs(cfg.report_dir, exist_ok=True)
        report.save(os.path.join(cfg.report_dir, "report.tsv"))
        last = report.rows[-1] if report.rows else None
        if last:
            cols = dict(zip(pl.TrainReport.COLUMNS, last))
            _log(cfg, 1, f"finished at iteration {cols['iter']}: "
                         f"attr_score={cols['attr_score']:.3f} "
                         f"id_dist={cols['id_dist']:.4f} "
                         f"({report.wall_clock:.0f}s)")
    return EXIT_OK


def cmd_enhance_train(cfg):
    if cfg.enhancement == "none":
        raise ConfigError("enhancement mode is 'none'; nothing to train")
    man = _manifest(cfg)
    with _DirLock(cfg.checkpoint_dir):
        _snapshot(cfg, cfg.checkpoint_dir)
        T = nn.build_transform_net(cfg.scale_factor)
        nn.init_params(T, cfg.seed + 1)
        _load_net(_require(os.path.join(cfg.checkpoint_dir, "train",
                                        "transform.ckpt"), "train"), T)
        T.freeze()
        loss_cfg = cfg.loss_config()
        if cfg.enhancement == "local":
            phi = nn.init_params(
                nn.build_identity_embedder(cfg.scale_factor, cfg.n_identities),
                cfg.seed + 3)
            phi_path = _ckpt(cfg, "embedder.ckpt")
            if os.path.exists(phi_path):
                _load_net(phi_path, phi)
            else:
                pl.train_embedder(phi, man, man.rows, cfg.embedder_steps,
                                  cfg.seed)
                nn.save_checkpoint(phi_path, phi)
            phi.freeze()
            E = nn.init_params(
                nn.build_local_enhancer(
                    nn.scaled_channels(32, cfg.scale_factor)), cfg.seed + 6)
            _, input_rows = dataset_mod.split_guided_and_input(
                man, cfg.attribute, target=cfg.attribute_target,
                input_size=cfg.input_set_size, seed=cfg.seed)
            train_rows, _ = dataset_mod.split_train_heldout(
                input_rows, cfg.heldout_fraction)
            pl.train_local_enhancer(E, T, man, train_rows, cfg.attribute, phi,
                                    loss_cfg, cfg.enhancer_steps, cfg.seed)
        else:
            E = nn.init_params(nn.build_global_enhancer(cfg.scale_factor),
                               cfg.seed + 6)
            pl.train_global_enhancer(E, man, man.rows, cfg.sigma,
                                     cfg.enhancer_steps, cfg.seed)
        nn.save_checkpoint(_ckpt(cfg, f"enhancer_{cfg.enhancement}.ckpt"), E)
        _log(cfg, 1, f"trained {cfg.enhancement} enhancer "
                     f"({cfg.enhancer_steps} steps)")
    return EXIT_OK


def _load_transfer_nets(cfg):
    T = nn.build_transform_net(cfg.scale_factor)
    nn.init_params(T, cfg.seed + 1)
    _load_net(_require(os.path.join(cfg.checkpoint_dir, "train",
                                    "transform.ckpt"), "train"), T)
    E = None
    if cfg.enhancement != "none":
        if cfg.enhancement == "local":
            E = nn.build_local_enhancer(nn.scaled_channels(32, cfg.scale_factor))
        else:
            E = nn.build_global_enhancer(cfg.scale_factor)
        nn.init_params(E, cfg.seed + 6)
        _load_net(_require(_ckpt(cfg, f"enhancer_{cfg.enhancement}.ckpt"),
                           "enhance-train"), E)
    return T, E


def cmd_transfer(cfg, paths):
    if not paths:
        raise ConfigError("transfer requires at least one input image path")
    T, E = _load_transfer_nets(cfg)
    out_dir = os.path.join(cfg.report_dir, "transfers")
    with _DirLock(out_dir):
        _snapshot(cfg, out_dir)
        for path in paths:
            img = dataset_mod.decode_image(path)
            out = pl.run_transfer(T, E, cfg.enhancement, img, sigma=cfg.sigma)
            base = os.path.splitext(os.path.basename(path))[0]
            out_path = os.path.join(out_dir, base + "_out.ppm")
            dataset_mod.encode_image(out_path, out)
            _log(cfg, 1, f"{path} -> {out_path}")
        latency = pl.transfer_latency(T, E, cfg.enhancement,
                                      dataset_mod.decode_image(paths[0]),
                                      sigma=cfg.sigma)
        _log(cfg, 1, f"median transfer latency: {latency * 1e3:.2f} ms/image")
    return EXIT_OK


def cmd_eval(cfg):
    man = _manifest(cfg)
    T, E = _load_transfer_nets(cfg)
    phi_eval, c_attr = _eval_models(cfg)
    _, input_rows = dataset_mod.split_guided_and_input(
        man, cfg.attribute, target=cfg.attribute_target,
        input_size=cfg.input_set_size, seed=cfg.seed)
    _, held = dataset_mod.split_train_heldout(input_rows, cfg.heldout_fraction)
    held = held[:200]
    with _DirLock(cfg.report_dir):
        _snapshot(cfg, cfg.report_dir)
        metrics = pl.evaluate(T, E, cfg.enhancement, phi_eval, c_attr, man,
                              held, cfg.attribute, cfg.attribute_target,
                              sigma=cfg.sigma, seed=cfg.seed)
        lines = ["metric\tvalue"]
        for key, value in metrics.items():
            lines.append(f"{key}\t{value:.6g}")
            _log(cfg, 1, f"{key}: {value:.6g}")
        with open(os.path.join(cfg.report_dir, "metrics.tsv"), "w",
                  encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        sources = pl.images_array(man, held[:8])
        raw = pl.run_transfer(T, None, "none", sources)
        cols = [sources, raw]
        if E is not None:
            cols.append(pl.run_transfer(T, E, cfg.enhancement, sources,
                                        sigma=cfg.sigma))
        dataset_mod.save_mosaic(os.path.join(cfg.report_dir, "mosaic.ppm"),
                                cols)
    return EXIT_OK


def cmd_gradcheck(n_instances=20):
    from .gradcheck_suite import TOLERANCE, run_suite
    results = run_suite(n_instances=n_instances)
    worst = 0.0
    failed = []
    for name, err in results:
        status = "ok" if err <= TOLERANCE else "FAIL"
        print(f"{status:4s} {name:40s} {err:.3e}")
        worst = max(worst, err)
        if err > TOLERANCE:
            failed.append(name)
    print(f"{len(results)} checks, worst relative error {worst:.3e}")
    if failed:
        print(f"error: gradcheck: {len(failed)} checks above {TOLERANCE}: "
              + ", ".join(failed), file=sys.stderr)
        return 1
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", metavar="FILE",
                        help="run-config file (key = value lines)")
    common.add_argument("-s", "--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (repeatable; "
                             "highest precedence)")

    p = argparse.ArgumentParser(
        prog="diat",
        description="Two-stage facial attribute transfer: data generation, "
                    "adversarial training, enhancement and evaluation.")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", parents=[common],
                   help="generate the synthetic face dataset")
    sub.add_parser("pretrain", parents=[common],
                   help="pretrain transform/discriminator and helper nets")
    tp = sub.add_parser("train", parents=[common],
                        help="adversarial training of the transform net")
    tp.add_argument("--resume", action="store_true",
                    help="resume from the last training checkpoint")
    sub.add_parser("enhance-train", parents=[common],
                   help="train the enhancement network")
    xp = sub.add_parser("transfer", parents=[common],
                        help="apply the trained pipeline to PPM images")
    xp.add_argument("inputs", nargs="+", metavar="IMAGE.ppm")
    sub.add_parser("eval", parents=[common],
                   help="evaluate attribute success and identity preservation")
    gp = sub.add_parser("gradcheck",
                        help="finite-difference self-test of ops and losses")
    gp.add_argument("--instances", type=int, default=20,
                    help="random instances per check (default 20)")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "gradcheck":
            return cmd_gradcheck(args.instances)
        cfg = _load_config(args)
        if args.command == "gen-data":
            return cmd_gen_data(cfg)
        if args.command == "pretrain":
            return cmd_pretrain(cfg)
        if args.command == "train":
            return cmd_train(cfg, resume=args.resume)
        if args.command == "enhance-train":
            return cmd_enhance_train(cfg)
        if args.command == "transfer":
            return cmd_transfer(cfg, args.inputs)
        if args.command == "eval":
            return cmd_eval(cfg)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingPrerequisiteError as exc:
        print(f"error: missing-prerequisite: {exc}", file=sys.stderr)
        return EXIT_PREREQ
    except DivergenceError as exc:
        print(f"error: divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
