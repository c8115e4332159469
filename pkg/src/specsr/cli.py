"""Command-line entry point: ``specsr <subcommand> ...``.

Failures print one line ``specsr: error[<kind>]: <message>`` on stderr and
exit with 2 (usage/config/missing input), 3 (malformed file) or 4 (numerical
divergence). ``gradcheck`` exits 1 when a check fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import hqs, io, spectral
from .autodiff import ShapeError
from .gradcheck import run_suite
from .losses import LossConfig
from .metrics import metrics
from .network import HsrnetConfig, hsrnet_forward
from .synth import synth_scene
from .train import DivergenceError as TrainingDivergence, TrainConfig, train

log = logging.getLogger("specsr")

EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_DIVERGED = 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --- subcommands ---------------------------------------------------------------------

def _hsi_wavelengths(cube: spectral.SpectralCube, what: str) -> np.ndarray:
    if cube.wavelengths_nm is None:
        raise UsageError(f"{what} carries no band wavelengths; cannot build the SRF operator")
    return np.asarray(cube.wavelengths_nm, dtype=np.float64)


def cmd_simulate(args) -> int:
    hsi = io.read_cube(args.hsi)
    srf = io.read_srf(args.srf)
    phi = spectral.build_phi(srf, _hsi_wavelengths(hsi, "--hsi"))
    io.write_cube(args.out, spectral.apply_degradation(phi, hsi))
    return 0


def cmd_synth(args) -> int:
    wl = np.linspace(args.wl_start, args.wl_stop, args.channels) if args.channels > 1 else None
    cube = synth_scene(args.seed, args.width, args.height, args.channels, args.endmembers, wl)
    io.write_cube(args.out, cube)
    return 0


_BUNDLED_SRF = {"cave": spectral.cave_like_srf, "sentinel2": spectral.sentinel2_like_srf}


def cmd_srf(args) -> int:
    io.write_srf(args.out, _BUNDLED_SRF[args.kind]())
    return 0


def _split(n: int, fraction: float) -> int:
    """Number of held-out scenes; at least one scene always stays in training."""
    return min(int(round(fraction * n)), n - 1)


def cmd_train(args) -> int:
    rc = io.read_run_config(args.config)
    srf = io.read_srf(rc.srf_path)
    hsis = [io.read_cube(p) for p in rc.hsi_paths]
    wl = _hsi_wavelengths(hsis[0], "data.hsi")
    for p, c in zip(rc.hsi_paths, hsis):
        if c.data.shape[0] != hsis[0].data.shape[0] or (c.wavelengths_nm is not None and not np.allclose(c.wavelengths_nm, wl)):
            raise UsageError(f"{p}: band layout differs from {rc.hsi_paths[0]}")
    phi = spectral.build_phi(srf, wl)
    if rc.msi_paths is None:
        msis = [spectral.apply_degradation(phi, c) for c in hsis]
    else:
        msis = [io.read_cube(p) for p in rc.msi_paths]
    for p, m, h in zip(rc.msi_paths or rc.hsi_paths, msis, hsis):
        if m.data.shape != (phi.ms_channels,) + h.data.shape[1:]:
            raise UsageError(f"{p}: MSI shape {m.data.shape} does not match the HSI and SRF")

    grouping = spectral.group_bands(phi, rc.tau) if rc.srf_grouping else spectral.BandGrouping.single(len(wl))
    try:
        net_cfg = HsrnetConfig(hs_channels=len(wl), ms_channels=phi.ms_channels, grouping=grouping,
                               use_cam=rc.cam, use_srf_grouping=rc.srf_grouping,
                               hs_wavelengths_nm=[float(w) for w in wl], **rc.hsrnet)
        t = dict(rc.train)
        if "lr" in t:
            t["learning_rate"] = t.pop("lr")
        train_cfg = TrainConfig(**t)
        loss_cfg = LossConfig(alpha=rc.alpha if rc.fast_loss else 0.0)
    except (TypeError, ValueError) as exc:
        raise io.ConfigError(str(exc)) from None

    pairs = [(m.data, h.data) for m, h in zip(msis, hsis)]
    n_eval = _split(len(pairs), rc.split)
    train_pairs, eval_pairs = pairs[:len(pairs) - n_eval], pairs[len(pairs) - n_eval:]
    result = train(train_pairs, net_cfg, train_cfg, loss_cfg, eval_pairs or None)
    out = Path(args.out)
    io.write_checkpoint(out, net_cfg, result.params)
    io.write_history_csv(out.with_name(out.stem + ".history.csv"), result.history)
    return 0


def cmd_infer(args) -> int:
    cfg, params = io.read_checkpoint(args.model)
    msi = io.read_cube(args.msi)
    srf = io.read_srf(args.srf)
    if srf.num_bands != cfg.ms_channels:
        raise UsageError(f"SRF has {srf.num_bands} bands, model expects {cfg.ms_channels}")
    if msi.data.shape[0] != cfg.ms_channels:
        raise UsageError(f"MSI has {msi.data.shape[0]} bands, model expects {cfg.ms_channels}")
    out = hsrnet_forward(msi, cfg, params)
    wl = None if cfg.hs_wavelengths_nm is None else np.asarray(cfg.hs_wavelengths_nm)
    io.write_cube(args.out, spectral.SpectralCube(np.clip(out.data, 0.0, 1.0), wl))
    return 0


def cmd_eval(args) -> int:
    ref = io.read_cube(args.ref)
    test = io.read_cube(args.test)
    if ref.data.shape != test.data.shape:
        raise UsageError(f"shape mismatch: ref {ref.data.shape} vs test {test.data.shape}")
    report = json.dumps(metrics(test.data, ref.data).to_json(), indent=2, sort_keys=True) + "\n"
    if args.json:
        io.atomic_write(args.json, report.encode("utf-8"))
    else:
        sys.stdout.write(report)
    return 0


def cmd_hqs(args) -> int:
    msi = io.read_cube(args.msi)
    srf = io.read_srf(args.srf)
    wl = np.linspace(args.wl_start, args.wl_stop, args.channels)
    phi = spectral.build_phi(srf, wl)
    prior = "identity" if args.lam == 0 else args.prior
    cfg = hqs.HqsConfig(epsilon=args.epsilon, mu=args.mu, lam=args.lam, max_iters=args.iters, prior=prior)
    res = hqs.solve_hqs(msi, phi, cfg)
    io.write_cube(args.out, spectral.SpectralCube(res.x.data, wl))
    out = Path(args.out)
    trace = Path(args.trace) if args.trace else out.with_name(out.stem + ".trace.csv")
    io.write_trace_csv(trace, res.fidelity, res.update_norm)
    return 0


def cmd_gradcheck(args) -> int:
    ok, _, _ = run_suite(args.seed, verbose=True)
    return 0 if ok else EXIT_FAIL


# --- wiring ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="specsr", description="Spectral super-resolution toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="apply the SRF forward model to an HSI cube")
    s.add_argument("--hsi", required=True)
    s.add_argument("--srf", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("synth", help="generate a synthetic HSI scene")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--width", type=int, required=True)
    s.add_argument("--height", type=int, required=True)
    s.add_argument("--channels", type=int, required=True)
    s.add_argument("--endmembers", type=int, default=4)
    s.add_argument("--wl-start", type=float, default=400.0)
    s.add_argument("--wl-stop", type=float, default=700.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("srf", help="write a bundled sensor response as CSV")
    s.add_argument("--kind", choices=sorted(_BUNDLED_SRF), default="cave")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_srf)

    s = sub.add_parser("train", help="train a network from a JSON run config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="reconstruct an HSI cube with a trained model")
    s.add_argument("--model", required=True)
    s.add_argument("--msi", required=True)
    s.add_argument("--srf", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="compare a reconstruction with a reference cube")
    s.add_argument("--ref", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--json")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("hqs", help="classical half-quadratic-splitting baseline")
    s.add_argument("--msi", required=True)
    s.add_argument("--srf", required=True)
    s.add_argument("--epsilon", type=float, default=1.0)
    s.add_argument("--mu", type=float, default=0.0)
    s.add_argument("--lambda", dest="lam", type=float, default=0.0)
    s.add_argument("--iters", type=int, default=1000)
    s.add_argument("--prior", choices=["identity", "spatial_spectral_smoothing"], default="spatial_spectral_smoothing")
    s.add_argument("--channels", type=int, default=31, help="number of HS bands to recover")
    s.add_argument("--wl-start", type=float, default=400.0)
    s.add_argument("--wl-stop", type=float, default=700.0)
    s.add_argument("--trace", help="trace CSV path (default: <out stem>.trace.csv)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_hqs)

    s = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)
    return p


def _fail(kind: str, msg, code: int) -> int:
    text = " ".join(str(msg).split())
    print(f"specsr: error[{kind}]: {text}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (io.FormatError, spectral.DegenerateSrfError) as exc:
        return _fail("format", exc, EXIT_FORMAT)
    except (hqs.DivergenceError, TrainingDivergence) as exc:
        return _fail("divergence", exc, EXIT_DIVERGED)
    except (UsageError, io.ConfigError, hqs.HqsConfigError, ShapeError,
            spectral.InsufficientBandsError) as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except FileNotFoundError as exc:
        return _fail("usage", f"no such file: {exc.filename}", EXIT_USAGE)
    except OSError as exc:
        return _fail("io", exc, EXIT_USAGE)
    except ValueError as exc:
        return _fail("usage", exc, EXIT_USAGE)


if __name__ == "__main__":
    sys.exit(main())
