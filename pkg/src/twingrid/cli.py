"""Command-line entry point: ``twingrid <subcommand> ...``.

Every subcommand writes ``manifest.json`` next to its outputs; ``replay``
re-executes a manifest into a fresh directory.

Exit codes: 0 success, 1 usage or I/O error, 2 controller did not converge.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .baselines import (
    BracketError,
    discrepancy_search,
    lcurve_select,
    parse_alpha_range,
    sweep,
)
from .controller import ControllerConfig, run_control_loop
from .geometry import ProjectionGeometry, draw_theta, make_fov_mask
from .metrics import gradient_energy, measure_consistency
from .phantom_io import (
    COMPARE_FIELDS,
    SWEEP_FIELDS,
    TRAJECTORY_FIELDS,
    NoiseSpec,
    SinogramFormatError,
    add_noise,
    disk_phantom,
    load_sinogram,
    save_csv,
    save_image,
    save_sinogram,
    shepp_logan,
    smooth_phantom,
)
from .projector import ProjectionOperator, forward_project, make_operator
from .solvers import SolverConfig, solve

log = logging.getLogger("twingrid")

EXIT_OK, EXIT_USAGE, EXIT_NOT_CONVERGED = 0, 1, 2

PHANTOMS = {"shepp-logan": shepp_logan, "disk": disk_phantom, "smooth": smooth_phantom}


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; 2 is reserved for non-convergence here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _open_unit(text: str) -> float:
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"must be in (0, 1), got {text}")
    return v


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _nonneg(text: str) -> float:
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return v


def _count(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return v


def _alpha_range(text: str) -> str:
    try:
        parse_alpha_range(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return text


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Run:
    """Collects outputs and phase timings, then writes the manifest."""

    def __init__(self, command: str, args: dict, outdir: Path):
        self.command = command
        self.args = args
        self.outdir = outdir
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.timings: dict[str, float] = {}
        self.results: dict = {}

    def phase(self, name: str):
        run = self

        class _Phase:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                run.timings[name] = time.perf_counter() - self.t

        return _Phase()

    def add_input(self, path):
        self.inputs[str(Path(path).resolve())] = sha256(path)

    def out(self, name: str) -> Path:
        self.outputs.append(name)
        return self.outdir / name

    def write_manifest(self) -> Path:
        files = {}
        for name in self.outputs:
            p = self.outdir / name
            if p.exists():
                files[name] = sha256(p)
                scale = p.with_name(p.stem + ".scale.txt")
                if scale.exists() and scale.name not in files:
                    files[scale.name] = sha256(scale)
        manifest = {
            "command": self.command,
            "args": self.args,
            "versions": {
                "twingrid": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            "inputs": self.inputs,
            "outputs": files,
            "timings_s": self.timings,
            "results": self.results,
        }
        path = self.outdir / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return path


def _operator_for(sino, size, pixel_size) -> ProjectionOperator:
    n = size if size is not None else int(math.floor(sino.n_bins / math.sqrt(2.0) + 1e-9))
    px = pixel_size if pixel_size is not None else sino.bin_spacing
    geom = ProjectionGeometry(sino.angles, sino.n_bins, sino.bin_spacing, 0.0)
    if not geom.covers(n, px):
        log.warning("detector does not span the %dx%d image diagonal", n, n)
    return ProjectionOperator(geom, (n, n), px)


def _solver_cfg(args) -> SolverConfig:
    nonneg = {"auto": None, "on": True, "off": False}[args.nonneg]
    return SolverConfig(args.reg, max_iters=args.max_iters, rel_tol=args.rel_tol, nonneg=nonneg)


def _controller_cfg(args) -> ControllerConfig:
    return ControllerConfig(
        s_ref=args.sref,
        k_p=args.kp,
        epsilon=args.eps,
        n_consecutive=args.n,
        alpha_init=args.alpha_init,
        max_steps=args.max_steps,
        theta_range=(args.theta_lo, args.theta_hi),
        seed=args.seed,
    )


def _load_input(args, run: Run):
    path = Path(args.input)
    if not path.is_file():
        raise FileNotFoundError(f"input sinogram not found: {path}")
    run.add_input(path)
    sino = load_sinogram(path)
    return sino, _operator_for(sino, args.size, args.pixel_size)


def _theta(args) -> float:
    if args.theta is not None:
        return math.radians(args.theta)
    return draw_theta(args.seed, (args.theta_lo, args.theta_hi))


def cmd_simulate(args, run: Run) -> int:
    with run.phase("phantom"):
        truth = PHANTOMS[args.phantom](args.size)
    with run.phase("project"):
        op = make_operator(args.size, args.views, pixel_size=truth.pixel_size)
        clean = forward_project(op, truth)
        noisy, sigma = add_noise(clean, NoiseSpec(args.noise, args.seed))
        # persisted values are float32
        noisy = noisy.like(np.asarray(noisy.values, dtype=np.float32))
    with run.phase("write"):
        save_sinogram(noisy, run.out("sino.dxsg"))
        np.save(run.out("truth.npy"), truth.values)
        save_image(truth, run.out(f"truth.{_ext(args.image_format)}"), args.image_format)
    run.results.update(sigma_abs=sigma, sino_max=float(np.max(clean.values)), n_angles=args.views,
                       n_bins=op.geometry.n_bins, pixel_size=truth.pixel_size)
    return EXIT_OK


def _ext(fmt: str) -> str:
    return "pgm" if fmt == "pgm16" else "png"


def cmd_reconstruct(args, run: Run) -> int:
    sino, op = _load_input(args, run)
    with run.phase("solve"):
        rec = solve(sino, op, args.alpha, _solver_cfg(args))
    with run.phase("write"):
        np.save(run.out("recon.npy"), rec.image.values)
        save_image(rec.image, run.out(f"recon.{_ext(args.image_format)}"), args.image_format)
    run.results.update(objective=rec.objective, iters_used=rec.iters_used, converged=rec.converged)
    return EXIT_OK


def cmd_control(args, run: Run) -> int:
    sino, op = _load_input(args, run)
    cfg = _controller_cfg(args)
    theta = math.radians(args.theta) if args.theta is not None else None
    with run.phase("control"):
        res = run_control_loop(sino, op, cfg, _solver_cfg(args), theta=theta)
    with run.phase("write"):
        save_csv([e.as_row() for e in res.trajectory], run.out("trajectory.csv"), TRAJECTORY_FIELDS)
        img = res.reconstruction.image
        np.save(run.out("recon.npy"), img.values)
        save_image(img, run.out(f"recon.{_ext(args.image_format)}"), args.image_format)
    run.results.update(
        converged=res.converged,
        steps_used=res.steps_used,
        final_alpha=res.final_alpha,
        final_ssim=res.final_ssim,
        theta_deg=math.degrees(res.theta),
    )
    if not res.converged:
        log.warning("controller did not converge within %d steps", cfg.max_steps)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_sweep(args, run: Run) -> int:
    sino, op = _load_input(args, run)
    theta = _theta(args)
    alphas = parse_alpha_range(args.alphas)
    with run.phase("sweep"):
        records = sweep(sino, op, theta, alphas, _solver_cfg(args), warm_start=not args.cold)
    with run.phase("write"):
        save_csv([r.as_row() for r in records], run.out("sweep.csv"), SWEEP_FIELDS)
    run.results.update(theta_deg=math.degrees(theta), count=len(records))
    return EXIT_OK


def cmd_compare(args, run: Run) -> int:
    sino, op = _load_input(args, run)
    scfg = _solver_cfg(args)
    ccfg = _controller_cfg(args)
    theta = _theta(args)
    op_b = op.rotated(theta)
    mask = make_fov_mask(op.n, op.n)
    ext = _ext(args.image_format)
    rows = []

    with run.phase("controller"):
        res = run_control_loop(sino, op, ccfg, scfg, mask=mask, theta=theta)
    rows.append(dict(method="controller", alpha=res.final_alpha, ssim=res.final_ssim,
                     gradient_energy=gradient_energy(res.reconstruction.image), oracle=False,
                     status="converged" if res.converged else "not_converged"))
    save_image(res.reconstruction.image, run.out(f"controller.{ext}"), args.image_format)

    with run.phase("lcurve"):
        images = []
        records = sweep(sino, op, theta, parse_alpha_range(args.alphas), scfg, mask=mask,
                        on_record=lambda i, rec, reading: images.append(reading.x_primary))
        alpha_l, idx = lcurve_select(records)
    rec = records[idx]
    rows.append(dict(method="lcurve", alpha=alpha_l, ssim=rec.s_value, gradient_energy=rec.detail,
                     oracle=False, status=f"corner_index={idx}"))
    save_csv([r.as_row() for r in records], run.out("lcurve_sweep.csv"), SWEEP_FIELDS)
    save_image(images[idx], run.out(f"lcurve.{ext}"), args.image_format)

    with run.phase("discrepancy"):
        if args.sigma_abs is not None:
            sigma = args.sigma_abs
        else:
            sigma = args.sigma * float(np.max(sino.values))
        try:
            d = discrepancy_search(sino, op, sigma, args.tau, scfg, (args.bracket_lo, args.bracket_hi))
        except BracketError as exc:
            log.warning("discrepancy principle failed: %s", exc)
            rows.append(dict(method="discrepancy", alpha=float("nan"), ssim=float("nan"),
                             gradient_energy=float("nan"), oracle=True,
                             status=f"bracket_failure_{exc.end}"))
        else:
            reading = measure_consistency(sino, op, op_b, theta, d.alpha, scfg, mask)
            rows.append(dict(method="discrepancy", alpha=d.alpha, ssim=reading.s_value,
                             gradient_energy=gradient_energy(d.reconstruction.image), oracle=True,
                             status="matched" if d.converged else "max_steps"))
            save_image(d.reconstruction.image, run.out(f"discrepancy.{ext}"), args.image_format)
    with run.phase("write"):
        save_csv(rows, run.out("compare.csv"), COMPARE_FIELDS)
    run.results.update(theta_deg=math.degrees(theta), sigma_abs=sigma,
                       rows={r["method"]: r["status"] for r in rows})
    return EXIT_OK


def _add_io(p, input_required=True):
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--image-format", choices=("pgm16", "png"), default="pgm16")
    if input_required:
        p.add_argument("--input", required=True, help="sinogram file (.dxsg)")
        p.add_argument("--size", type=_count, default=None,
                       help="image width in pixels (default: floor(n_bins / sqrt 2))")
        p.add_argument("--pixel-size", type=_positive, default=None,
                       help="pixel length (default: the detector bin spacing)")


def _add_solver(p, default_reg="tv"):
    p.add_argument("--reg", choices=("tv", "tikhonov"), default=default_reg)
    p.add_argument("--max-iters", type=_count, default=None)
    p.add_argument("--rel-tol", type=_positive, default=1e-5)
    p.add_argument("--nonneg", choices=("auto", "on", "off"), default="auto")


def _add_controller(p):
    p.add_argument("--sref", type=_open_unit, default=0.90, help="target inter-grid SSIM")
    p.add_argument("--kp", type=_nonneg, default=0.5, help="gain in the log10(alpha) domain")
    p.add_argument("--eps", type=_positive, default=0.05, help="tolerance band half-width")
    p.add_argument("--n", type=_count, default=5, help="consecutive in-band steps to stop")
    p.add_argument("--alpha-init", type=_positive, default=1e-6)
    p.add_argument("--max-steps", type=_count, default=100)


def _add_theta(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--theta", type=float, default=None,
                   help="secondary grid rotation in degrees (default: seeded draw)")
    p.add_argument("--theta-lo", type=float, default=10.0)
    p.add_argument("--theta-hi", type=float, default=20.0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="twingrid", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="phantom -> noisy sinogram")
    p.add_argument("--phantom", choices=sorted(PHANTOMS), required=True)
    p.add_argument("--size", type=_count, required=True)
    p.add_argument("--views", type=_count, default=180)
    p.add_argument("--noise", type=_nonneg, default=0.05,
                   help="noise std as a fraction of the largest sinogram value")
    p.add_argument("--seed", type=int, default=0)
    _add_io(p, input_required=False)

    p = sub.add_parser("reconstruct", help="single solve at a fixed alpha")
    _add_io(p)
    _add_solver(p)
    p.add_argument("--alpha", type=_positive, required=True)

    p = sub.add_parser("control", help="closed-loop alpha selection")
    _add_io(p)
    _add_solver(p)
    _add_controller(p)
    _add_theta(p)

    p = sub.add_parser("sweep", help="record the consistency curve over alpha")
    _add_io(p)
    _add_solver(p)
    _add_theta(p)
    p.add_argument("--alphas", type=_alpha_range, default="1e-8:1e-2:20", help="lo:hi:count")
    p.add_argument("--cold", action="store_true", help="disable warm-start chaining")

    p = sub.add_parser("compare", help="controller vs L-curve vs discrepancy principle")
    _add_io(p)
    _add_solver(p)
    _add_controller(p)
    _add_theta(p)
    p.add_argument("--alphas", type=_alpha_range, default="1e-8:1e-2:20",
                   help="L-curve grid, lo:hi:count")
    p.add_argument("--sigma", type=_nonneg, default=0.05,
                   help="noise std as a fraction of the largest sinogram value")
    p.add_argument("--sigma-abs", type=_nonneg, default=None, help="absolute noise std")
    p.add_argument("--tau", type=_positive, default=1.01)
    p.add_argument("--bracket-lo", type=_positive, default=1e-10)
    p.add_argument("--bracket-hi", type=_positive, default=1e2)

    p = sub.add_parser("replay", help="re-run a manifest into a new directory")
    p.add_argument("manifest")
    p.add_argument("-o", "--output", required=True)
    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "reconstruct": cmd_reconstruct,
    "control": cmd_control,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
}

_NOT_RECORDED = ("command", "output", "verbose", "manifest")


def execute(command: str, params: dict, outdir) -> int:
    """Run ``command`` with fully resolved ``params`` and write its manifest."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    args = argparse.Namespace(**params, output=str(outdir))
    run = Run(command, params, outdir)
    code = COMMANDS[command](args, run)
    run.results["exit_code"] = code
    run.write_manifest()
    return code


def replay(manifest_path, outdir) -> int:
    manifest = json.loads(Path(manifest_path).read_text())
    for path, digest in manifest.get("inputs", {}).items():
        if sha256(path) != digest:
            log.warning("input %s changed since the manifest was written", path)
    return execute(manifest["command"], manifest["args"], outdir)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            return replay(args.manifest, args.output)
        params = {k: v for k, v in vars(args).items() if k not in _NOT_RECORDED}
        if params.get("input"):
            params["input"] = str(Path(params["input"]).resolve())
        return execute(args.command, params, args.output)
    except (OSError, SinogramFormatError) as exc:
        print(f"twingrid: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"twingrid: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
