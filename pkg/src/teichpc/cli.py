"""Command-line frontend.

Subcommands cover the full pipeline: conformal and landmark parameterization,
registration, distance matrices, classification, synthetic fixture
generation, and the operator benchmark. Every run writes csv/json artifacts
plus a meta.json echoing the configuration; failures produce error.json and
a contract exit code (0 ok, 2 input error, 3 non-convergence, 4 solver
failure).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .beltrami import save_complex_field
from .cloud import PointCloud
from .errors import (
    DegenerateJacobianError,
    ParseError,
    RegistrationError,
    SingularSystemError,
    TeichpcError,
)
from .io import load_cloud, load_landmarks, save_cloud
from .metrics import classical_mds, distance_matrix, loocv_nn, register
from .parameterize import conformal_parameterize, teichmuller_parameterize
from .synth import (
    BENCH_SCHEMES,
    add_noise,
    bench_operators,
    bump_family,
    map_log_arcsin,
    map_stereographic,
    sample_quasi_uniform,
    save_bench_records,
)

__all__ = ["RunConfig", "main"]

SCHEMA_ID = "teichpc.artifacts/1"
EXIT_OK, EXIT_INPUT, EXIT_NOCONV, EXIT_SOLVER = 0, 2, 3, 4


@dataclass
class RunConfig:
    """Echoable run configuration with the documented defaults."""

    command: str
    inputs: tuple = ()
    out: str = "."
    k: int = 16
    gamma: float = 0.5
    eps: float = 1e-6
    max_iter: int = 200
    seed: int = 0
    threads: int | None = None
    extras: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = {"command": self.command, "inputs": list(self.inputs),
             "out": str(self.out), "k": self.k, "gamma": self.gamma,
             "eps": self.eps, "max_iter": self.max_iter, "seed": self.seed,
             "threads": self.threads}
        d.update(self.extras)
        return d


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"not serializable: {type(x)}")


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _write_meta(outdir: Path, cfg: RunConfig, t0: float, **extra) -> None:
    meta = {"schema": SCHEMA_ID, "version": __version__,
            "config": cfg.as_dict(), "elapsed_s": round(time.time() - t0, 3)}
    meta.update(extra)
    _write_json(outdir / "meta.json", meta)


def _write_histogram(path: Path, mu, bins: int = 50) -> None:
    mag = np.abs(np.asarray(mu))
    mag = mag[np.isfinite(mag)]
    top = max(float(mag.max()) if mag.size else 0.0, 1e-6)
    counts, edges = np.histogram(mag, bins=bins, range=(0.0, top))
    total = max(counts.sum(), 1)
    with open(path, "w") as fh:
        fh.write("bin_lo,bin_hi,count,mass\n")
        for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
            fh.write(f"{lo:.10g},{hi:.10g},{int(c)},{c / total:.10g}\n")


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_corners(text):
    if text is None:
        return None
    try:
        vals = [int(t) for t in text.split(",")]
    except ValueError:
        raise TeichpcError(f"--corners expects 4 comma-separated indices, "
                           f"got {text!r}") from None
    if len(vals) != 4:
        raise TeichpcError("--corners expects exactly 4 indices")
    return np.asarray(vals, dtype=np.int64)


def _load_input(path, args) -> PointCloud:
    cloud = load_cloud(path, boundary_path=getattr(args, "boundary", None),
                       landmarks_path=None)
    corners = _parse_corners(getattr(args, "corners", None))
    if corners is not None:
        cloud = cloud.with_(corners=corners)
    return cloud


def _save_sidecars(cloud: PointCloud, outdir: Path, stem: str) -> None:
    if cloud.boundary is not None:
        with open(outdir / f"{stem}.boundary", "w") as fh:
            fh.writelines(f"{int(b)}\n" for b in cloud.boundary)
    if cloud.corners is not None:
        with open(outdir / f"{stem}.corners", "w") as fh:
            fh.write(" ".join(str(int(c)) for c in cloud.corners) + "\n")
    if cloud.landmarks:
        with open(outdir / f"{stem}.landmarks.csv", "w") as fh:
            if all(t is None for _, t in cloud.landmarks):
                fh.write("index\n")
                fh.writelines(f"{i}\n" for i, _ in cloud.landmarks)
            else:
                fh.write("index,u,v\n")
                for i, t in cloud.landmarks:
                    fh.write(f"{i},{t[0]:.17g},{t[1]:.17g}\n")


def cmd_conformal(cfg: RunConfig, args) -> int:
    t0 = time.time()
    out = _outdir(cfg)
    cloud = _load_input(cfg.inputs[0], args)
    mapping, rect = conformal_parameterize(cloud, k=cfg.k)
    mapping.save(out / "param.csv")
    _write_json(out / "rect.json", {"width": rect.width, "height": rect.height})
    save_complex_field(out / "pcbc.csv", mapping.mu)
    _write_histogram(out / "histogram.csv", mapping.mu)
    mag = np.abs(mapping.mu)
    mean = float(mag[np.isfinite(mag)].mean())
    _write_meta(out, cfg, t0, height=rect.height, mean_coefficient=mean,
                clamped=mapping.clamped)
    return EXIT_OK


def cmd_teichmuller(cfg: RunConfig, args) -> int:
    t0 = time.time()
    out = _outdir(cfg)
    cloud = _load_input(cfg.inputs[0], args)
    landmarks = None
    if args.landmarks:
        mode, payload = load_landmarks(args.landmarks)
        if mode != "targets":
            raise ParseError("landmark file must have index,u,v rows",
                             path=args.landmarks)
        landmarks = payload
    mapping = teichmuller_parameterize(cloud, landmarks=landmarks,
                                       gamma=cfg.gamma, eps=cfg.eps,
                                       max_iter=cfg.max_iter, k=cfg.k)
    mapping.save(out / "param.csv")
    _write_json(out / "diagnostics.json", mapping.diagnostics())
    _write_histogram(out / "histogram.csv", mapping.mu)
    _write_meta(out, cfg, t0, converged=mapping.converged,
                iterations=mapping.iterations)
    return EXIT_OK if mapping.converged else EXIT_NOCONV


def cmd_register(cfg: RunConfig, args) -> int:
    t0 = time.time()
    out = _outdir(cfg)
    src = _load_input(cfg.inputs[0], args)
    dst = load_cloud(args.target)
    if not args.landmarks:
        raise TeichpcError("--landmarks with i,j correspondence rows is required")
    mode, payload = load_landmarks(args.landmarks)
    if mode != "pairs":
        raise ParseError("registration landmarks must be i,j pairs",
                         path=args.landmarks)
    reg = register(src, dst, payload, k=cfg.k, gamma=cfg.gamma, eps=cfg.eps,
                   max_iter=cfg.max_iter)
    reg.save(out / "registration.csv")
    reg.planar.save(out / "planar.csv")
    diag = reg.planar.diagnostics()
    diag.update({"k": reg.k, "distance": reg.distance,
                 "hull_misses": reg.hull_misses,
                 "dropped_correspondences": reg.dropped_correspondences,
                 "src_height": reg.src_rect.height,
                 "dst_height": reg.dst_rect.height})
    _write_json(out / "diagnostics.json", diag)
    _write_meta(out, cfg, t0, converged=reg.planar.converged)
    return EXIT_OK if reg.planar.converged else EXIT_NOCONV


def _load_many(cfg: RunConfig):
    return [load_cloud(p) for p in cfg.inputs]


def cmd_distmat(cfg: RunConfig, args) -> int:
    t0 = time.time()
    out = _outdir(cfg)
    clouds = _load_many(cfg)
    labels = args.labels.split(",") if args.labels else None
    dm = distance_matrix(clouds, labels=labels, k=cfg.k, gamma=cfg.gamma,
                         eps=cfg.eps, max_iter=cfg.max_iter,
                         threads=cfg.threads)
    dm.save(out / "distmat.csv")
    _write_meta(out, cfg, t0, asym_max=dm.asym_max)
    return EXIT_OK


def cmd_classify(cfg: RunConfig, args) -> int:
    t0 = time.time()
    out = _outdir(cfg)
    clouds = _load_many(cfg)
    if not args.labels:
        raise TeichpcError("--labels is required for classification")
    labels = args.labels.split(",")
    if len(labels) != len(clouds):
        raise TeichpcError(f"{len(labels)} labels for {len(clouds)} clouds")
    dm = distance_matrix(clouds, labels=labels, k=cfg.k, gamma=cfg.gamma,
                         eps=cfg.eps, max_iter=cfg.max_iter,
                         threads=cfg.threads)
    dm.save(out / "distmat.csv")
    coords = classical_mds(dm, dims=2)
    with open(out / "mds.csv", "w") as fh:
        fh.write("label,x,y\n")
        for lab, row in zip(labels, coords):
            fh.write(f"{lab},{row[0]:.17g},{row[1]:.17g}\n")
    acc, preds = loocv_nn(dm, labels, return_predictions=True)
    _write_json(out / "classification.json", {
        "accuracy": acc,
        "per_cloud": [{"label": lab, "prediction": p, "correct": lab == p}
                      for lab, p in zip(labels, preds)],
    })
    _write_meta(out, cfg, t0, accuracy=acc, asym_max=dm.asym_max)
    return EXIT_OK


def cmd_synth(cfg: RunConfig, args) -> int:
    t0 = time.time()
    out = _outdir(cfg)
    kind = args.kind
    if kind == "rect":
        cloud = sample_quasi_uniform(args.width, args.height, args.n, cfg.seed)
    elif kind == "stereographic":
        cloud = map_stereographic(sample_quasi_uniform(1.0, 1.0, args.n, cfg.seed))
    elif kind == "log-arcsin":
        cloud = map_log_arcsin(sample_quasi_uniform(1.0, 1.0, args.n, cfg.seed))
    elif kind == "bump":
        cloud = bump_family(args.family, args.n, cfg.seed)
    else:
        raise TeichpcError(f"unknown kind {kind!r}")
    if args.noise > 0:
        cloud = add_noise(cloud, args.noise, cfg.seed + 1)
    save_cloud(cloud, out / "cloud.csv")
    _save_sidecars(cloud, out, "cloud")
    _write_meta(out, cfg, t0, n=cloud.n, dim=cloud.dim, kind=kind)
    return EXIT_OK


def cmd_bench(cfg: RunConfig, args) -> int:
    t0 = time.time()
    out = _outdir(cfg)
    seeds = [int(s) for s in args.seeds.split(",")]
    schemes = tuple(args.schemes.split(",")) if args.schemes else BENCH_SCHEMES
    records = []
    for seed in seeds:
        records.extend(bench_operators(args.map, args.n, seed, schemes,
                                       k=cfg.k))
    save_bench_records(records, out / "bench.csv")
    _write_meta(out, cfg, t0, runs=len(records))
    return EXIT_OK


def _common_flags(p, multi_input=False):
    if multi_input:
        p.add_argument("--inputs", nargs="+", required=True,
                       help="input cloud files")
    else:
        p.add_argument("--input", required=True, help="input cloud file")
    p.add_argument("--landmarks", help="landmark csv (sidecar override)")
    p.add_argument("--boundary", help="boundary cycle sidecar override")
    p.add_argument("--corners", help="4 comma-separated corner indices")
    p.add_argument("--k", type=int, default=16, help="neighborhood size")
    p.add_argument("--gamma", type=float, default=0.5,
                   help="hybrid weight (inf for second-order only)")
    p.add_argument("--eps", type=float, default=1e-6, help="stopping tolerance")
    p.add_argument("--max-iter", type=int, default=200, help="iteration cap")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=None,
                   help="worker cap for pairwise jobs")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="teichpc",
        description="Conformal and extremal landmark mappings of disk-type "
                    "point clouds, with the induced shape metric.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("conformal", help="rectangle parameterization")
    _common_flags(p)

    p = sub.add_parser("teichmuller", help="landmark-matching extremal map")
    _common_flags(p)

    p = sub.add_parser("register", help="map one cloud onto another")
    _common_flags(p)
    p.add_argument("--target", required=True, help="target cloud file")

    p = sub.add_parser("distmat", help="pairwise distance matrix")
    _common_flags(p, multi_input=True)
    p.add_argument("--labels", help="comma-separated cloud labels")

    p = sub.add_parser("classify", help="distance matrix + MDS + LOOCV")
    _common_flags(p, multi_input=True)
    p.add_argument("--labels", help="comma-separated class labels")

    p = sub.add_parser("synth", help="generate synthetic fixtures")
    p.add_argument("--kind", required=True,
                   choices=["rect", "stereographic", "log-arcsin", "bump"])
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--width", type=float, default=1.0)
    p.add_argument("--height", type=float, default=1.0)
    p.add_argument("--family", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("bench", help="operator accuracy benchmark")
    p.add_argument("--map", required=True,
                   choices=["stereographic", "log-arcsin", "log_arcsin"])
    p.add_argument("--n", type=int, default=4000)
    p.add_argument("--seeds", default="0", help="comma-separated seed list")
    p.add_argument("--schemes", help="comma-separated scheme subset")
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--out", required=True)

    return ap


_COMMANDS = {
    "conformal": cmd_conformal,
    "teichmuller": cmd_teichmuller,
    "register": cmd_register,
    "distmat": cmd_distmat,
    "classify": cmd_classify,
    "synth": cmd_synth,
    "bench": cmd_bench,
}


def _config_from(args) -> RunConfig:
    inputs = []
    if getattr(args, "input", None):
        inputs = [args.input]
    elif getattr(args, "inputs", None):
        inputs = list(args.inputs)
    return RunConfig(command=args.command, inputs=tuple(inputs),
                     out=args.out, k=getattr(args, "k", 16),
                     gamma=getattr(args, "gamma", 0.5),
                     eps=getattr(args, "eps", 1e-6),
                     max_iter=getattr(args, "max_iter", 200),
                     seed=getattr(args, "seed", 0),
                     threads=getattr(args, "threads", None))


def _emit_error(outdir, exc, code: int) -> int:
    try:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "error.json", {
            "error": type(exc).__name__, "message": str(exc),
            "exit_code": code, "schema": SCHEMA_ID,
        })
    except OSError:
        pass
    print(f"error: {exc}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = _config_from(args)
    try:
        return _COMMANDS[args.command](cfg, args)
    except (RegistrationError, SingularSystemError, DegenerateJacobianError) as exc:
        return _emit_error(cfg.out, exc, EXIT_SOLVER)
    except (ParseError, FileNotFoundError) as exc:
        return _emit_error(cfg.out, exc, EXIT_INPUT)
    except TeichpcError as exc:
        return _emit_error(cfg.out, exc, EXIT_INPUT)


if __name__ == "__main__":
    sys.exit(main())
