"""Command-line entry point: ``sparsesdf <command> [options]``.

Commands: synth, priors, train, mesh, eval, gradcheck, defaults. Options come
from dataclass defaults, then the ``--config`` INI file, then flags. Exit codes:
0 success, 2 usage, 3 input error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import platform
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__, config, dataset, geometry, gradcheck, meshing, pipeline, priors, synthetic
from .errors import InputError, IoError, MissingInput, ReconstructionError, UsageError

logger = logging.getLogger("sparsesdf")

THREADS_ENV = "SPARSESDF_THREADS"
MANIFEST = "manifest.json"


# run manifest


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions() -> dict:
    import scipy
    import skimage
    import torch

    return {
        "sparsesdf": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "torch": torch.__version__,
        "scikit-image": skimage.__version__,
    }


@dataclasses.dataclass
class RunManifest:
    """Provenance of one output directory; each command records one stage."""

    stages: dict = dataclasses.field(default_factory=dict)
    versions: dict = dataclasses.field(default_factory=_versions)

    def record(self, command: str, sections: dict, inputs: list, seed, timings: dict) -> None:
        self.stages[command] = {
            "config": {name: config.section_dict(cfg) for name, cfg in sections.items()},
            "inputs": {str(p): file_hash(p) for p in inputs if Path(p).is_file()},
            "seed": seed,
            "timings": {k: round(v, 3) for k, v in timings.items()},
        }

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / MANIFEST
        path.write_text(json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load_or_new(cls, out_dir) -> "RunManifest":
        path = Path(out_dir) / MANIFEST
        if path.is_file():
            raw = json.loads(path.read_text())
            return cls(stages=raw.get("stages", {}))
        return cls()


class Timer:
    def __init__(self):
        self.stages: dict[str, float] = {}

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.stages[name] = self.stages.get(name, 0.0) + time.perf_counter() - t0


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        raise IoError(f"cannot write to {out}: {e}") from e
    return out


def _finish(out_dir, command, sections, inputs, seed, timer) -> None:
    m = RunManifest.load_or_new(out_dir)
    m.record(command, sections, inputs, seed, timer.stages)
    m.write(out_dir)


# argument helpers


def _sections(args) -> dict:
    try:
        return config.load_sections(args.config)
    except FileNotFoundError as e:
        raise MissingInput(str(e)) from e
    except KeyError as e:
        raise UsageError(str(e.args[0])) from e


def _resolve(name, file_values, overrides=None):
    try:
        return config.resolve(name, file_values, overrides)
    except (KeyError, ValueError) as e:
        raise UsageError(f"[{name}] {e.args[0] if e.args else e}") from e


def _data_inputs(data_dir) -> list[Path]:
    d = Path(data_dir)
    return [d / n for n in ("cameras.txt", "matches.txt", "scene.txt")]


def _scene_for(args, data=None):
    """Analytic scene from ``--scene`` or the data directory, else None."""
    scene_arg = getattr(args, "scene", None)
    if scene_arg:
        return synthetic.build_scene(scene_arg)
    if data is not None:
        return data.scene
    data_dir = getattr(args, "data", None)
    if data_dir and (Path(data_dir) / "scene.txt").is_file():
        return synthetic.parse_scene((Path(data_dir) / "scene.txt").read_text())
    return None


def _mesh_box(args, mesh_cfg):
    if getattr(args, "bbox", None):
        lo, hi = np.array(args.bbox[:3]), np.array(args.bbox[3:])
        if np.any(hi <= lo):
            raise UsageError("--bbox needs xmin ymin zmin xmax ymax zmax with max > min")
    else:
        scene = _scene_for(args)
        if scene is not None:
            lo, hi = scene.room_min, scene.room_max
        elif getattr(args, "data", None) and (Path(args.data) / "meta.json").is_file():
            meta = json.loads((Path(args.data) / "meta.json").read_text())
            return np.array(meta["box_min"]), np.array(meta["box_max"])
        else:
            raise UsageError("meshing a checkpoint needs --scene, --data or --bbox")
    pad = mesh_cfg.margin * (hi - lo)
    return lo - pad, hi + pad


def _write_mesh(path, mesh) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        (meshing.write_obj if path.suffix.lower() == ".obj" else meshing.write_ply)(path, mesh)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


# commands


def cmd_synth(args) -> int:
    fv = _sections(args)
    cfg = _resolve("synth", fv, dict(scene=args.scene, views=args.views, pattern=args.pattern,
                                     matches_per_pair=args.matches_per_pair, noise_px=args.noise,
                                     outlier_rate=args.outliers, seed=args.seed, width=args.width,
                                     height=args.height, textured=args.textured))
    out = _out_dir(args.out)
    timer = Timer()
    with timer.stage("synthesize"):
        data = dataset.synthesize(cfg.scene, cfg.views, cfg.pattern, cfg.matches_per_pair, cfg.noise_px,
                                  cfg.outlier_rate, cfg.seed, cfg.width, cfg.height, cfg.textured)
    with timer.stage("write"):
        try:
            dataset.save(data, out)
        except OSError as e:
            raise IoError(f"cannot write to {out}: {e}") from e
    n = len(data.cameras)
    print(f"{n} cameras, {n} image triplets, {len(data.matches)} match blocks -> {out}")
    inputs = [cfg.scene] if Path(cfg.scene).is_file() else []
    _finish(out, "synth", {"synth": cfg}, inputs, cfg.seed, timer)
    return 0


def priors_report(cameras, matches, cfg: config.PriorsConfig) -> dict:
    """Per-pair scores and weight histograms plus the selected source per view."""
    pair_priors = priors.build_all_priors(cameras, matches, cfg.gamma)
    eps = cfg.epsilon if cfg.angular_filter else None
    sources = priors.select_all_sources(sorted(cameras), pair_priors, eps)
    edges = np.linspace(0.0, 0.5 * 0.5, cfg.bins + 1)
    pairs = []
    for (r, s), p in sorted(pair_priors.items()):
        w = p.epi_weight
        hist, _ = np.histogram(w, bins=edges)
        pairs.append({
            "ref": r, "src": s, "matches": int(len(w)), "valid": int(np.count_nonzero(p.valid)),
            "angular_score": float(p.angular_score), "mean_weight": float(np.mean(w)) if len(w) else 0.0,
            "histogram": hist.tolist(),
        })
    return {
        "epsilon": cfg.epsilon if cfg.angular_filter else None,
        "gamma": cfg.gamma,
        "bin_edges": edges.tolist(),
        "pairs": pairs,
        "sources": {str(k): v for k, v in sources.items()},
    }


def format_priors_report(rep: dict) -> str:
    lines = [f"# epsilon {rep['epsilon']}  gamma {rep['gamma']}",
             "# ref src matches valid angular_score mean_weight histogram"]
    for p in rep["pairs"]:
        lines.append(f"{p['ref']} {p['src']} {p['matches']} {p['valid']} {p['angular_score']:.6f} "
                     f"{p['mean_weight']:.6f} {' '.join(map(str, p['histogram']))}")
    lines.append("# ref selected_source")
    for r, s in rep["sources"].items():
        lines.append(f"{r} {'none' if s is None else s}")
    return "\n".join(lines) + "\n"


def cmd_priors(args) -> int:
    fv = _sections(args)
    over = dict(epsilon=args.epsilon, gamma=args.gamma, bins=args.bins)
    if args.no_angular:
        over["angular_filter"] = False
    cfg = _resolve("priors", fv, over)
    d = Path(args.data)
    for name in ("cameras.txt", "matches.txt"):
        if not (d / name).is_file():
            raise MissingInput(f"{d / name} not found")
    out = _out_dir(args.out or d / "priors")
    timer = Timer()
    with timer.stage("load"):
        cams = geometry.read_cameras(d / "cameras.txt")
        matches = priors.load_matches(d / "matches.txt", cams)
    if not len(matches):
        raise MissingInput(f"{d / 'matches.txt'} holds no match blocks")
    with timer.stage("priors"):
        rep = priors_report(cams, matches, cfg)
    text = format_priors_report(rep)
    (out / "priors.txt").write_text(text)
    (out / "priors.json").write_text(json.dumps(rep, indent=2) + "\n")
    for r, s in rep["sources"].items():
        print(f"view {r}: source {'none' if s is None else s}")
    _finish(out, "priors", {"priors": cfg}, _data_inputs(d)[:2], None, timer)
    return 0


def train_configs(args, fv):
    """Resolve [train] and [field], then apply --mode and the ablation flags."""
    from .train import ablation_config

    tcfg = _resolve("train", fv, dict(iterations=args.iterations, rays_per_batch=args.rays, seed=args.seed,
                                      lr=args.lr, n_coarse=args.n_coarse, n_fine=args.n_fine))
    fcfg = _resolve("field", fv)
    if args.mode:
        tcfg = ablation_config(tcfg, args.mode)
    flags = {}
    if args.no_normal:
        flags["use_normal"] = False
    if args.no_depth:
        flags["use_depth"] = False
    if args.no_reproj:
        flags["use_reproj"] = False
    if args.no_epipolar:
        flags["use_epipolar_weight"] = False
    if args.no_angular:
        flags["use_angular_filter"] = False
    if args.mono_baseline:
        flags["depth_mode"] = "mono"
    tcfg = dataclasses.replace(tcfg, **flags)
    if tcfg.depth_mode == "mono" and not tcfg.use_depth:
        raise UsageError("the monocular baseline replaces the depth loss; it cannot run with the depth loss off")
    if (args.no_epipolar or args.no_angular) and not tcfg.needs_matches:
        raise UsageError("--no-epipolar/--no-angular only affect match losses, which are all disabled")
    return tcfg, fcfg


def cmd_train(args) -> int:
    from .train import train as run_training

    fv = _sections(args)
    tcfg, fcfg = train_configs(args, fv)
    mesh_cfg = _resolve("mesh", fv, dict(resolution=args.resolution))
    eval_cfg = _resolve("eval", fv)
    timer = Timer()
    with timer.stage("load"):
        data = dataset.load(args.data)
    out = _out_dir(args.out)
    if tcfg.needs_matches and not len(data.matches):
        raise MissingInput(f"{args.data}: the selected losses need matches")
    logger.info("train config: %s", config.section_dict(tcfg))
    with timer.stage("train"):
        res = run_training(data, tcfg, fcfg, out_dir=out)
    config.write_file(out / "config.ini", {"train": tcfg, "field": fcfg})
    last = res.history[-1] if res.history else {}
    if "scale" in last:
        logger.info("final scale/shift w=%.4f q=%.4f", last["scale"], last["shift"])
    print(f"trained {tcfg.iterations} iterations in {res.seconds:.1f}s -> {out / 'checkpoint.npz'}")
    sections = {"train": tcfg, "field": res.field.config}
    if args.evaluate:
        if data.scene is None:
            raise MissingInput("--evaluate needs a synthetic data directory with scene.txt")
        with timer.stage("mesh"):
            mesh = pipeline.field_mesh(res.field, data.scene, mesh_cfg.resolution)
            _write_mesh(out / "mesh.ply", mesh)
        with timer.stage("eval"):
            tau = eval_cfg.tau or None
            rep = pipeline.evaluate_mesh(mesh, data.scene, tau, eval_cfg.points, eval_cfg.gt_resolution, eval_cfg.seed)
            rep.to_json(out / "metrics.json")
        print(rep.row())
        sections.update(mesh=mesh_cfg, eval=eval_cfg)
    _finish(out, "train", sections, _data_inputs(args.data), tcfg.seed, timer)
    return 0


def _load_field(path):
    from .field import load_checkpoint

    if not Path(path).is_file():
        raise MissingInput(f"{path} not found")
    return load_checkpoint(path)


def cmd_mesh(args) -> int:
    fv = _sections(args)
    cfg = _resolve("mesh", fv, dict(resolution=args.resolution))
    fld = _load_field(args.checkpoint)
    lo, hi = _mesh_box(args, cfg)
    out_path = Path(args.out)
    out = _out_dir(out_path.parent)
    timer = Timer()
    with timer.stage("marching_cubes"):
        mesh = meshing.marching_cubes(fld, lo, hi, cfg.resolution)
    _write_mesh(out_path, mesh)
    print(f"{len(mesh.vertices)} vertices, {len(mesh.triangles)} triangles -> {out_path}")
    _finish(out, "mesh", {"mesh": cfg}, [args.checkpoint], None, timer)
    return 0


def cmd_eval(args) -> int:
    fv = _sections(args)
    cfg = _resolve("eval", fv, dict(tau=args.tau, points=args.points, seed=args.seed))
    mesh_cfg = _resolve("mesh", fv, dict(resolution=args.resolution))
    timer = Timer()
    inputs = []
    with timer.stage("mesh"):
        if args.mesh:
            if not Path(args.mesh).is_file():
                raise MissingInput(f"{args.mesh} not found")
            mesh = meshing.read_mesh(args.mesh)
            inputs.append(args.mesh)
        elif args.checkpoint:
            lo, hi = _mesh_box(args, mesh_cfg)
            mesh = meshing.marching_cubes(_load_field(args.checkpoint), lo, hi, mesh_cfg.resolution)
            inputs.append(args.checkpoint)
        else:
            raise UsageError("eval needs --mesh or --checkpoint")
    gt = args.gt
    with timer.stage("eval"):
        if gt and Path(gt).suffix.lower() in (".ply", ".obj"):
            if not Path(gt).is_file():
                raise MissingInput(f"{gt} not found")
            inputs.append(gt)
            tau = cfg.tau or 0.05
            pred = meshing.sample_points(mesh, cfg.points, cfg.seed)
            ref = meshing.sample_points(meshing.read_mesh(gt), cfg.points, cfg.seed)
            rep = meshing.evaluate(pred, ref, tau)
        else:
            scene = synthetic.build_scene(gt) if gt else _scene_for(args)
            if scene is None:
                raise UsageError("eval needs --gt (scene name, scene file or mesh) or --data with scene.txt")
            if gt and Path(gt).is_file():
                inputs.append(gt)
            rep = pipeline.evaluate_mesh(mesh, scene, cfg.tau or None, cfg.points, cfg.gt_resolution, cfg.seed)
    print(rep.row())
    if args.out:
        out_path = Path(args.out)
        out = _out_dir(out_path.parent)
        rep.to_json(out_path)
        _finish(out, "eval", {"eval": cfg, "mesh": mesh_cfg}, inputs, cfg.seed, timer)
    return 0


def cmd_gradcheck(args) -> int:
    fv = _sections(args)
    cfg = _resolve("gradcheck", fv, dict(probes=args.probes, seed=args.seed))
    terms = args.terms.split(",") if args.terms else list(gradcheck.TERMS)
    unknown = [t for t in terms if t not in gradcheck.TERMS]
    if unknown:
        raise UsageError(f"unknown gradcheck terms {unknown}; choose from {list(gradcheck.TERMS)}")
    timer = Timer()
    reports = []
    with timer.stage("gradcheck"):
        for t in terms:
            rep = gradcheck.check_term(t, cfg)
            print(rep.row())
            reports.append(rep)
    if args.out:
        out = _out_dir(args.out)
        (out / "gradcheck.txt").write_text("".join(r.row() + "\n" for r in reports))
        _finish(out, "gradcheck", {"gradcheck": cfg}, [], cfg.seed, timer)
    failed = [r.term for r in reports if not r.passed]
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
        return 4
    return 0


def cmd_defaults(args) -> int:
    sys.stdout.write(config.defaults_text())
    return 0


# parser


def build_parser() -> argparse.ArgumentParser:
    from .train import ABLATIONS

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with per-command sections")
    common.add_argument("--threads", type=int, help=f"torch thread count (overrides ${THREADS_ENV})")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="sparsesdf", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="render a synthetic scene with oracle matches")
    s.add_argument("--scene", help="library name or scene file")
    s.add_argument("--views", type=int)
    s.add_argument("--pattern", choices=synthetic.RIG_PATTERNS)
    s.add_argument("--matches-per-pair", type=int)
    s.add_argument("--noise", type=float, help="match noise std in pixels")
    s.add_argument("--outliers", type=float, help="outlier fraction in [0, 1]")
    s.add_argument("--seed", type=int)
    s.add_argument("--width", type=int)
    s.add_argument("--height", type=int)
    s.add_argument("--untextured", dest="textured", action="store_const", const=False)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("priors", parents=[common], help="angular scores, source views and epipolar weights")
    s.add_argument("--data", required=True)
    s.add_argument("--epsilon", type=float)
    s.add_argument("--gamma", type=float)
    s.add_argument("--bins", type=int)
    s.add_argument("--no-angular", action="store_true", help="select by match count only")
    s.add_argument("--out", help="report directory (default DATA/priors)")
    s.set_defaults(func=cmd_priors)

    s = sub.add_parser("train", parents=[common], help="optimise the SDF field")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--iterations", type=int)
    s.add_argument("--rays", type=int, help="rays per batch")
    s.add_argument("--n-coarse", type=int)
    s.add_argument("--n-fine", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--mode", choices=ABLATIONS, help="named loss configuration")
    s.add_argument("--no-normal", action="store_true")
    s.add_argument("--no-depth", action="store_true")
    s.add_argument("--no-reproj", action="store_true")
    s.add_argument("--no-epipolar", action="store_true", help="constant weight instead of the epipolar weight")
    s.add_argument("--no-angular", action="store_true", help="pick sources by match count only")
    s.add_argument("--mono-baseline", action="store_true", help="scale/shift-invariant monocular depth loss")
    s.add_argument("--evaluate", action="store_true", help="mesh and score against the synthetic scene")
    s.add_argument("--resolution", type=int, help="marching-cubes resolution for --evaluate")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("mesh", parents=[common], help="extract the zero level set of a checkpoint")
    s.add_argument("--checkpoint", required=True)
    box = s.add_mutually_exclusive_group()
    box.add_argument("--scene", help="library name or scene file giving the box")
    box.add_argument("--data", help="data directory giving the box")
    box.add_argument("--bbox", type=float, nargs=6, metavar=("XMIN", "YMIN", "ZMIN", "XMAX", "YMAX", "ZMAX"))
    s.add_argument("--resolution", type=int)
    s.add_argument("--out", required=True, help=".ply or .obj path")
    s.set_defaults(func=cmd_mesh)

    s = sub.add_parser("eval", parents=[common], help="score a mesh against ground truth")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--mesh")
    src.add_argument("--checkpoint")
    s.add_argument("--gt", help="scene name, scene file, or .ply/.obj mesh")
    box = s.add_mutually_exclusive_group()
    box.add_argument("--scene", help="scene giving the meshing box for --checkpoint")
    box.add_argument("--data", help="data directory giving the scene and box")
    box.add_argument("--bbox", type=float, nargs=6, metavar=("XMIN", "YMIN", "ZMIN", "XMAX", "YMAX", "ZMAX"))
    s.add_argument("--tau", type=float)
    s.add_argument("--points", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--resolution", type=int)
    s.add_argument("--out", help="metrics JSON path")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every loss term")
    s.add_argument("--probes", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--terms", help=f"comma list from {','.join(gradcheck.TERMS)}")
    s.add_argument("--out", help="directory for gradcheck.txt")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("defaults", parents=[common], help="print every config section with its defaults")
    s.set_defaults(func=cmd_defaults)
    return p


def _setup(args) -> None:
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("sparsesdf").setLevel(level)
    threads = args.threads if args.threads is not None else os.environ.get(THREADS_ENV)
    if threads is not None:
        import torch

        try:
            n = int(threads)
        except ValueError as e:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {threads!r}") from e
        if n < 1:
            raise UsageError("thread count must be >= 1")
        torch.set_num_threads(n)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        _setup(args)
        return args.func(args)
    except ReconstructionError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    except (ValueError, KeyError) as e:
        # config values rejected by dataclass validation
        print(f"error: {e}", file=sys.stderr)
        return UsageError.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return InputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
