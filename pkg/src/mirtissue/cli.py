"""Batch command-line front end.

Every subcommand takes ``--config`` (one JSON document); flags override
config keys. Failures exit nonzero with a one-line JSON error on stderr.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import plots
from .classify import ClassifierSpec
from .cube_io import (
    Mode,
    SpectralCube,
    TissueClass,
    export_csv,
    import_csv,
    iter_scube_dir,
    read_scube,
    write_scube,
)
from .dataset import PreprocessChain, SplitPlan, assemble, make_splits
from .errors import MirTissueError
from .evaluate import run_protocol, roc_curve
from .preprocess import BlankingSpec, default_blanking, slice_rectangle, snv_rows, to_absorbance
from .rank import ScoreMatrix, crrn, srd_compute, srd_crossval, wilcoxon_table
from .reduce import pca_fit, pca_transform
from .segment import read_pgm, segment_tissue, write_pgm
from .synth import Hole, Peak, SynthSpec, generate_cohort

log = logging.getLogger("mirtissue")

DEFAULT_CONFIG = {
    "seed": 0,
    "synth": {
        "grid": 88,
        "pixel_size": 25.0,
        "disk_radius_um": 1000.0,
        "holes": [[200.0, -150.0, 150.0]],
        "noise_std": 0.01,
        "thickness_jitter": 0.1,
        "amplitude_jitter": 0.05,
        "peaks": {
            "NC": [[1650, 40, 0.8], [1080, 60, 0.5]],
            "CRC": [[1650, 40, 0.8], [1080, 60, 0.9], [1550, 30, 0.4]],
        },
    },
    "cohort": {"n_patients": None, "cores_per_patient": None},
    "blanking": None,
    "half_extent_um": 750.0,
    "kmeans": {"max_iter": 300, "tol": 1e-6},
    "split": {"repeats": 12, "test_cores_per_class": 2, "level": "CORE"},
    "classifiers": [{"kind": "lda"}, {"kind": "random_forest"}, {"kind": "mlp3"}],
    "max_train_rows_per_core": None,
    "rank": {"folds": 10, "mc_samples": 100000, "pairs": None},
}

# Desk-scale cohort for `pipeline`: coarse 100 um pixels over the same 2.2 mm
# field, overlapping classes so the methods do not all score 1.0.
PIPELINE_OVERRIDES = {
    "synth": {
        "grid": 22,
        "pixel_size": 100.0,
        "noise_std": 0.05,
        "amplitude_jitter": 0.25,
        "peaks": {
            "NC": [[1650, 40, 0.8], [1080, 60, 0.5]],
            "CRC": [[1650, 40, 0.8], [1080, 60, 0.6], [1550, 30, 0.1]],
        },
    },
    "classifiers": [
        {"kind": "lda"},
        {"kind": "random_forest", "params": {"n_trees": 30}},
        {"kind": "mlp3"},
    ],
    "max_train_rows_per_core": 30,
}

# keys that change how fast a run goes, never what it produces
_EXECUTION_KEYS = ("threads", "out")


class CliError(MirTissueError):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------------- config


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (extra or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(args, base: dict = DEFAULT_CONFIG) -> dict:
    cfg = copy.deepcopy(base)
    if getattr(args, "config", None):
        cfg = _merge(cfg, json.loads(Path(args.config).read_text()))
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.blanking is not None:
        cfg["blanking"] = BlankingSpec.from_json(args.blanking).to_json()
    if args.half_extent_um is not None:
        cfg["half_extent_um"] = args.half_extent_um
    if args.folds is not None:
        cfg["rank"]["folds"] = args.folds
    if args.repeats is not None:
        cfg["split"]["repeats"] = args.repeats
    return cfg


def _blanking(cfg) -> BlankingSpec:
    return BlankingSpec.from_json(cfg["blanking"]) if cfg["blanking"] else default_blanking()


def synth_spec(cfg) -> SynthSpec:
    s = cfg["synth"]
    peaks = {TissueClass[name]: tuple(Peak(*p) for p in plist) for name, plist in s["peaks"].items()}
    return SynthSpec(
        grid=int(s["grid"]),
        pixel_size=float(s["pixel_size"]),
        class_peaks=peaks,
        disk_radius_um=float(s["disk_radius_um"]),
        holes=tuple(Hole(*h) for h in s["holes"]),
        noise_std=float(s["noise_std"]),
        thickness_jitter=float(s["thickness_jitter"]),
        amplitude_jitter=float(s["amplitude_jitter"]),
        seed=int(cfg["seed"]),
    )


def classifier_specs(cfg) -> list[ClassifierSpec]:
    specs = []
    for d in cfg["classifiers"]:
        d = dict(d)
        d.setdefault("seed", cfg["seed"])
        specs.append(ClassifierSpec.from_dict(d))
    return specs


def split_plan(cfg) -> SplitPlan:
    s = cfg["split"]
    return SplitPlan(int(s["repeats"]), int(s["test_cores_per_class"]), s["level"], int(cfg["seed"]))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _echo_config(out: Path, cfg: dict) -> None:
    _write_json(out / "config.json", {k: v for k, v in cfg.items() if k not in _EXECUTION_KEYS})


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_cubes(paths) -> list[SpectralCube]:
    files = []
    for p in paths:
        p = Path(p)
        files.extend(iter_scube_dir(p) if p.is_dir() else [p])
    if not files:
        raise CliError("no-input", "no .scube files given")
    return [read_scube(f) for f in files]


def _absorbance(cube: SpectralCube) -> SpectralCube:
    return to_absorbance(cube) if cube.mode == Mode.TRANSMITTANCE_PERCENT else cube


def _mask_fn(kind: str, cfg: dict, masks_dir=None):
    seed = int(cfg["seed"])
    km = cfg["kmeans"]
    if masks_dir is not None:
        return lambda cube: read_pgm(Path(masks_dir) / f"{cube.meta.core_id}.pgm")
    if kind == "slice":
        return lambda cube: slice_rectangle(cube, cfg["half_extent_um"])
    if kind == "kmeans":
        return lambda cube: segment_tissue(
            _absorbance(cube), seed=seed, max_iter=int(km["max_iter"]), tol=float(km["tol"])
        )
    if kind == "none":
        from .cube_io import PixelMask

        return PixelMask.all_true
    raise CliError("bad-argument", f"unknown background method {kind!r}")


# --------------------------------------------------------------------------- subcommands


def cmd_synth(args, cfg):
    out = _out_dir(args)
    spec = synth_spec(cfg)
    cohort = cfg["cohort"]
    cores = generate_cohort(
        spec, None, cohort["n_patients"], cohort["cores_per_patient"], seed=int(cfg["seed"]),
        threads=args.threads,
    )
    (out / "truth").mkdir(exist_ok=True)
    entries = []
    for core in cores:
        m = core.cube.meta
        write_scube(core.cube, out / f"{m.core_id}.scube")
        write_pgm(core.truth, out / "truth" / f"{m.core_id}.pgm")
        entries.append(
            {
                "core_id": m.core_id,
                "patient_id": m.patient_id,
                "class": m.tissue_class.name,
                "file": f"{m.core_id}.scube",
                "truth_mask": f"truth/{m.core_id}.pgm",
                "tissue_pixels": core.truth.count,
            }
        )
    _write_json(out / "manifest.json", {"cores": entries})
    _echo_config(out, cfg)
    return {"cores": len(entries), "out": str(out)}


def _preprocess_table(cubes, cfg, background, snv, blanking, threads, masks_dir=None):
    chain = PreprocessChain(snv=snv, blanking=_blanking(cfg) if blanking else None)
    return assemble(cubes, _mask_fn(background, cfg, masks_dir), chain, threads=threads)


def cmd_preprocess(args, cfg):
    out = _out_dir(args)
    cubes = _load_cubes(args.inputs)
    table = _preprocess_table(
        cubes, cfg, args.background, not args.no_snv, not args.no_blanking, args.threads, args.masks
    )
    export_csv(table, out / "table.csv")
    _echo_config(out, cfg)
    return {"rows": table.n_rows, "channels": table.n_channels, "out": str(out / "table.csv")}


def cmd_segment(args, cfg):
    out = _out_dir(args)
    fn = _mask_fn("kmeans", cfg)
    summary = {}
    for cube in _load_cubes(args.inputs):
        mask = fn(cube)
        write_pgm(mask, out / f"{cube.meta.core_id}.pgm")
        summary[cube.meta.core_id] = {"kept": mask.count, "pixels": cube.n_pixels}
    _write_json(out / "masks.json", summary)
    _echo_config(out, cfg)
    return {"masks": len(summary), "out": str(out)}


def cmd_reduce(args, cfg):
    out = _out_dir(args)
    cube = _absorbance(_load_cubes([args.input])[0])
    spectra, ok = snv_rows(cube.spectra())
    model = pca_fit(spectra, 2)
    scores = pca_transform(model, spectra)
    panels = {}
    for kind in ("slice", "kmeans"):
        kept = _mask_fn(kind, cfg)(cube).keep.ravel()[ok]
        panels[kind] = (scores, kept)
        lines = ["x,y,kept_flag"] + [
            f"{x!r},{y!r},{int(k)}" for x, y, k in zip(scores[:, 0].tolist(), scores[:, 1].tolist(), kept)
        ]
        (out / f"pca_{kind}.csv").write_text("\n".join(lines) + "\n")
    plots.latent_svg(panels, out / "latent.svg")
    _echo_config(out, cfg)
    return {
        "explained_variance_ratio": model.explained_variance_ratio.tolist(),
        "out": str(out),
    }


def cmd_split(args, cfg):
    out = _out_dir(args)
    table = import_csv(args.table)
    splits = make_splits(table, split_plan(cfg))
    (out / "splits.json").write_text(splits.manifest_json() + "\n")
    _echo_config(out, cfg)
    return {"repeats": len(splits.repeats), "out": str(out / "splits.json")}


def _write_eval(out: Path, prefix: str, report, matrix, title: str):
    (out / f"{prefix}report.json").write_text(report.to_json() + "\n")
    (out / f"{prefix}report.csv").write_text(report.to_csv())
    if matrix is not None:
        matrix.write_csv(out / f"{prefix}scores.csv")
    curves = {
        name: [roc_curve(o.scores, o.labels) for o in outs]
        for name, outs in report.outcomes.items()
        if outs and name not in report.failures
    }
    if curves:
        plots.roc_svg(curves, out / f"{prefix}roc.svg", title)


def cmd_eval(args, cfg):
    out = _out_dir(args)
    table = import_csv(args.table)
    report, matrix = run_protocol(
        table,
        split_plan(cfg),
        classifier_specs(cfg),
        threads=args.threads,
        max_train_rows_per_core=cfg["max_train_rows_per_core"],
    )
    _write_eval(out, "", report, matrix, "ROC")
    _echo_config(out, cfg)
    return report.to_dict()["summary"] if args.format == "json" else report.to_csv()


def _rank_outputs(out: Path, matrix: ScoreMatrix, cfg: dict, threads: int) -> dict:
    rc = cfg["rank"]
    srd = srd_compute(matrix)
    dist = crrn(matrix.n_rows, mc_samples=int(rc["mc_samples"]), seed=int(cfg["seed"]), threads=threads)
    cv = srd_crossval(matrix, int(rc["folds"]), seed=int(cfg["seed"]))
    pairs = [tuple(p.split(":")) for p in rc["pairs"]] if rc.get("pairs") else None
    table = wilcoxon_table(matrix, pairs)
    srd_doc = srd.to_dict()
    srd_doc["random_p"] = {m: dist.cdf(s) for m, s in zip(srd.methods, srd.srd.tolist())}
    _write_json(out / "srd.json", srd_doc)
    _write_json(out / "crrn.json", dist.to_dict())
    _write_json(out / "crossval.json", cv.to_dict())
    _write_json(out / "wilcoxon.json", table)
    lines = ["pair,p_value,significant"] + [
        f"{r['pair']},{r.get('p_value', '')!r},{r.get('significant', '')}" for r in table
    ]
    (out / "wilcoxon.csv").write_text("\n".join(lines) + "\n")
    plots.srd_svg(srd, dist, out / "srd.svg")
    plots.crossval_svg(cv, out / "crossval.svg")
    return {"ordering": srd.ordering(), "srd_pct": dict(zip(srd.methods, srd.srd_pct.tolist()))}


def demo_matrix_path():
    return resources.files("mirtissue").joinpath("data/demo_scores.csv")


def cmd_rank(args, cfg):
    out = _out_dir(args)
    source = args.matrix if args.matrix else demo_matrix_path()
    with resources.as_file(source) if not isinstance(source, str) else _null(source) as path:
        matrix = ScoreMatrix.read_csv(path)
    if args.pairs:
        cfg["rank"]["pairs"] = args.pairs
    summary = _rank_outputs(out, matrix, cfg, args.threads)
    _echo_config(out, cfg)
    return summary


class _null:
    def __init__(self, v):
        self.v = v

    def __enter__(self):
        return self.v

    def __exit__(self, *exc):
        return False


CONDITIONS = (
    ("slice", "slice", False),
    ("kmeans", "kmeans", False),
    ("kmeans_blanked", "kmeans", True),
)


def run_pipeline(cfg: dict, out: Path, threads: int = 1) -> dict:
    """Synthetic cohort -> three background/filter conditions -> eval -> SRD ranking."""
    out.mkdir(parents=True, exist_ok=True)
    spec = synth_spec(cfg)
    cohort = cfg["cohort"]
    cores = generate_cohort(
        spec, None, cohort["n_patients"], cohort["cores_per_patient"], seed=int(cfg["seed"]),
        threads=threads,
    )
    cubes = [c.cube for c in cores]
    # K-means masks are shared by the two K-means conditions
    kmeans = _mask_fn("kmeans", cfg)
    masks = {"slice": [slice_rectangle(c, cfg["half_extent_um"]) for c in cubes]}
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(threads) as pool:
            masks["kmeans"] = list(pool.map(kmeans, cubes))
    else:
        masks["kmeans"] = [kmeans(c) for c in cubes]
    truth_agreement = [float((m.keep == c.truth.keep).mean()) for m, c in zip(masks["kmeans"], cores)]

    specs = classifier_specs(cfg)
    plan = split_plan(cfg)
    parts, summary = [], {"conditions": {}}
    for name, background, blank in CONDITIONS:
        chain = PreprocessChain(snv=True, blanking=_blanking(cfg) if blank else None)
        table = assemble(cubes, masks[background], chain, threads=threads)
        report, matrix = run_protocol(
            table, plan, specs, threads=threads, max_train_rows_per_core=cfg["max_train_rows_per_core"]
        )
        cdir = out / name
        cdir.mkdir(exist_ok=True)
        _write_eval(cdir, "", report, matrix, f"ROC - {name}")
        summary["conditions"][name] = {
            "rows": table.n_rows,
            "channels": table.n_channels,
            "summary": report.summary(),
            "failures": report.failures,
        }
        if matrix is None:
            raise CliError("protocol-failed", f"condition {name}: no score matrix (failures: {report.failures})")
        matrix.cases = [f"{name}:{c}" for c in matrix.cases]
        parts.append(matrix)
    full = ScoreMatrix.vstack(parts)
    (out / "scores.csv").write_text(full.to_csv())
    summary["rank"] = _rank_outputs(out, full, cfg, threads)
    summary["kmeans_truth_agreement"] = {"min": min(truth_agreement), "mean": float(np.mean(truth_agreement))}
    _write_json(out / "summary.json", summary)
    _echo_config(out, cfg)
    return summary


def cmd_pipeline(args, cfg):
    summary = run_pipeline(cfg, Path(args.out), threads=args.threads)
    return summary["rank"]


# --------------------------------------------------------------------------- entry


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--out", default="out")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--blanking", help="JSON file with blanking intervals")
    common.add_argument("--half-extent-um", type=float, dest="half_extent_um")
    common.add_argument("--folds", type=int)
    common.add_argument("--repeats", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mirtissue", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic cohort of SCUBE cores")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", parents=[common], help="cubes -> preprocessed spectra table CSV")
    p.add_argument("inputs", nargs="+", help=".scube files or directories")
    p.add_argument("--background", choices=("none", "slice", "kmeans"), default="kmeans")
    p.add_argument("--masks", help="directory of <core_id>.pgm masks (overrides --background)")
    p.add_argument("--no-snv", action="store_true")
    p.add_argument("--no-blanking", action="store_true")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("segment", parents=[common], help="K-means tissue masks as PGM")
    p.add_argument("inputs", nargs="+")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("reduce", parents=[common], help="PCA latent view of one core")
    p.add_argument("input")
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("split", parents=[common], help="repeated core-level split manifest")
    p.add_argument("table")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("eval", parents=[common], help="repeated-split evaluation of classifiers")
    p.add_argument("table")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rank", parents=[common], help="SRD / CRRN / cross-validation / Wilcoxon")
    p.add_argument("matrix", nargs="?", help="score matrix CSV (default: bundled 36x7 demo)")
    p.add_argument("--pairs", nargs="*", help="method pairs as A:B for the Wilcoxon table")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("pipeline", parents=[common], help="end-to-end synthetic run, three conditions")
    p.set_defaults(func=cmd_pipeline)
    return parser


def _emit_error(code: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": code, "message": message}) + "\n")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    base = _merge(DEFAULT_CONFIG, PIPELINE_OVERRIDES) if args.command == "pipeline" else DEFAULT_CONFIG
    try:
        if args.threads < 1:
            raise CliError("bad-argument", "--threads must be >= 1")
        cfg = load_config(args, base)
        result = args.func(args, cfg)
    except MirTissueError as exc:
        _emit_error(exc.code, str(exc))
        return 2
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        _emit_error("io" if isinstance(exc, OSError) else "bad-config", f"{type(exc).__name__}: {exc}")
        return 2
    if isinstance(result, str):
        sys.stdout.write(result)
    else:
        sys.stdout.write(json.dumps(result, indent=2, sort_keys=True) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
