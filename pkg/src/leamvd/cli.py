"""Experiment harness: ``leamvd run | compare | batch``.

Every run directory holds ``history_layer{k}.csv``, ``rbm_layer{k}.ckpt``
(MNIST profiles only) and ``run.meta``. ``run.meta`` uses the same flat
``key = value`` format as ``--config`` files, so a run can be repeated with
``leamvd run --config <dir>/run.meta``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import logging
import math
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from leamvd import dataio, objectives, rbm
from leamvd import optimizer as opt

log = logging.getLogger("leamvd")

DATA_ENV = "LEA_MVD_DATA_DIR"
PROFILES = ("small7x7", "full28x28", "synthetic")
HISTORY_COLUMNS = (
    "generation", "f_best", "sigma_norm", "beta1", "beta2", "restarted", "evals_cumulative",
)
META_PREFIX = "meta."
BINARIZE_THRESHOLD = 0.5
SYNTHETIC_BOUNDS = (-5.0, 5.0)
RBM_BOUNDS = (-0.1, 0.1)


class HarnessError(RuntimeError):
    pass


@dataclass
class ExperimentProfile:
    name: str = "synthetic"
    trainer: str = rbm.LEA_MVD_SEEDED
    budget: int = 50
    seed: int = 0
    data_dir: Optional[str] = None
    out: str = "runs/out"
    subset: int = 2000
    lam: int = 24
    n_elite: int = 4
    function: str = "sphere"
    n_var: int = 1000
    x_inf: Optional[float] = None
    x_sup: Optional[float] = None
    cd_learning_rate: float = 0.1
    cd_minibatch: int = 100

    def __post_init__(self):
        if self.name not in PROFILES:
            raise HarnessError(f"unknown profile {self.name!r}; choose from {PROFILES}")
        if self.trainer not in rbm.TRAINERS:
            raise HarnessError(f"unknown trainer {self.trainer!r}; choose from {rbm.TRAINERS}")
        if self.budget < 1 or self.subset < 1 or self.n_var < 1:
            raise HarnessError("budget, subset and n_var must be positive")

    @property
    def dbn_spec(self) -> Optional[rbm.DbnSpec]:
        return {"small7x7": rbm.SMALL_7X7, "full28x28": rbm.FULL_28X28}.get(self.name)

    def bounds(self) -> tuple[float, float]:
        lo, hi = SYNTHETIC_BOUNDS if self.name == "synthetic" else RBM_BOUNDS
        return (lo if self.x_inf is None else self.x_inf, hi if self.x_sup is None else self.x_sup)


FIELD_TYPES = {f.name: f.type for f in fields(ExperimentProfile)}
# config-file / flag spelling -> profile field
ALIASES = {"profile": "name", "lambda": "lam"}
# accepted in config files but not part of a single run's profile
KEY_TYPES = {**FIELD_TYPES, "reps": "int"}


def _coerce(key: str, value: str):
    kind = KEY_TYPES[key]
    if value in ("", "None"):
        return None
    if "int" in kind:
        return int(value)
    if "float" in kind:
        return float(value)
    return value


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment, ``meta.*`` keys are ignored."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise HarnessError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key.startswith(META_PREFIX):
            continue
        key = key.replace("-", "_")
        key = ALIASES.get(key, key)
        if key not in KEY_TYPES:
            raise HarnessError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            out[key] = _coerce(key, value)
        except ValueError:
            raise HarnessError(f"{source}:{lineno}: bad value {value!r} for {key}") from None
    return out


def load_config(path: str | Path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "run.meta"
    try:
        text = path.read_text()
    except OSError as exc:
        raise HarnessError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, str(path))


def resolve_data_dir(profile: ExperimentProfile) -> Path:
    data_dir = profile.data_dir or os.environ.get(DATA_ENV)
    if not data_dir:
        raise HarnessError(f"no MNIST data directory: pass --data-dir or set {DATA_ENV}")
    path = Path(data_dir)
    if not path.is_dir():
        raise HarnessError(f"MNIST data directory {path} does not exist")
    return path


def load_training_data(profile: ExperimentProfile) -> tuple[np.ndarray, dataio.Dataset]:
    images_path, _ = dataio.find_split(resolve_data_dir(profile), "train")
    ds = dataio.binarize(dataio.load_idx(images_path), BINARIZE_THRESHOLD)
    ds = dataio.subset(ds, min(profile.subset, ds.count), profile.seed)
    if profile.name == "small7x7":
        ds = dataio.downscale_7x7(ds)
    return ds.as_float(), ds


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def history_csv(history: Sequence[opt.GenerationRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HISTORY_COLUMNS)
    for rec in history:
        writer.writerow([_fmt(v) for v in dataclasses.astuple(rec)])
    return buf.getvalue()


def write_history(path: Path, history: Sequence[opt.GenerationRecord]) -> None:
    path.write_text(history_csv(history), newline="")


def read_history(path: Path) -> list[dict]:
    if not path.exists():
        raise HarnessError(f"missing history file {path}")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: float(v) for k, v in row.items()} for row in rows]


def meta_text(profile: ExperimentProfile, extra: dict) -> str:
    lines = [f"{f.name} = {'' if getattr(profile, f.name) is None else getattr(profile, f.name)}"
             for f in fields(profile)]
    lines += [f"{META_PREFIX}{k} = {v}" for k, v in extra.items()]
    return "\n".join(lines) + "\n"


def _optimizer_kwargs(profile: ExperimentProfile) -> dict:
    lo, hi = profile.bounds()
    return {"lam": profile.lam, "n_elite": profile.n_elite, "x_inf": lo, "x_sup": hi}


def run_experiment(profile: ExperimentProfile) -> Path:
    """Run one profile and write its artifacts; returns the run directory."""
    out = Path(profile.out)
    out.mkdir(parents=True, exist_ok=True)
    lo, hi = profile.bounds()
    meta = {
        "optimizer.sigma_min_scale": 1e-4,
        "optimizer.stagnation_limit": 10,
        "optimizer.perturb_prob": 0.02,
        "optimizer.worst_sample_count": 4,
        "optimizer.bounds": f"[{lo}, {hi}]",
        "prng": "numpy PCG64",
    }

    if profile.name == "synthetic":
        objective = objectives.synthetic(profile.function, profile.n_var)
        config = opt.OptimizerConfig(
            n_var=profile.n_var, n_gen=profile.budget, rng_seed=profile.seed,
            **_optimizer_kwargs(profile),
        )
        result = opt.run(config, objective)
        write_history(out / "history_layer1.csv", result.history)
        meta.update({
            "f_best": repr(result.f_best),
            "stop_reason": result.stop_reason,
            "generations_used": result.generations_used,
        })
        (out / "run.meta").write_text(meta_text(profile, meta))
        return out

    V, ds = load_training_data(profile)
    spec = profile.dbn_spec
    meta.update({
        "dataset.provenance": ds.provenance,
        "dataset.images": ds.count,
        "binarize.threshold": BINARIZE_THRESHOLD,
        "downscale": "4x4 block mean, >= 0.5 -> 1" if profile.name == "small7x7" else "none",
        "dbn.layers": ";".join(f"{v}x{h}" for v, h in spec.layers),
        "dbn.param_counts": ";".join(str(c) for c in spec.param_counts()),
        "cd.seed_epochs": 1 if profile.trainer == rbm.LEA_MVD_SEEDED else 0,
        "cd.weight_init": "normal(0, 0.01), zero biases",
        "evals_per_generation": profile.lam - profile.n_elite,
    })

    def on_layer(k: int, layer: rbm.LayerResult) -> None:
        write_history(out / f"history_layer{k}.csv", layer.history)
        rbm.save_checkpoint(out / f"rbm_layer{k}.ckpt", layer.rbm)
        meta[f"layer{k}.seed"] = rbm.derive_seed(profile.seed, k)
        meta[f"layer{k}.final_error"] = repr(layer.history[-1].f_best)
        log.info("layer %d: %s error %.6g -> %.6g", k, profile.trainer,
                 layer.history[0].f_best, layer.history[-1].f_best)

    rbm.pretrain_dbn(
        spec, V, profile.trainer, profile.budget, profile.seed,
        cd_config=rbm.CdConfig(learning_rate=profile.cd_learning_rate,
                               minibatch_size=profile.cd_minibatch),
        optimizer_kwargs=_optimizer_kwargs(profile),
        on_layer=on_layer,
    )
    (out / "run.meta").write_text(meta_text(profile, meta))
    return out


def layer_files(run_dir: Path) -> dict[int, Path]:
    files = {}
    for path in Path(run_dir).glob("history_layer*.csv"):
        files[int(path.stem[len("history_layer"):])] = path
    return dict(sorted(files.items()))


@dataclass
class LayerComparison:
    layer: int
    final_a: float
    best_a: float
    final_b: float
    best_b: float

    @property
    def ratio(self) -> float:
        """final_a / final_b; below 1 means run A ended lower."""
        if self.final_b == 0:
            return 1.0 if self.final_a == 0 else math.inf
        return self.final_a / self.final_b

    @property
    def winner(self) -> str:
        if self.final_a < self.final_b:
            return "a"
        if self.final_b < self.final_a:
            return "b"
        return "tie"


def compare(run_dir_a: Path | str, run_dir_b: Path | str) -> list[LayerComparison]:
    a, b = Path(run_dir_a), Path(run_dir_b)
    files_a, files_b = layer_files(a), layer_files(b)
    if not files_a:
        raise HarnessError(f"no history_layer*.csv in {a}")
    for k in sorted(set(files_a) | set(files_b)):
        if k not in files_a:
            raise HarnessError(f"layer mismatch: {a / f'history_layer{k}.csv'} is missing")
        if k not in files_b:
            raise HarnessError(f"layer mismatch: {b / f'history_layer{k}.csv'} is missing")
    rows = []
    for k in files_a:
        ha, hb = read_history(files_a[k]), read_history(files_b[k])
        if not ha or not hb:
            raise HarnessError(f"empty history for layer {k}")
        rows.append(LayerComparison(
            k, ha[-1]["f_best"], min(r["f_best"] for r in ha),
            hb[-1]["f_best"], min(r["f_best"] for r in hb),
        ))
    return rows


def format_comparison(rows: list[LayerComparison], as_csv: bool = False) -> str:
    header = ["layer", "final_a", "best_a", "final_b", "best_b", "ratio", "winner"]
    table = [[r.layer, r.final_a, r.best_a, r.final_b, r.best_b, r.ratio, r.winner] for r in rows]
    if as_csv:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows([[_fmt(v) for v in row] for row in table])
        return buf.getvalue()
    lines = ["{:>5} {:>14} {:>14} {:>14} {:>14} {:>8} {:>6}".format(*header)]
    for layer, fa, ba, fb, bb, ratio, win in table:
        lines.append(f"{layer:>5} {fa:>14.6g} {ba:>14.6g} {fb:>14.6g} {bb:>14.6g} {ratio:>8.4f} {win:>6}")
    return "\n".join(lines) + "\n"


def rep_seed(base_seed: int, i: int) -> int:
    return base_seed + i


def _run_rep(profile: ExperimentProfile) -> str:
    return str(run_experiment(profile))


def batch(profile: ExperimentProfile, repetitions: int, jobs: int = 1) -> Path:
    """Run ``repetitions`` seeds (base + i) into ``out/repNNN`` and aggregate."""
    if repetitions < 1:
        raise HarnessError("repetitions must be >= 1")
    root = Path(profile.out)
    root.mkdir(parents=True, exist_ok=True)
    reps = [
        dataclasses.replace(profile, seed=rep_seed(profile.seed, i), out=str(root / f"rep{i:03d}"))
        for i in range(repetitions)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            dirs = [Path(d) for d in pool.map(_run_rep, reps)]
    else:
        dirs = [run_experiment(p) for p in reps]
    write_aggregate(root / "aggregate.csv", dirs)
    return root


def aggregate_rows(run_dirs: Sequence[Path]) -> list[list]:
    per_layer: dict[int, dict[int, list[float]]] = {}
    for d in run_dirs:
        for k, path in layer_files(d).items():
            for row in read_history(path):
                per_layer.setdefault(k, {}).setdefault(int(row["generation"]), []).append(row["f_best"])
    rows = []
    for k in sorted(per_layer):
        for gen in sorted(per_layer[k]):
            vals = per_layer[k][gen]
            rows.append([k, gen, math.fsum(vals) / len(vals), statistics.median(vals),
                         min(vals), max(vals), len(vals)])
    return rows


def write_aggregate(path: Path, run_dirs: Sequence[Path]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["layer", "generation", "mean", "median", "min", "max", "count"])
        for row in aggregate_rows(run_dirs):
            writer.writerow([_fmt(v) for v in row])


def _add_profile_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value file (flags override it)")
    p.add_argument("--profile", choices=PROFILES)
    p.add_argument("--trainer", choices=rbm.TRAINERS)
    p.add_argument("--budget", type=int, help="epochs / generations per layer")
    p.add_argument("--seed", type=int)
    p.add_argument("--data-dir", help=f"MNIST directory (fallback: ${DATA_ENV})")
    p.add_argument("--out")
    p.add_argument("--subset", type=int, help="number of training images used")
    p.add_argument("--lambda", dest="lam", type=int)
    p.add_argument("--n-elite", type=int)
    p.add_argument("--function", choices=sorted(objectives.SYNTHETIC))
    p.add_argument("--n-var", type=int)
    p.add_argument("--x-inf", type=float)
    p.add_argument("--x-sup", type=float)
    p.add_argument("--cd-learning-rate", type=float)
    p.add_argument("--cd-minibatch", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="leamvd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    # -v is accepted on either side of the subcommand
    verbose = argparse.ArgumentParser(add_help=False)
    verbose.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    run_p = sub.add_parser("run", parents=[verbose], help="run one experiment profile")
    _add_profile_flags(run_p)

    batch_p = sub.add_parser("batch", parents=[verbose], help="repeat a profile over derived seeds and aggregate")
    _add_profile_flags(batch_p)
    batch_p.add_argument("--reps", type=int)
    batch_p.add_argument("--jobs", type=int, default=1)

    cmp_p = sub.add_parser("compare", parents=[verbose], help="tabulate per-layer results of two run directories")
    cmp_p.add_argument("run_dir_a")
    cmp_p.add_argument("run_dir_b")
    cmp_p.add_argument("--csv", action="store_true", help="machine-readable output")
    return parser


def profile_from_args(args: argparse.Namespace) -> tuple[ExperimentProfile, dict]:
    values = load_config(args.config) if args.config else {}
    extras = {"reps": values.pop("reps", None)}
    for name in FIELD_TYPES:
        flag = "profile" if name == "name" else name
        v = getattr(args, flag, None)
        if v is not None:
            values[name] = v
    if getattr(args, "reps", None) is not None:
        extras["reps"] = args.reps
    return ExperimentProfile(**values), extras


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "compare":
            rows = compare(args.run_dir_a, args.run_dir_b)
            sys.stdout.write(format_comparison(rows, as_csv=args.csv))
            return 0
        profile, extras = profile_from_args(args)
        if args.command == "run":
            out = run_experiment(profile)
        else:
            out = batch(profile, extras["reps"] or 1, jobs=args.jobs)
        print(out)
        return 0
    except (HarnessError, FileNotFoundError, dataio.IdxFormatError,
            rbm.DivergenceError, opt.NonFiniteObjectiveError, ValueError) as exc:
        print(f"leamvd: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
