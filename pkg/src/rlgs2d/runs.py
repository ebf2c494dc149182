"""End-to-end experiments and their on-disk outputs."""

from __future__ import annotations

import csv
import json
import math
import time
from pathlib import Path

import numpy as np

from .baselines import SearchSpace, Trial, bo_search, random_search
from .config import RunConfig
from .controller import ABLATIONS, RLGS
from .dataset import Dataset, synth_dataset
from .splat2d import SplatScene, write_ppm
from .trainer import HyperParams, Trainer

METRIC_COLUMNS = ["iteration", "train_loss", "test_psnr", "test_ssim", "splats"]
SUMMARY_COLUMNS = ["method", "seed", "test_psnr", "test_ssim", "train_loss", "splats", "train_steps", "trials", "seconds"]
PLAIN = "w/o RLLR and RLDS"


def write_csv(path: Path, rows: list[dict], columns: list[str] | None = None) -> None:
    columns = columns or list(dict.fromkeys(k for r in rows for k in r))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def build_dataset(rc: RunConfig) -> Dataset:
    return synth_dataset(rc.dataset_config(), np.random.default_rng(rc["seed"]))


def build_trainer(rc: RunConfig, ds: Dataset | None = None) -> Trainer:
    ds = ds or build_dataset(rc)
    return Trainer(ds.train_views, ds.test_views, rc.train_config(), rc.hyperparams())


def write_dataset(ds: Dataset, out: Path) -> None:
    (out / "views").mkdir(parents=True, exist_ok=True)
    meta = []
    for v in ds.views:
        name = f"views/view_{v.id:03d}.ppm"
        write_ppm(out / name, v.target)
        meta.append({"id": v.id, "label": v.label, "linear": v.linear.tolist(), "translation": v.translation.tolist(), "image": name})
    (out / "views.json").write_text(json.dumps(meta, indent=2) + "\n")
    if isinstance(ds.source, SplatScene):
        ds.source.save(out / "gt_scene.txt")
    elif ds.source is not None:
        write_ppm(out / "source.ppm", ds.source)


def write_run(out: Path, rc: RunConfig, trainer: Trainer, state, trace: list[dict], summary: dict) -> dict:
    """Metrics trace, test renders, final scene, resolved config and a one-row summary."""
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "metrics.csv", trace, METRIC_COLUMNS)
    (out / "renders").mkdir(exist_ok=True)
    for v in trainer.test_views:
        write_ppm(out / "renders" / f"test_{v.id:03d}.ppm", trainer.render(state, v))
    state.scene.save(out / "scene.txt")
    rc.save(out / "config.resolved.json")
    final = trace[-1]
    summary = {
        "seed": rc["seed"],
        "test_psnr": final["test_psnr"],
        "test_ssim": final["test_ssim"],
        "train_loss": final["train_loss"],
        "splats": final["splats"],
        "trials": 1,
        **summary,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def run_fit(rc: RunConfig, out: Path, ds: Dataset | None = None) -> dict:
    start = time.perf_counter()
    trainer = build_trainer(rc, ds)
    state, trace = trainer.run()
    return write_run(out, rc, trainer, state, trace, {"method": PLAIN, "train_steps": trainer.steps_taken, "seconds": time.perf_counter() - start})


def run_rlgs(rc: RunConfig, out: Path, ds: Dataset | None = None, method: str = "RLGS") -> dict:
    start = time.perf_counter()
    trainer = build_trainer(rc, ds)
    result = RLGS(trainer, rc.rlgs_config(), rc["seed"]).run()
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "phases.csv", result.phases)
    return write_run(out, rc, trainer, result.state, result.trace, {"method": method, "train_steps": trainer.steps_taken, "seconds": time.perf_counter() - start})


def _trial_row(t: Trial, names: list[str]) -> dict:
    row = {"trial": t.index, **dict(zip(names, (float(v) for v in t.params)))}
    row.update(objective=t.objective, test_psnr=t.test_psnr, test_ssim=t.test_ssim, seconds=t.seconds)
    return row


def run_search(rc: RunConfig, out: Path, method: str, ds: Dataset | None = None) -> dict:
    """Random search (``"rs"``) or TPE (``"tpe"``); every trial is a complete training run."""
    start = time.perf_counter()
    ds = ds or build_dataset(rc)
    cfg, hp_default = rc.train_config(), rc.hyperparams()
    space = SearchSpace.around(hp_default, rc["search.range_factor"])
    best = {"objective": -math.inf}
    steps = 0

    def evaluate(hp: HyperParams) -> dict:
        nonlocal steps
        trainer = Trainer(ds.train_views, ds.test_views, cfg, hp_default)
        state, trace = trainer.run(hp)
        steps += trainer.steps_taken
        objective = trainer.mean_psnr(state, trainer.pool_ids)
        objective = objective if math.isfinite(objective) else -math.inf
        if objective > best["objective"]:
            best.update(objective=objective, trainer=trainer, state=state, trace=trace)
        return {"objective": objective, "test_psnr": trace[-1]["test_psnr"], "test_ssim": trace[-1]["test_ssim"]}

    n, seed = rc["search.n_trials"], rc["seed"]
    if method == "rs":
        result = random_search(space, n, evaluate, seed)
        label = "Random search"
    elif method == "tpe":
        result = bo_search(space, n, evaluate, seed, rc["search.n_startup"], rc["search.gamma"], rc["search.n_candidates"])
        label = "TPE"
    else:
        raise ValueError(f"unknown search method {method!r}")
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "trials.csv", [_trial_row(t, space.names) for t in result.trials])
    summary = {"method": label, "train_steps": steps, "trials": n, "seconds": time.perf_counter() - start}
    return write_run(out, rc, best["trainer"], best["state"], best["trace"], summary)


def run_ablation(rc: RunConfig, out: Path) -> list[dict]:
    """Full method, each single-component ablation, and plain training on one dataset."""
    ds = build_dataset(rc)
    out.mkdir(parents=True, exist_ok=True)
    variants = [("RLGS", {})] + [(name, {flag: True}) for flag, name in ABLATIONS.items()]
    rows = []
    for name, flags in variants:
        sub = RunConfig(dict(rc.values)).update({f"rlgs.{k}": v for k, v in flags.items()})
        slug = next(iter(flags), "full")
        s = run_rlgs(sub, out / slug, ds, method=name)
        rows.append({**s, "config": json.dumps(flags, sort_keys=True)})
    s = run_fit(rc, out / "plain", ds)
    rows.append({**s, "config": json.dumps({"controller": False})})
    write_csv(out / "ablation.csv", rows, SUMMARY_COLUMNS + ["config"])
    return rows


def collect(root: Path) -> list[dict]:
    """Every ``summary.json`` below ``root`` as a table row, in path order."""
    rows = []
    for p in sorted(root.rglob("summary.json")):
        row = json.loads(p.read_text())
        row["run"] = str(p.parent.relative_to(root)) or "."
        rows.append(row)
    return rows


def format_table(rows: list[dict]) -> str:
    cols = ["run"] + SUMMARY_COLUMNS
    cells = [[_fmt(r.get(c, "")) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)
