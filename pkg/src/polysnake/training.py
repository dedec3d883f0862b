"""Training, evaluation, inference and sensitivity sweeps.

A training step processes one mini-batch: the U-Net maps the images to
displacement fields, each sample's contour evolves from the shared initial
circle under its own field, the per-iteration losses are accumulated into
one scalar, and a single Adam update follows. The circle and its Delaunay
faces are computed once per run since every image shares them.

Runs are seed-deterministic when ``threads=1``; every run directory gets a
config snapshot, per-batch loss log, per-epoch metrics CSV and best/last
checkpoints (optimizer state in a ``.opt`` sibling).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from threadpoolctl import threadpool_limits

from .checkpoint import OPT_SUFFIX, load_arrays, save_arrays
from .config import RunConfig, config_from_text, config_to_text
from .data import Sample, SyntheticSpec, generate, load_dataset
from .evolution import evolve
from .geometry import delaunay, init_circle
from .losses import LossWeights, balloon_loss, curvature_loss, total_loss
from .metrics import MetricReport, evaluate_masks
from .optim import Adam
from .tensor import Tensor, mse, no_grad
from .unet import UNet

__all__ = ["TrainResult", "InferResult", "train", "evaluate", "infer",
           "sweep", "load_run", "SWEEP_AXES"]


@dataclass
class TrainResult:
    epochs_run: int
    best_epoch: int
    best_report: Optional[MetricReport]
    final_train_loss: float
    history: List[Dict[str, float]]
    net: UNet
    best_state: Dict[str, np.ndarray]


@dataclass
class InferResult:
    polygon: np.ndarray
    mask: np.ndarray
    initial: np.ndarray
    trace: object


def _check_samples(samples: Sequence[Sample], what: str) -> Tuple[int, int]:
    if not samples:
        raise ValueError(f"train: empty {what} set")
    h, w = samples[0].mask.shape
    for s in samples:
        if s.mask.shape != (h, w):
            raise ValueError(
                f"train: sample {s.id!r} has size {s.mask.shape}, expected {(h, w)}")
    return h, w


def _loss_components(trace, gt: Tensor) -> Tuple[float, float, float]:
    """Raw per-term values summed over iterations, for the loss log."""
    with no_grad():
        seg = sum(float(mse(m, gt).data) for m in trace.masks)
        ball = sum(float(balloon_loss(m).data) for m in trace.masks)
        curv = sum(float(curvature_loss(p).data) for p in trace.polygons[1:])
    return seg, ball, curv


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(
                f"{v:.6f}" if isinstance(v, float) else str(v) for v in row) + "\n")


def train(cfg: RunConfig, train_samples: Optional[Sequence[Sample]] = None,
          val_samples: Optional[Sequence[Sample]] = None,
          log: Optional[Callable[[str], None]] = None) -> TrainResult:
    """Train a fresh model; see the module docstring for the loop shape.

    Samples default to the ``train``/``val`` splits of ``cfg.data_dir``.
    A non-finite batch loss aborts with the last epoch's checkpoint intact.
    """
    with threadpool_limits(limits=cfg.threads):
        return _train(cfg, train_samples, val_samples, log)


def _train(cfg, train_samples, val_samples, log):
    if train_samples is None:
        if not cfg.data_dir:
            raise ValueError("train: no samples given and cfg.data_dir is empty")
        train_samples = load_dataset(cfg.data_dir, "train")
        val_samples = load_dataset(cfg.data_dir, "val")
    h, w = _check_samples(train_samples, "training")
    if val_samples:
        _check_samples(val_samples, "validation")

    net = UNet(cfg.unet, seed=cfg.seed)
    opt = Adam(net.parameters(), lr=cfg.lr)
    p0 = init_circle(h, w, cfg.k, cfg.diameter)
    faces = delaunay(p0)
    weights = LossWeights(lambda1=cfg.lambda1, lambda2=cfg.lambda2)
    shuffle_rng = np.random.default_rng(cfg.seed)
    dropout_rng = np.random.default_rng(cfg.seed + 1)

    out = Path(cfg.out_dir) if cfg.out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(config_to_text(cfg))

    loss_rows: List[tuple] = []
    history: List[Dict[str, float]] = []
    metric_rows: List[tuple] = []
    best_miou = -1.0
    best_epoch = 0
    best_report: Optional[MetricReport] = None
    best_state = {k: v.copy() for k, v in net.state_arrays().items()}
    final_train_loss = float("nan")
    epochs_run = 0

    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(len(train_samples))
        epoch_loss = 0.0
        n_batches = 0
        for step_i, lo in enumerate(range(0, len(order), cfg.batch)):
            batch = [train_samples[i] for i in order[lo:lo + cfg.batch]]
            images = Tensor(np.stack([s.image for s in batch]).astype(np.float32))
            fields = net.forward(images, mode="train", rng=dropout_rng)

            try:
                total = None
                seg_v = ball_v = curv_v = 0.0
                for bi, s in enumerate(batch):
                    trace = evolve(p0, faces, fields[bi], cfg.iterations,
                                   mode="train", tau=cfg.tau)
                    gt = Tensor(s.mask.astype(np.float32))
                    li = total_loss(trace.masks, gt, trace.polygons[1:], weights)
                    total = li if total is None else total + li
                    cs, cb, cc = _loss_components(trace, gt)
                    seg_v += cs
                    ball_v += cb
                    curv_v += cc

                total = total * (1.0 / len(batch))
                batch_loss = float(total.data)
                if not np.isfinite(batch_loss):
                    raise ValueError("non-finite loss")

                opt.zero_grad()
                total.backward()
                opt.step()
            except ValueError as exc:
                # Divergence: stop here, leaving the previous epoch's
                # checkpoints on disk untouched.
                if "NaN" not in str(exc) and "non-finite" not in str(exc):
                    raise
                if out:
                    _flush_logs(out, loss_rows, metric_rows)
                kept = f"; last checkpoint kept at {out / 'last.acdr'}" if (
                    out and (out / "last.acdr").exists()) else ""
                raise RuntimeError(
                    f"train: diverged at epoch {epoch} step {step_i}: {exc}{kept}")

            n = len(batch)
            loss_rows.append((epoch, step_i, seg_v / n, ball_v / n,
                              curv_v / n, batch_loss))
            epoch_loss += batch_loss
            n_batches += 1

        epochs_run = epoch
        final_train_loss = epoch_loss / n_batches
        row: Dict[str, float] = {"epoch": epoch, "train_loss": final_train_loss}
        report = None
        if val_samples:
            report = evaluate(net, cfg, val_samples, _limit_threads=False)[0]
            row.update(val_f1=report.f1, val_miou=report.miou,
                       val_wcov=report.wcov, val_boundf=report.boundf)
        history.append(row)
        metric_rows.append((epoch, final_train_loss,
                            *([report.f1, report.miou, report.wcov,
                               report.boundf] if report else [])))

        improved = report is not None and report.miou > best_miou
        if improved or report is None:
            best_miou = report.miou if report else -1.0
            best_epoch = epoch
            best_report = report
            best_state = {k: v.copy() for k, v in net.state_arrays().items()}

        if out:
            _flush_logs(out, loss_rows, metric_rows)
            save_arrays(out / "last.acdr", net.state_arrays())
            save_arrays(out / ("last.acdr" + OPT_SUFFIX), opt.state_arrays())
            if improved or report is None:
                save_arrays(out / "best.acdr", best_state)
                save_arrays(out / ("best.acdr" + OPT_SUFFIX), opt.state_arrays())
        if log:
            extra = f" val_miou {report.miou:.4f}" if report else ""
            log(f"epoch {epoch}/{cfg.epochs} train_loss {final_train_loss:.4f}{extra}")

        if cfg.patience and epoch - best_epoch >= cfg.patience:
            if log:
                log(f"stopping: no val improvement in {cfg.patience} epochs")
            break

    return TrainResult(epochs_run=epochs_run, best_epoch=best_epoch,
                       best_report=best_report, final_train_loss=final_train_loss,
                       history=history, net=net, best_state=best_state)


def _flush_logs(out: Path, loss_rows, metric_rows) -> None:
    _write_csv(out / "loss_log.csv",
               ["epoch", "step", "seg", "balloon", "curvature", "total"], loss_rows)
    header = ["epoch", "train_loss"]
    if metric_rows and len(metric_rows[0]) > 2:
        header += ["val_f1", "val_miou", "val_wcov", "val_boundf"]
    _write_csv(out / "metrics.csv", header, metric_rows)


# -- inference and evaluation ---------------------------------------------------------


def infer(net: UNet, cfg: RunConfig, image: np.ndarray) -> InferResult:
    """Evolve the initial circle under the model's field for one image."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 3 or img.shape[0] != net.cfg.in_channels:
        raise ValueError(
            f"infer: expected ({net.cfg.in_channels},h,w) image, got shape {img.shape}")
    h, w = img.shape[1:]
    p0 = init_circle(h, w, cfg.k, cfg.diameter)
    faces = delaunay(p0)
    with no_grad():
        field = net.forward(Tensor(img), mode="eval")
        trace = evolve(p0, faces, field, cfg.iterations, mode="eval", tau=cfg.tau)
    return InferResult(polygon=trace.polygons[-1].data.copy(),
                       mask=trace.hard_mask, initial=p0, trace=trace)


def evaluate(net: UNet, cfg: RunConfig, samples: Sequence[Sample],
             _limit_threads: bool = True) -> Tuple[MetricReport, List[Dict]]:
    """Inference over a sample list plus aggregate and per-image metrics."""
    if not samples:
        raise ValueError("evaluate: empty sample list")
    if _limit_threads:
        with threadpool_limits(limits=cfg.threads):
            return _evaluate(net, cfg, samples)
    return _evaluate(net, cfg, samples)


def _evaluate(net, cfg, samples):
    h, w = samples[0].mask.shape
    p0 = init_circle(h, w, cfg.k, cfg.diameter)
    faces = delaunay(p0)
    preds = []
    with no_grad():
        for lo in range(0, len(samples), cfg.batch):
            chunk = samples[lo:lo + cfg.batch]
            images = Tensor(np.stack([s.image for s in chunk]).astype(np.float32))
            fields = net.forward(images, mode="eval")
            for bi in range(len(chunk)):
                field = Tensor(fields.data[bi])
                trace = evolve(p0, faces, field, cfg.iterations,
                               mode="eval", tau=cfg.tau)
                preds.append(trace.hard_mask)
    gts = [s.mask for s in samples]
    report = evaluate_masks(preds, gts)
    rows = []
    from .metrics import boundf, f1_iou
    for s, pred in zip(samples, preds):
        f1, iou = f1_iou(pred, s.mask)
        rows.append({"id": s.id, "f1": f1, "iou": iou,
                     "boundf": boundf(pred, s.mask)})
    return report, rows


def load_run(run_dir, which: str = "best") -> Tuple[RunConfig, UNet]:
    """Rebuild the model of a finished run from its directory."""
    run_dir = Path(run_dir)
    cfg_path = run_dir / "config.txt"
    if not cfg_path.exists():
        raise FileNotFoundError(f"load_run: missing config snapshot {cfg_path}")
    cfg = config_from_text(cfg_path.read_text())
    path = run_dir / f"{which}.acdr"
    if not path.exists() and which == "best":
        path = run_dir / "last.acdr"
    if not path.exists():
        raise FileNotFoundError(f"load_run: no checkpoint found in {run_dir}")
    net = UNet(cfg.unet, seed=cfg.seed)
    net.load_state(load_arrays(path))
    return cfg, net


# -- sensitivity sweeps -----------------------------------------------------------------


SWEEP_AXES = {
    "vertices": (4, 8, 16, 32, 64, 128),
    "iterations": (1, 2, 3, 4, 5),
    "resolution": (16, 32, 64, 128),
    "losses": ("seg", "seg+curv", "seg+balloon", "full"),
}


def _loss_combo(cfg: RunConfig, name: str) -> RunConfig:
    l1 = cfg.lambda1 if name in ("seg+balloon", "full") else 0.0
    l2 = cfg.lambda2 if name in ("seg+curv", "full") else 0.0
    return dataclasses.replace(cfg, lambda1=l1, lambda2=l2)


def sweep(cfg: RunConfig, axis: str, train_n: int = 120, val_n: int = 40,
          size: int = 64, log: Optional[Callable[[str], None]] = None
          ) -> List[Dict]:
    """Train and evaluate once per value of the chosen sensitivity axis.

    Each row trains on a fresh synthetic benchmark (regenerated per value
    for the resolution axis) and reports the best-epoch validation metrics.
    Writes ``sweep_<axis>.csv`` under ``cfg.out_dir`` when set.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(
            f"sweep: unknown axis {axis!r} (choices: {', '.join(SWEEP_AXES)})")
    base = dataclasses.replace(cfg, out_dir="", patience=cfg.patience or 10)

    def make_data(px):
        samples = generate(SyntheticSpec(n=train_n + val_n, size=px, seed=cfg.seed))
        return samples[:train_n], samples[train_n:]

    if axis != "resolution":
        tr, va = make_data(size)

    rows: List[Dict] = []
    for value in SWEEP_AXES[axis]:
        if axis == "vertices":
            row_cfg = dataclasses.replace(base, k=int(value))
        elif axis == "iterations":
            row_cfg = dataclasses.replace(base, iterations=int(value))
        elif axis == "resolution":
            row_cfg = base
            tr, va = make_data(int(value))
        else:
            row_cfg = _loss_combo(base, str(value))
        if log:
            log(f"sweep {axis}={value}: training on {len(tr)} samples")
        result = train(row_cfg, tr, va)
        rep = result.best_report
        rows.append({"axis": axis, "value": value, "f1": rep.f1,
                     "miou": rep.miou, "wcov": rep.wcov, "boundf": rep.boundf,
                     "epochs": result.epochs_run})
        if log:
            log(f"sweep {axis}={value}: miou {rep.miou:.4f} "
                f"({result.epochs_run} epochs)")

    if cfg.out_dir:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / f"sweep_{axis}.csv",
                   ["axis", "value", "f1", "miou", "wcov", "boundf", "epochs"],
                   [(r["axis"], r["value"], r["f1"], r["miou"], r["wcov"],
                     r["boundf"], r["epochs"]) for r in rows])
    return rows
