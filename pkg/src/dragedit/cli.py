"""Command-line entry points.

Report-producing subcommands (train, probe, bench, drag with
--report-dir) write line-delimited JSON records and render matplotlib
figures next to them.
"""

from __future__ import annotations

import json
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from .autodiff import Tensor
from .bench import run_bench, summarize_bench
from .checkpoint import load_archive, load_checkpoint, save_archive, save_checkpoint
from .diffusion import (
    DEFAULT_BETA_END,
    DEFAULT_BETA_START,
    DEFAULT_DDIM_STEPS,
    DEFAULT_T_TRAIN,
    TrainConfig,
    ddim_invert,
    ddim_sample,
    make_ddim_schedule,
    make_linear_schedule,
    train,
)
from .drag import DragInstruction, DragParams, SessionStatus, drag_edit
from .figures import (
    save_bench_scatter,
    save_drag_report,
    save_loss_curve,
    save_probe_grid,
    save_probe_summary,
)
from .imgio import load_image, save_image
from .probe import ProbeConfig, probe_report
from .shapes import gen_dataset
from .unet import ArchConfig, FeatureTap, UNet

EXIT_MAX_STEPS = 2


def _load_model(ckpt: str):
    model, meta = load_checkpoint(ckpt)
    sched_meta = meta.get("schedule", {})
    sched = make_linear_schedule(
        int(sched_meta.get("t_train", DEFAULT_T_TRAIN)),
        float(sched_meta.get("beta_start", DEFAULT_BETA_START)),
        float(sched_meta.get("beta_end", DEFAULT_BETA_END)),
    )
    ddim = make_ddim_schedule(sched.t_train, int(sched_meta.get("ddim_steps",
                                                                DEFAULT_DDIM_STEPS)))
    return model, meta, sched, ddim


def parse_points(spec: str) -> list[tuple[tuple[float, float], tuple[float, float]]]:
    """Parse "x1,y1:x2,y2;x3,y3:x4,y4" into anchor/objective pairs."""
    pairs = []
    for chunk in spec.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        halves = chunk.split(":")
        if len(halves) != 2:
            raise ValueError(f"pair {chunk!r} must be 'ax,ay:bx,by'")
        points = []
        for half in halves:
            coords = half.split(",")
            if len(coords) != 2:
                raise ValueError(f"point {half!r} must be 'x,y'")
            try:
                points.append((float(coords[0]), float(coords[1])))
            except ValueError:
                raise ValueError(f"non-numeric coordinate in {half!r}") from None
        pairs.append((points[0], points[1]))
    if not pairs:
        raise ValueError("no drag pairs given")
    return pairs


def _load_mask(path: str | None, size: int) -> np.ndarray | None:
    if path is None:
        return None
    img = load_image(path)
    if img.shape != (size, size):
        raise click.ClickException(f"mask shape {img.shape} != image size {size}")
    return (img > 0.0).astype(np.float32)


@click.group()
def main():
    """Point-drag editing on a toy diffusion model."""


@main.command("train")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="JSON file overriding arch/train/dataset/schedule defaults.")
@click.option("--out", "out_path", required=True, type=click.Path())
def train_cmd(config_path, out_path):
    """Train the toy model on synthetic rings and write a checkpoint."""
    cfg = {}
    if config_path:
        cfg = json.loads(Path(config_path).read_text())
    arch = ArchConfig.from_dict({**ArchConfig().to_dict(), **cfg.get("arch", {})})
    tc = TrainConfig(**cfg.get("train", {}))
    ds_cfg = {"n": 2000, "seed": 7, "size": arch.image_size, "kind": "ring",
              **cfg.get("dataset", {})}
    sched_cfg = {"t_train": DEFAULT_T_TRAIN, "beta_start": DEFAULT_BETA_START,
                 "beta_end": DEFAULT_BETA_END, "ddim_steps": DEFAULT_DDIM_STEPS,
                 **cfg.get("schedule", {})}
    if ds_cfg["size"] != arch.image_size:
        raise click.ClickException("dataset size must match arch image_size")

    sched = make_linear_schedule(sched_cfg["t_train"], sched_cfg["beta_start"],
                                 sched_cfg["beta_end"])
    gen_kwargs = {k: tuple(ds_cfg[k]) for k in ("radius_range", "thickness_range")
                  if k in ds_cfg}
    images, _ = gen_dataset(ds_cfg["n"], ds_cfg["seed"], ds_cfg["size"],
                            ds_cfg["kind"], **gen_kwargs)
    model = UNet.init(arch, seed=tc.seed)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    log_path = out.with_suffix(".train_log.jsonl")
    meta = {"schedule": sched_cfg, "train": vars(tc).copy(), "dataset": ds_cfg}

    losses: list[float] = []
    with open(log_path, "w") as log:
        def log_fn(step, loss, elapsed):
            log.write(json.dumps({"step": step, "loss": loss,
                                  "wall_time": round(elapsed, 3)}) + "\n")
            log.flush()
            click.echo(f"step {step:6d}  loss {loss:.5f}  {elapsed:7.1f}s")

        def ckpt_fn(step):
            save_checkpoint(out, model, meta)

        losses = train(model, images, tc, sched, log_fn=log_fn, ckpt_fn=ckpt_fn)
    save_checkpoint(out, model, meta)
    save_loss_curve(losses, out.with_suffix(".loss_curve.png"))
    click.echo(f"checkpoint written to {out}")


@main.command()
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
def sample(ckpt, seed, out_path):
    """Draw one unconditional sample by deterministic denoising."""
    model, _, sched, ddim = _load_model(ckpt)
    rng = np.random.default_rng(seed)
    size = model.config.image_size
    x = Tensor(rng.standard_normal((1, model.config.in_channels, size, size))
               .astype(np.float32))
    x0 = ddim_sample(model, x, ddim.k_steps, 0, sched, ddim)
    save_image(out_path, np.clip(x0.data[0, 0], -1, 1))
    click.echo(f"sample written to {out_path}")


@main.command()
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--t", "t_edit", default=35, show_default=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
def invert(ckpt, image_path, t_edit, out_path):
    """Dump the noisy state of an image at a chosen denoising step."""
    model, _, sched, ddim = _load_model(ckpt)
    img = load_image(image_path)
    z = ddim_invert(model, Tensor(img[None, None]), t_edit, sched, ddim)
    save_archive(out_path, {"kind": "inversion_state", "k": t_edit,
                            "t_model": int(ddim.tau[t_edit])}, {"z": z.data})
    click.echo(f"inversion state written to {out_path}")


@main.command()
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--points", required=True,
              help='Drag pairs "ax,ay:bx,by;..." in pixel coordinates.')
@click.option("--mask", "mask_path", default=None, type=click.Path(exists=True),
              help="Editable-region image (nonzero = editable).")
@click.option("--t-edit", default=35, show_default=True, type=int)
@click.option("--t-refine", default=10, show_default=True, type=int)
@click.option("--no-propagate", is_flag=True, default=False)
@click.option("--tap", default="bottleneck", show_default=True,
              help="Feature tap to optimize.")
@click.option("--r1", default=1, show_default=True, type=int)
@click.option("--r2", default=3, show_default=True, type=int)
@click.option("--lam", default=0.1, show_default=True, type=float)
@click.option("--lr", default=0.01, show_default=True, type=float)
@click.option("--max-steps", default=80, show_default=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--report-dir", default=None, type=click.Path(),
              help="Write progress records and report figures here.")
def drag(ckpt, image_path, points, mask_path, t_edit, t_refine, no_propagate, tap,
         r1, r2, lam, lr, max_steps, out_path, report_dir):
    """Run a full drag edit; exit 0 on convergence, 2 on the step cap."""
    model, _, sched, ddim = _load_model(ckpt)
    try:
        pairs = parse_points(points)
        dp = DragParams(t_edit=t_edit, t_refine=t_refine, r1=r1, r2=r2, lam=lam,
                        lr=lr, max_steps=max_steps, propagate=not no_propagate,
                        optimized_tap=FeatureTap.parse(tap))
    except ValueError as exc:
        raise click.ClickException(str(exc)) from None
    img = load_image(image_path)
    instruction = DragInstruction(pairs=pairs,
                                  mask=_load_mask(mask_path, model.config.image_size))
    progress_rows: list[dict] = []

    def progress(session):
        a, m = session.latest_losses()
        progress_rows.append({"iteration": session.iterations, "alignment_loss": a,
                              "mask_loss": m,
                              "anchors": session.anchors.tolist()})

    try:
        session, edited = drag_edit(model, Tensor(img[None, None]), instruction, dp,
                                    sched, ddim, progress=progress)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from None
    save_image(out_path, edited.data[0, 0])
    click.echo(f"status={session.status.value} iterations={session.iterations} "
               f"remaining={session.max_remaining_distance():.2f}px -> {out_path}")

    if report_dir:
        rd = Path(report_dir)
        rd.mkdir(parents=True, exist_ok=True)
        with open(rd / "progress.jsonl", "w") as f:
            for row in progress_rows:
                f.write(json.dumps(row) + "\n")
        save_drag_report(img, edited.data[0, 0], pairs, session.trajectory,
                         session.loss_history, rd / "report.png")
    if session.status is SessionStatus.MAX_STEPS:
        sys.exit(EXIT_MAX_STEPS)
    if session.status is not SessionStatus.CONVERGED:
        raise click.ClickException(f"drag failed with status {session.status.value}")


@main.command()
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--taps", default="bottleneck,encoder_block1", show_default=True,
              help="Comma-separated tap names.")
@click.option("--t0", "t0s", default="45,35,25", show_default=True,
              help="Comma-separated start steps.")
@click.option("--images", "n_images", default=16, show_default=True, type=int)
@click.option("--seed", default=99, show_default=True, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path())
def probe(ckpt, taps, t0s, n_images, seed, out_dir):
    """Feature-replacement study: records, summary, figures, images."""
    model, _, sched, ddim = _load_model(ckpt)
    try:
        config = ProbeConfig(
            taps=[FeatureTap.parse(t) for t in taps.split(",") if t.strip()],
            start_steps=[int(t) for t in t0s.split(",") if t.strip()],
            n_images=n_images, image_seed=seed)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from None
    images, _ = gen_dataset(n_images, seed, model.config.image_size)
    records, recons, baselines = probe_report(model, images, config, sched, ddim)

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    with open(out / "records.jsonl", "w") as f:
        for row in records:
            f.write(json.dumps(row) + "\n")
    summary: dict[str, dict] = {}
    for tap in config.taps:
        for t0 in config.start_steps:
            vals = [r["mse"] for r in records
                    if r["tap"] == tap.value and r["t0"] == t0]
            summary[f"{tap.value}@t0={t0}"] = {
                "mean_mse": float(np.mean(vals)), "std_mse": float(np.std(vals))}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    save_probe_summary(records, out / "probe_mse.png")
    for img_id in range(min(4, n_images)):
        per_img = {(tap, t0): recons[(img_id, tap, t0)]
                   for (iid, tap, t0) in recons if iid == img_id}
        save_probe_grid(images[img_id, 0], baselines[img_id], per_img,
                        out / f"grid_{img_id}.png")
        save_image(out / "images" / f"baseline_{img_id}.png", baselines[img_id])
        for (tap, t0), rec in per_img.items():
            save_image(out / "images" / f"replay_{img_id}_{tap}_t{t0}.png", rec)
    click.echo(f"{len(records)} records -> {out}")


@main.command()
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--cases", "n_cases", default=10, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="Records file (.jsonl); figures land next to it.")
@click.option("--max-steps", default=80, show_default=True, type=int)
@click.option("--t-edit", default=35, show_default=True, type=int)
@click.option("--t-refine", default=10, show_default=True, type=int)
def bench(ckpt, n_cases, seed, out_path, max_steps, t_edit, t_refine):
    """Mean-distance / fidelity benchmark incl. the propagation ablation."""
    model, _, sched, ddim = _load_model(ckpt)
    dp = DragParams(max_steps=max_steps, t_edit=t_edit, t_refine=t_refine)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as f:
        def progress(rec):
            f.write(json.dumps(rec) + "\n")
            f.flush()
            click.echo(f"case {rec['case_id']} propagate={rec['propagate']} "
                       f"md={rec['md']:.2f} fidelity={rec['fidelity']:.4f} "
                       f"converged={rec['converged']}")
        records = run_bench(model, n_cases, seed, dp, sched, ddim, progress=progress)
    summary = summarize_bench(records)
    out.with_suffix(".summary.json").write_text(json.dumps(summary, indent=2))
    save_bench_scatter(records, out.with_suffix(".scatter.png"))
    click.echo(json.dumps(summary))


@main.command()
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--port", default=8008, show_default=True, type=int)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--data-dir", default=None, type=click.Path())
@click.option("--static-dir", default=None, type=click.Path(),
              help="Directory with the built web UI (served at /).")
def serve(ckpt, port, host, data_dir, static_dir):
    """Serve the drag-editing HTTP API (and the UI, if built)."""
    import uvicorn

    from .server import create_app
    model, meta, sched, ddim = _load_model(ckpt)
    app = create_app(model, sched, ddim, model_name=Path(ckpt).name,
                     data_dir=data_dir, static_dir=static_dir)
    click.echo(f"serving {Path(ckpt).name} on http://{host}:{port}")
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
