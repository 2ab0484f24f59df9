"""Command-line entry point: ``ambient-pix2pix <command> --config exp.toml``.

Exit codes: 0 ok, 2 configuration error, 3 I/O error, 4 numeric divergence.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import metrics, observer, phantom
from .config import ConfigError, ExperimentConfig, load_config
from .grid import write_grid

log = logging.getLogger("ambient_pix2pix")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED = 0, 2, 3, 4
TRUTH = "ground-truth"


def _threads() -> None:
    n = os.environ.get("AMBIENT_THREADS")
    if n:
        import torch

        torch.set_num_threads(max(1, int(n)))


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "out", None):
        cfg = replace(cfg, out_dir=Path(args.out))
    return cfg


def _train_input(ds: phantom.PairedDataset, clean_input: bool) -> np.ndarray:
    src = ds.source_clean if clean_input else ds.source_meas
    return src[ds.test_idx]


def _translate_checkpoint(path, ds):
    from .gan import load_checkpoint, translate

    state = load_checkpoint(path)
    return state.cfg.mode, translate(state, _train_input(ds, state.cfg.clean_input))


def _default_checkpoints(cfg: ExperimentConfig) -> list[Path]:
    return [p for p in (cfg.mode_dir(m) / "checkpoint.ckpt" for m in ("pix2pix", "ambient")) if p.exists()]


def _sources(cfg, ds, checkpoints) -> dict[str, np.ndarray]:
    out = {}
    for ck in checkpoints:
        if str(ck) == TRUTH:
            out["ground_truth"] = ds.target_clean[ds.test_idx]
            continue
        mode, y = _translate_checkpoint(ck, ds)
        name = mode if mode not in out else f"{mode}:{Path(ck).stem}"
        out[name] = y
    return out


# -- commands ------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = _load(args)
    m = phantom.build_dataset(cfg.phantom, cfg.n_samples, cfg.deg_source, cfg.deg_target,
                              cfg.dataset_dir, export_pngs=cfg.export_png)
    print(f"dataset {cfg.dataset_dir}: {m.n} samples, train {len(m.train)} / test {len(m.test)}")
    print(f"manifest sha256 {m.digest()}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .gan import train

    cfg = _load(args)
    tcfg = cfg.train_config(args.mode)
    if args.iters is not None:
        tcfg = replace(tcfg, total_iters=args.iters)
    ds = phantom.load_dataset(cfg.dataset_dir)
    out = cfg.mode_dir(args.mode)
    state, rows = train(ds, tcfg, cfg.net, out_dir=out, resume=bool(args.resume))
    last = rows[-1] if rows else None
    print(f"{args.mode}: {state.iteration} iterations -> {out / 'checkpoint.ckpt'}")
    if last:
        print(f"last losses: D {last['loss_d']:.4f}  G_adv {last['loss_g_adv']:.4f}  L1 {last['loss_l1']:.4f}")
    return EXIT_OK


def cmd_translate(args) -> int:
    cfg = _load(args)
    ds = phantom.load_dataset(cfg.dataset_dir)
    out = Path(args.dest) if args.dest else cfg.out_dir / "translate"
    for ck in args.checkpoints or _default_checkpoints(cfg):
        mode, y = _translate_checkpoint(ck, ds)
        d = out / mode
        d.mkdir(parents=True, exist_ok=True)
        for i, img in zip(ds.test_idx, y):
            write_grid(d / f"{i:06d}_translated.igrd", img, clean=True)
        print(f"{mode}: wrote {len(y)} translated test images to {d}")
    return EXIT_OK


def run_eval(cfg: ExperimentConfig, ds, sources: dict, embedding: str, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    clean = ds.target_clean[ds.test_idx]
    noisy = ds.target_meas[ds.test_idx]
    reports, spectra = {}, {"ground_truth": metrics.SpectrumReport.from_images(clean)}
    summary = {}
    for name, y in sources.items():
        rep = metrics.evaluate(y, clean, embedding, cfg.data_range)
        rep_meas = metrics.evaluate(y, noisy, embedding, cfg.data_range)
        slug = name.replace(":", "_")
        rep.write(out / f"metrics_{slug}")
        rep_meas.write(out / f"metrics_{slug}_vs_measured")
        reports[name] = rep
        spectra[name] = metrics.SpectrumReport.from_images(y)
        summary[name] = rep.to_json()
    for name, sp in spectra.items():
        sp.write_csv(out / f"spectrum_{name.replace(':', '_')}")
    with open(out / "table.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "ssim", "frechet", "psnr_db", "rmse"])
        for name, s in summary.items():
            w.writerow([name, repr(s["ssim_mean"]), repr(s["frechet_distance"]),
                        repr(s["psnr_db_mean"]), repr(s["rmse_mean"])])
    return {"reports": reports, "spectra": spectra, "summary": summary}


def cmd_eval(args) -> int:
    cfg = _load(args)
    embedding = args.embedding or cfg.embedding
    ds = phantom.load_dataset(cfg.dataset_dir)
    checkpoints = args.checkpoints or _default_checkpoints(cfg)
    if not checkpoints:
        raise ConfigError("no checkpoints given and none found under the output directory")
    res = run_eval(cfg, ds, _sources(cfg, ds, checkpoints), embedding, cfg.out_dir / "eval")
    print(f"{'model':<16}{'SSIM':>10}{'FD':>12}{'PSNR':>10}{'RMSE':>10}   ({embedding})")
    for name, s in res["summary"].items():
        print(f"{name:<16}{s['ssim_mean']:>10.4f}{s['frechet_distance']:>12.5f}"
              f"{s['psnr_db_mean']:>10.3f}{s['rmse_mean']:>10.4f}")
    return EXIT_OK


def run_observer(cfg, ds, pix2pix_images, ambient_images, tasks, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    truth = ds.target_clean[ds.test_idx]
    results = observer.run_task_suite(truth, pix2pix_images, ambient_images, tasks)
    observer.write_results_csv(results, out / "snr_ho.csv")
    (out / "snr_ho.json").write_text(json.dumps(observer.results_table(results), indent=2, sort_keys=True) + "\n")
    observer.dump_tasks(tasks, out / "tasks.json")
    observer.plot_results(results, out / "snr_ho.png")
    return results


def cmd_observer(args) -> int:
    cfg = _load(args)
    ds = phantom.load_dataset(cfg.dataset_dir)
    tasks = observer.load_tasks(args.tasks) if args.tasks else cfg.tasks
    p2p = args.pix2pix or cfg.mode_dir("pix2pix") / "checkpoint.ckpt"
    amb = args.ambient or cfg.mode_dir("ambient") / "checkpoint.ckpt"
    _, y_p = _translate_checkpoint(p2p, ds)
    _, y_a = _translate_checkpoint(amb, ds)
    results = run_observer(cfg, ds, y_p, y_a, tasks, cfg.out_dir / "observer")
    table = observer.results_table(results)
    print(f"{'task':<6}" + "".join(f"{s:>14}" for s in observer.SOURCES))
    for tid, row in table.items():
        print(f"{tid:<6}" + "".join(f"{row[s]:>14.5f}" for s in observer.SOURCES))
    return EXIT_OK


def cmd_report(args) -> int:
    from . import plots

    cfg = _load(args)
    embedding = args.embedding or cfg.embedding
    ds = phantom.load_dataset(cfg.dataset_dir)
    p2p = cfg.mode_dir("pix2pix") / "checkpoint.ckpt"
    amb = cfg.mode_dir("ambient") / "checkpoint.ckpt"
    sources = _sources(cfg, ds, [p2p, amb])
    out = cfg.out_dir / "report"
    res = run_eval(cfg, ds, sources, embedding, out)
    plots.plot_singular_values(res["spectra"], out / "singular_values.png")
    plots.plot_radial_power(res["spectra"], out / "radial_power.png")
    for metric in ("ssim", "psnr_db", "rmse"):
        plots.plot_metric_pdfs(res["reports"], metric, out / f"pdf_{metric}.png")
        with open(out / f"pdf_{metric}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "bin_lo", "bin_hi", "density"])
            for name, rep in res["reports"].items():
                h = metrics.metric_pdf(getattr(rep, metric))
                for lo, hi, d in zip(h.edges[:-1], h.edges[1:], h.density):
                    w.writerow([name, repr(float(lo)), repr(float(hi)), repr(float(d))])
    tasks = observer.load_tasks(args.tasks) if args.tasks else cfg.tasks
    results = run_observer(cfg, ds, sources["pix2pix"], sources["ambient"], tasks, out)
    lines = ["| Model | SSIM | FD (%s) | PSNR | RMSE |" % embedding, "|---|---|---|---|---|"]
    for name, s in res["summary"].items():
        lines.append(f"| {name} | {s['ssim_mean']:.4f} | {s['frechet_distance']:.5f} | "
                     f"{s['psnr_db_mean']:.3f} | {s['rmse_mean']:.4f} |")
    lines += ["", "| Task | " + " | ".join(observer.SOURCES) + " |", "|---" * 4 + "|"]
    for tid, row in observer.results_table(results).items():
        lines.append(f"| {tid} | " + " | ".join(f"{row[s]:.4f}" for s in observer.SOURCES) + " |")
    (out / "summary.md").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ambient-pix2pix", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", type=Path, help="override the experiment output directory")
        return sp

    common(sub.add_parser("gen-data", help="generate the paired phantom dataset")).set_defaults(func=cmd_gen_data)

    sp = common(sub.add_parser("train", help="train one model"))
    sp.add_argument("--mode", choices=("pix2pix", "ambient"), required=True)
    sp.add_argument("--iters", type=int)
    sp.add_argument("--resume", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = common(sub.add_parser("translate", help="translate the test split"))
    sp.add_argument("checkpoints", nargs="*", type=Path)
    sp.add_argument("--dest", type=Path)
    sp.set_defaults(func=cmd_translate)

    sp = common(sub.add_parser("eval", help="image-quality metrics and spectra"))
    sp.add_argument("checkpoints", nargs="*", help=f"checkpoint paths, or '{TRUTH}'")
    sp.add_argument("--embedding", choices=sorted(metrics.EMBEDDINGS))
    sp.set_defaults(func=cmd_eval)

    sp = common(sub.add_parser("observer", help="Hotelling-observer task suite"))
    sp.add_argument("--pix2pix", type=Path)
    sp.add_argument("--ambient", type=Path)
    sp.add_argument("--tasks", type=Path)
    sp.set_defaults(func=cmd_observer)

    sp = common(sub.add_parser("report", help="summary table and all figures"))
    sp.add_argument("--embedding", choices=sorted(metrics.EMBEDDINGS))
    sp.add_argument("--tasks", type=Path)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    _threads()
    from .gan.training import TrainingDivergedError

    try:
        return args.func(args)
    except (ConfigError, observer.ObserverError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergedError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
