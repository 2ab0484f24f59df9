"""PNG figures for reports. The CSVs written next to them are the record."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .metrics import metric_pdf


def plot_singular_values(spectra: dict, path, n_show: int = 200) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    for name, rep in spectra.items():
        sv = rep.singular_values[:n_show]
        ax.semilogy(np.arange(1, len(sv) + 1), np.maximum(sv, 1e-12), label=name)
    ax.set_xlabel("index")
    ax.set_ylabel("eigenvalue of covariance")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_radial_power(spectra: dict, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    for name, rep in spectra.items():
        ax.semilogy(rep.frequencies, np.maximum(rep.radial_power, 1e-16), label=name)
    ax.set_xlabel("radial frequency bin")
    ax.set_ylabel("mean power")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_metric_pdfs(reports: dict, metric: str, path, n_bins: int = 30) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    for name, rep in reports.items():
        values = getattr(rep, metric)
        if np.ptp(values) == 0:
            continue
        h = metric_pdf(values, n_bins)
        ax.stairs(h.density, h.edges, label=name)
    ax.set_xlabel(metric)
    ax.set_ylabel("density")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
