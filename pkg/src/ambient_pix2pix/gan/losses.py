"""Adversarial and L1 objectives.

Discriminator scores are probabilities in (0, 1); they are clamped to
``[EPS, 1 - EPS]`` before every log.
"""
from __future__ import annotations

import torch

EPS = 1e-7


def _log(p):
    return torch.log(p.clamp(EPS, 1.0 - EPS))


def loss_cgan(d_real, d_fake, literal: bool = False):
    """Conditional adversarial value that the discriminator maximizes.

    ``d_real`` holds scores of ``(x, y_meas)`` tuples, ``d_fake`` scores of
    ``(x, y_hat)`` tuples. The standard orientation is
    ``E[log D(x, y)] + E[log(1 - D(x, y_hat))]``; ``literal=True`` swaps the
    two arguments, i.e. ``E[log D(x, y_hat)] + E[log(1 - D(x, y))]``.
    """
    if literal:
        d_real, d_fake = d_fake, d_real
    return _log(d_real).mean() + _log(1.0 - d_fake).mean()


def generator_adv(d_fake, non_saturating: bool = True, literal: bool = False):
    """Adversarial term minimized by the generator.

    Non-saturating form ``-E[log D(x, y_hat)]``; otherwise the minimax form
    ``E[log(1 - D(x, y_hat))]``. With ``literal`` the roles of the labels flip.
    """
    if literal:
        return -_log(1.0 - d_fake).mean() if non_saturating else _log(d_fake).mean()
    return -_log(d_fake).mean() if non_saturating else _log(1.0 - d_fake).mean()


def loss_l1(y_hat, y_target):
    return (y_hat - y_target).abs().mean()


def total_loss(adv, l1, lam: float = 1.0):
    return adv + lam * l1
