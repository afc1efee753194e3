"""Objective terms: cycle consistency, LSGAN, supervised and physics L1."""
from __future__ import annotations

from typing import NamedTuple

from ..autodiff import Tensor, ops
from ..core import ShapeMismatch


def mean_l1(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"L1 between {a.shape} and {b.shape}")
    return ops.mean(ops.abs(ops.sub(a, b)))


class CycleTerms(NamedTuple):
    total: Tensor
    pk: Tensor
    signal: Tensor
    cp: Tensor


def cycle_terms(p, p2, s, s2, cp, cp2, rho: float) -> CycleTerms:
    lp, ls, lc = mean_l1(p, p2), mean_l1(s, s2), mean_l1(cp, cp2)
    return CycleTerms(ops.add(ops.add(lp, ls), ops.mul(lc, float(rho))), lp, ls, lc)


def cycle_loss(p, p2, s, s2, cp, cp2, rho: float) -> Tensor:
    """L1(P, P'') + L1(S, S'') + rho * L1(Cp, Cp'')."""
    return cycle_terms(p, p2, s, s2, cp, cp2, rho).total


def lsgan_disc_loss(d_real: Tensor, d_fake: Tensor) -> Tensor:
    real = ops.mean(ops.square(ops.sub(d_real, 1.0)))
    fake = ops.mean(ops.square(d_fake))
    return ops.mul(ops.add(real, fake), 0.5)


def lsgan_gen_loss(d_fake: Tensor) -> Tensor:
    return ops.mul(ops.mean(ops.square(ops.sub(d_fake, 1.0))), 0.5)


class LsganLosses(NamedTuple):
    disc_loss: Tensor
    gen_loss: Tensor


def lsgan_losses(d_real: Tensor, d_fake: Tensor) -> LsganLosses:
    """Least-squares GAN terms with targets 1 (real) and 0 (fake)."""
    return LsganLosses(lsgan_disc_loss(d_real, d_fake), lsgan_gen_loss(d_fake))


def supervised_loss(pk_pred: Tensor, pk_label: Tensor, alpha: float) -> Tensor:
    return ops.mul(mean_l1(pk_pred, pk_label), float(alpha))


def physics_loss(s_input: Tensor, s_reconstructed: Tensor, beta: float) -> Tensor:
    return ops.mul(mean_l1(s_input, s_reconstructed), float(beta))
