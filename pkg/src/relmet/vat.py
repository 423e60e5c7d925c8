"""Virtual adversarial training on the word-embedding inputs.

A random probe perturbation is pushed through the encoder once; the gradient
of the representation displacement with respect to the probe gives the
worst-case direction, rescaled to radius epsilon per instance.  The penalty
is the mean representation displacement under that perturbation, with the
unperturbed branch treated as a constant target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import EncoderParams, backward, forward

ZERO_GRAD_TOL = 1e-12


@dataclass(frozen=True)
class VatConfig:
    epsilon: float = 0.02
    beta: float = 1.0
    probe_scale: float = 0.02

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.probe_scale <= 0:
            raise ValueError("probe_scale must be > 0")


def _rescale_slices(probe: np.ndarray, scale: float) -> np.ndarray:
    """Rescale each instance slice to the given Euclidean norm.  An all-zero
    slice (degenerate draw) is replaced by a fixed unit basis direction."""
    m = probe.shape[0]
    flat = probe.reshape(m, -1)
    norms = np.linalg.norm(flat, axis=1)
    degenerate = norms < ZERO_GRAD_TOL
    if degenerate.any():
        flat = flat.copy()
        flat[degenerate, 0] = 1.0
        norms = np.linalg.norm(flat, axis=1)
    out = flat * (scale / norms)[:, None]
    return out.reshape(probe.shape)


def random_probe(shape, probe_scale: float, rng: np.random.Generator) -> np.ndarray:
    """Isotropic Gaussian probe, rescaled to per-instance norm probe_scale."""
    if len(shape) != 3:
        raise ValueError("probe shape must be (m, max_len, word_dim)")
    return _rescale_slices(rng.standard_normal(shape), probe_scale)


def _displacement_grad(reps_ref, reps_pert, scale=1.0):
    """d(sum_i scale * |r_pert_i - r_ref_i|)/d(r_pert); zero where coincident."""
    diff = reps_pert - reps_ref
    dist = np.linalg.norm(diff, axis=1)
    safe = np.where(dist > ZERO_GRAD_TOL, dist, 1.0)
    g = diff * (scale / safe)[:, None]
    g[dist <= ZERO_GRAD_TOL] = 0.0
    return dist, g


def worst_case_perturbation(
    params: EncoderParams, batch, cfg: VatConfig, rng: np.random.Generator
) -> np.ndarray:
    """Adversarial direction: epsilon times the normalized gradient of the
    probe-induced representation displacement.  Instances whose gradient is
    below tolerance get a zero slice."""
    m, t = batch.token_ids.shape
    word_dim = params.word_emb.shape[1]
    probe = random_probe((m, t, word_dim), cfg.probe_scale, rng)
    reps_ref, _ = forward(params, batch)
    reps_pert, trace = forward(params, batch, embedding_offset=probe)
    _, grad_reps = _displacement_grad(reps_ref, reps_pert)
    _, grad_probe = backward(params, trace, grad_reps)
    flat = grad_probe.reshape(m, -1)
    norms = np.linalg.norm(flat, axis=1)
    scale = np.where(norms > ZERO_GRAD_TOL, cfg.epsilon / np.where(norms > 0, norms, 1.0), 0.0)
    return (flat * scale[:, None]).reshape(m, t, word_dim)


def vat_loss(
    params: EncoderParams, batch, xi: np.ndarray
) -> tuple[float, EncoderParams]:
    """Mean representation displacement under perturbation xi, with gradients
    flowing through the perturbed branch only."""
    m, t = batch.token_ids.shape
    word_dim = params.word_emb.shape[1]
    if xi.shape != (m, t, word_dim):
        raise ValueError(f"xi shape {xi.shape} != {(m, t, word_dim)}")
    reps_ref, _ = forward(params, batch)
    reps_pert, trace = forward(params, batch, embedding_offset=xi)
    dist, grad_reps = _displacement_grad(reps_ref, reps_pert, scale=1.0 / m)
    loss = float(dist.sum() / m)
    grads, _ = backward(params, trace, grad_reps)
    return loss, grads


def total_loss(rll: float, adv: float, cfg: VatConfig) -> float:
    """Combined objective: ranked-list loss plus beta-weighted VAT penalty."""
    if not (np.isfinite(rll) and np.isfinite(adv)):
        raise ValueError("loss terms must be finite")
    return rll + cfg.beta * adv
