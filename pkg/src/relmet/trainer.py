"""Adam optimizer and the episodic training loop."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, SamplerConfig, Vocabulary, build_vocab, encode_inputs, sample_episode
from .encoder import EncoderConfig, EncoderParams, backward, forward, init_params, save_checkpoint
from .metric_loss import LossConfig, rll_batch
from .vat import VatConfig, total_loss, vat_loss, worst_case_perturbation

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class DivergenceError(RuntimeError):
    """Raised when gradients stop being finite."""


@dataclass
class AdamState:
    m: EncoderParams
    v: EncoderParams
    step: int = 0

    @classmethod
    def zeros(cls, params: EncoderParams) -> "AdamState":
        return cls(m=params.zeros_like(), v=params.zeros_like(), step=0)


def adam_step(
    params: EncoderParams, grads: EncoderParams, state: AdamState, lr: float
) -> tuple[EncoderParams, AdamState]:
    """One bias-corrected Adam update; inputs are left untouched."""
    t = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    for name, g in grads.tensors().items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"divergent gradients at step {t} in {name}")
        m = ADAM_BETA1 * state.m.tensors()[name] + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * state.v.tensors()[name] + (1.0 - ADAM_BETA2) * g * g
        m_hat = m / (1.0 - ADAM_BETA1**t)
        v_hat = v / (1.0 - ADAM_BETA2**t)
        new_params[name] = params.tensors()[name] - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        new_m[name], new_v[name] = m, v
    return EncoderParams(**new_params), AdamState(EncoderParams(**new_m), EncoderParams(**new_v), t)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.003
    num_steps: int = 1000
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    vat: VatConfig | None = None
    eval_every: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.num_steps < 1:
            raise ValueError("num_steps must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


@dataclass
class StepRecord:
    step: int
    rll_loss: float
    vat_loss: float
    total_loss: float


def _accumulate(total: EncoderParams, extra: EncoderParams, scale: float):
    for name, t in total.tensors().items():
        t += scale * extra.tensors()[name]


def train(
    data: Dataset,
    enc_cfg: EncoderConfig,
    cfg: TrainConfig,
    vocab: Vocabulary | None = None,
    *,
    checkpoint_path=None,
) -> tuple[EncoderParams, list[StepRecord]]:
    """Episodic training: sample, encode, ranked-list loss, optional VAT,
    one combined Adam update per step.

    Deterministic given (data, configs): initialization, sampling, and VAT
    probes draw from independent streams derived from the config seeds, so
    disabling VAT does not shift the sampling sequence.
    """
    if vocab is None:
        vocab = build_vocab(data, min_freq=1)
    if enc_cfg.vocab_size != len(vocab):
        raise ValueError(
            f"encoder.vocab_size={enc_cfg.vocab_size} does not match vocabulary size {len(vocab)}"
        )
    ss = np.random.SeedSequence([cfg.seed, cfg.sampler.seed])
    rng_init, rng_sample, rng_vat = (np.random.default_rng(c) for c in ss.spawn(3))
    params = init_params(enc_cfg, rng_init)
    state = AdamState.zeros(params)
    vat_on = cfg.vat is not None and cfg.vat.beta > 0.0
    history: list[StepRecord] = []
    for step in range(1, cfg.num_steps + 1):
        episode = sample_episode(data, cfg.sampler, rng_sample)
        batch = encode_inputs(episode, vocab, enc_cfg.max_len, enc_cfg.max_offset)
        reps, trace = forward(params, batch)
        rll, grad_reps = rll_batch(reps, batch.labels, cfg.loss)
        grads, _ = backward(params, trace, grad_reps)
        adv = 0.0
        if vat_on:
            xi = worst_case_perturbation(params, batch, cfg.vat, rng_vat)
            adv, vat_grads = vat_loss(params, batch, xi)
            _accumulate(grads, vat_grads, cfg.vat.beta)
        total = total_loss(rll, adv, cfg.vat) if vat_on else rll
        params, state = adam_step(params, grads, state, cfg.learning_rate)
        history.append(StepRecord(step, rll, adv, total))
        if checkpoint_path is not None and step % cfg.eval_every == 0:
            save_checkpoint(checkpoint_path, enc_cfg, params)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, enc_cfg, params)
    return params, history
