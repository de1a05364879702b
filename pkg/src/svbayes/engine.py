"""Free-energy objective assembly and the stochastic training loop.

Each optimizer step rebuilds a fresh tape: reparameterized samples of the
inference parameters feed the model log-likelihood, the analytic KL to the
prior is subtracted, and one reverse sweep yields exact gradients of the
stochastic free-energy estimate.  Maximization runs as Adam descent on the
negated objective.  Everything downstream of the seed is deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import distributions, posterior
from .autodiff import DomainError, NodeId, Tape
from .distributions import Dataset, ModelKind
from .optimizer import AdamState, adam_step
from .posterior import PosteriorNodes, PosteriorParams, PriorSpec
from .rng import Rng


class DivergenceError(RuntimeError):
    """The objective or its gradient became non-finite during a fit."""

    def __init__(self, message: str, step: int, zeta: np.ndarray) -> None:
        super().__init__(f"{message} (step {step}, zeta={zeta.tolist()})")
        self.step = step
        self.zeta = zeta


@dataclass(frozen=True)
class TrainConfig:
    """Settings for one fit; `batch_size=None` means full-data steps."""

    epochs: int = 400
    batch_size: int | None = None
    mc_samples: int = 1
    learning_rate: float = 0.1
    seed: int = 0
    correlation_enabled: bool = True
    final_fe_samples: int = 1000
    shuffle: bool = False
    init: PosteriorParams | None = None

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")
        if self.final_fe_samples < 2:
            raise ValueError("final_fe_samples must be >= 2")
        if self.learning_rate < 0.0:
            raise ValueError("learning rate must be nonnegative")

    def to_json_dict(self) -> dict:
        out = {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "mc_samples": self.mc_samples,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
            "correlation_enabled": self.correlation_enabled,
            "final_fe_samples": self.final_fe_samples,
            "shuffle": self.shuffle,
        }
        if self.init is not None:
            out["init"] = {
                "m": self.init.m.tolist(),
                "v": self.init.v.tolist(),
                "u": self.init.u.tolist(),
            }
        return out


@dataclass(frozen=True)
class TraceRecord:
    """One optimizer step: stochastic objective value and its two parts."""

    epoch: int
    step: int
    free_energy: float
    kl: float
    mc_loglik: float


TRACE_CSV_HEADER = "epoch,step,F,kl,mc_loglik"


def write_trace_csv(trace: Sequence[TraceRecord], path) -> None:
    lines = [TRACE_CSV_HEADER]
    for r in trace:
        lines.append(
            f"{r.epoch},{r.step},{r.free_energy!r},{r.kl!r},{r.mc_loglik!r}"
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass(frozen=True)
class FitResult:
    """Converged posterior plus the full optimization record."""

    posterior: posterior.PosteriorSummary
    params: PosteriorParams = field(repr=False)
    trace: tuple[TraceRecord, ...] = field(repr=False)
    final_free_energy: tuple[float, float]  # (mean, standard error)
    config: TrainConfig
    steps: int

    def to_json_dict(self) -> dict:
        return {
            "posterior": self.posterior.to_json_dict(),
            "trace": [
                {
                    "epoch": r.epoch,
                    "step": r.step,
                    "F": r.free_energy,
                    "kl": r.kl,
                    "mc_loglik": r.mc_loglik,
                }
                for r in self.trace
            ],
            "final_free_energy": {
                "mean": self.final_free_energy[0],
                "se": self.final_free_energy[1],
            },
            "config": self.config.to_json_dict(),
            "steps": self.steps,
        }


class FreeEnergyParts(NamedTuple):
    """Tape nodes of the objective and its two components."""

    free_energy: NodeId
    mc_loglik: NodeId
    kl: NodeId


def estimate_free_energy(
    tape: Tape,
    model: ModelKind,
    data_batch,
    n_total: int,
    nodes: PosteriorNodes,
    prior: PriorSpec,
    epsilons: Sequence[np.ndarray],
) -> FreeEnergyParts:
    """Stochastic free-energy estimate F = (1/L) sum_l loglik(theta*_l) - KL.

    The noise vectors come in from the caller so tests can freeze them; each
    theta*_l = m + S eps_l flows through the model log-likelihood with
    mini-batch rescaling, while the KL term is analytic and shared.
    """
    if not epsilons:
        raise ValueError("need at least one noise vector")
    lls = []
    for eps in epsilons:
        theta = posterior.reparam_sample(tape, nodes, eps)
        lls.append(
            distributions.loglik_node(model, tape, (theta[0], theta[1]), data_batch, n_total)
        )
    mc = tape.mul(tape.constant(1.0 / len(lls)), tape.sum_many(lls))
    kl = posterior.kl_to_prior(tape, nodes, prior)
    return FreeEnergyParts(tape.sub(mc, kl), mc, kl)


def make_batches(data: Dataset, batch_size: int) -> list[np.ndarray]:
    """Contiguous disjoint batches covering the data in order.

    A shorter remainder batch is allowed; its own length enters the N/M
    rescaling so the expected scaled log-likelihood stays unbiased.
    """
    n = len(data)
    if not 1 <= batch_size <= n:
        raise ValueError(f"batch_size must be in [1, {n}], got {batch_size}")
    return [data.values[i : i + batch_size] for i in range(0, n, batch_size)]


def _pack(params: PosteriorParams) -> np.ndarray:
    parts = [params.m, params.v]
    if params.correlation_enabled:
        parts.append(params.u)
    return np.concatenate(parts)


def _unpack(zeta: np.ndarray, template: PosteriorParams) -> PosteriorParams:
    p = template.dim
    u = zeta[2 * p :] if template.correlation_enabled else template.u
    return PosteriorParams(
        m=zeta[:p],
        v=zeta[p : 2 * p],
        u=u,
        correlation_enabled=template.correlation_enabled,
    )


def fit(
    model: ModelKind, data: Dataset, prior: PriorSpec, config: TrainConfig
) -> FitResult:
    """Optimize the approximate posterior by stochastic free-energy ascent.

    Full-data mode takes one step per epoch on all points; mini-batch mode
    takes one step per batch, passing through the data once per epoch.  The
    returned final free energy re-estimates the objective on the full data
    with `final_fe_samples` fresh draws, since single-sample step values are
    noisy.
    """
    if model is ModelKind.FOLDED_NORMAL and np.any(data.values <= 0.0):
        raise DomainError("folded normal data must be strictly positive")
    p = prior.dim
    if p != 2:
        raise ValueError("supported models infer exactly two parameters")

    params = config.init if config.init is not None else PosteriorParams.initial(
        prior, config.correlation_enabled
    )
    if params.correlation_enabled != config.correlation_enabled:
        raise ValueError("init and config disagree on correlation_enabled")
    if params.dim != p:
        raise ValueError("init dimension does not match the prior")

    rng = Rng(config.seed)
    state = AdamState(learning_rate=config.learning_rate)
    zeta = _pack(params)
    n_total = len(data)
    batch_size = n_total if config.batch_size is None else config.batch_size

    trace: list[TraceRecord] = []
    global_step = 0
    for epoch in range(config.epochs):
        values = rng.shuffle(data.values) if config.shuffle else data.values
        batches = make_batches(Dataset(values), batch_size)
        for step, batch in enumerate(batches):
            epsilons = [rng.standard_normals(p) for _ in range(config.mc_samples)]
            try:
                tape = Tape()
                nodes = posterior.lift(tape, params)
                parts = estimate_free_energy(
                    tape, model, batch, n_total, nodes, prior, epsilons
                )
                grad = tape.grad(parts.free_energy)
            except DomainError as err:
                raise DivergenceError(f"objective failed: {err}", global_step, zeta) from err
            grad_neg = np.array([-grad[leaf] for leaf in nodes.free_leaves()])
            if not np.all(np.isfinite(grad_neg)):
                raise DivergenceError("non-finite gradient", global_step, zeta)
            trace.append(
                TraceRecord(
                    epoch=epoch,
                    step=step,
                    free_energy=tape.value(parts.free_energy),
                    kl=tape.value(parts.kl),
                    mc_loglik=tape.value(parts.mc_loglik),
                )
            )
            state, zeta = adam_step(state, zeta, grad_neg)
            params = _unpack(zeta, params)
            global_step += 1

    final_fe = _final_free_energy(model, data, params, prior, config.final_fe_samples, rng)
    return FitResult(
        posterior=posterior.extract_posterior(params),
        params=params,
        trace=tuple(trace),
        final_free_energy=final_fe,
        config=config,
        steps=global_step,
    )


def _final_free_energy(
    model: ModelKind,
    data: Dataset,
    params: PosteriorParams,
    prior: PriorSpec,
    n_samples: int,
    rng: Rng,
) -> tuple[float, float]:
    """Multi-sample estimate of F on the full data: (mean, standard error)."""
    kl = posterior.kl_value(params, prior)
    values = np.empty(n_samples)
    for i in range(n_samples):
        theta = posterior.sample_theta(params, rng.standard_normals(params.dim))
        values[i] = distributions.loglik_value(model, data.values, theta) - kl
    se = float(np.std(values, ddof=1) / math.sqrt(n_samples))
    return float(np.mean(values)), se
