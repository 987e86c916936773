"""Numerical self-checks: operator equivalence, loss oracles, gradients.

Each suite returns a :class:`SuiteResult`; the command-line ``check``
subcommand runs them all.
"""
from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import cpdc, ops
from .cpdc import VARIANTS, CpdcBlock, CpdcLayer, cpdc_direct_sweep, cpdc_forward
from .gradcheck import finite_diff_check
from .losses import HflConfig, focal_loss, focal_tversky, hybrid_focal, weighted_cross_entropy
from .model import DrcDecoder, MsemModule
from .nn import Module
from .oracles import focal_loss_scalar, focal_tversky_scalar, hybrid_focal_scalar, weighted_cross_entropy_scalar
from .tensor import Parameter, Tensor

EQUIV_TOL_32 = 1e-5
EQUIV_TOL_64 = 1e-10
LOSS_ORACLE_TOL = 1e-6
GRAD_TOL = 1e-2


@dataclass
class SuiteResult:
    name: str
    max_error: float
    tolerance: float
    cases: int
    seconds: float = 0.0
    failure: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.max_error <= self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: max_error={self.max_error:.3e} tol={self.tolerance:.0e} cases={self.cases}"


@contextmanager
def injected_fault():
    """Flip the sign of one cell of every transformed kernel (harness sensitivity)."""
    original = cpdc.transform_weights

    def faulty(weight, perm):
        out = original(weight, perm)
        if isinstance(out, Tensor):
            flip = np.ones(out.shape, dtype=out.dtype)
            flip[..., 0, 0] = -1
            return ops.mul(out, Tensor(flip))
        out = np.array(out, copy=True)
        out[..., 0, 0] *= -1
        return out

    cpdc.transform_weights = faulty
    try:
        yield
    finally:
        cpdc.transform_weights = original


def cpdc_equivalence(seed: int = 0, trials: int = 100, dtype=np.float32, shape=(1, 3, 16, 16), out_channels: int = 4) -> SuiteResult:
    """Transformed-kernel convolution vs the direct difference interpreter."""
    t0 = time.perf_counter()
    tol = EQUIV_TOL_32 if np.dtype(dtype) == np.float32 else EQUIV_TOL_64
    worst = 0.0
    failure: dict = {}
    for vi, variant in enumerate(VARIANTS):
        for trial in range(trials):
            rng = np.random.default_rng([seed, vi, trial])
            x = rng.random(shape)
            w = rng.standard_normal((out_channels, shape[1], 3, 3))
            layer = CpdcLayer(shape[1], out_channels, variant, rng)
            layer.weight = Parameter(w, dtype=dtype)
            got = cpdc_forward(layer, Tensor(x.astype(dtype)), folded=True).data.astype(np.float64)
            want = cpdc_direct_sweep(x.astype(dtype), layer.weight.data, variant)
            err = float(np.max(np.abs(got - want)))
            if err > worst:
                worst = err
                if err > tol:
                    failure = {"variant": variant, "trial": trial, "seed": seed, "input": x, "weight": w}
    return SuiteResult(f"cpdc_equivalence[{np.dtype(dtype).name}]", worst, tol, len(VARIANTS) * trials,
                       time.perf_counter() - t0, failure)


def constant_rejection(seed: int = 0, trials: int = 20, size: int = 16) -> SuiteResult:
    """Constant images give exactly zero CPDC response, border included."""
    t0 = time.perf_counter()
    worst = 0.0
    failure: dict = {}
    for vi, variant in enumerate(VARIANTS):
        for trial in range(trials):
            rng = np.random.default_rng([seed, 100 + vi, trial])
            value = rng.uniform(-10, 10)
            layer = CpdcLayer(3, 4, variant, rng)
            x = Tensor(np.full((1, 3, size, size), value, dtype=np.float32))
            err = float(np.max(np.abs(cpdc_forward(layer, x).data)))
            if err > worst:
                worst = err
                failure = {"variant": variant, "trial": trial, "seed": seed, "value": value}
    return SuiteResult("constant_rejection", worst, 0.0, len(VARIANTS) * trials, time.perf_counter() - t0,
                       failure if worst > 0 else {})


def _loss_instance(seed: int, shape=(1, 1, 4, 4)):
    rng = np.random.default_rng(seed)
    pred = rng.uniform(0.02, 0.98, shape)
    target = (rng.random(shape) < 0.4).astype(np.float64)
    return pred, target


LOSS_CASES: dict[str, tuple[Callable, Callable]] = {
    "hybrid_focal": (hybrid_focal, hybrid_focal_scalar),
    "focal_tversky": (focal_tversky, focal_tversky_scalar),
    "focal_loss": (focal_loss, focal_loss_scalar),
    "weighted_cross_entropy": (lambda p, t, cfg: weighted_cross_entropy(p, t), lambda p, t, cfg: weighted_cross_entropy_scalar(p, t)),
}


def loss_oracles(seed: int = 0, trials: int = 5, cfg: HflConfig | None = None) -> SuiteResult:
    """Vectorized losses (float64) vs plain-Python scalar evaluation."""
    t0 = time.perf_counter()
    cfg = cfg or HflConfig()
    worst = 0.0
    failure: dict = {}
    for name, (fn, oracle) in LOSS_CASES.items():
        for trial in range(trials):
            pred, target = _loss_instance(seed * 1000 + trial, (2, 1, 4, 4))
            got = float(fn(Tensor(pred, dtype=np.float64), target, cfg).data)
            want = oracle(pred, target, cfg)
            err = abs(got - want) / max(abs(want), 1.0)
            if err > worst:
                worst = err
                if err > LOSS_ORACLE_TOL:
                    failure = {"loss": name, "seed": seed * 1000 + trial, "pred": pred, "target": target}
    return SuiteResult("loss_oracles", worst, LOSS_ORACLE_TOL, len(LOSS_CASES) * trials, time.perf_counter() - t0, failure)


def loss_gradients(seed: int = 0, trials: int = 5) -> list[SuiteResult]:
    """Finite-difference checks of every loss w.r.t. the prediction (float32)."""
    out = []
    for name, (fn, _) in LOSS_CASES.items():
        t0 = time.perf_counter()
        worst = 0.0
        failure: dict = {}
        for trial in range(trials):
            s = seed * 1000 + trial
            pred, target = _loss_instance(s, (2, 1, 4, 4))
            p = Parameter(pred, name="pred")
            report = finite_diff_check(lambda: fn(p, target, HflConfig()), [p], epsilon=1e-3)
            err = report.max_error
            if err > worst:
                worst = err
                if err > GRAD_TOL:
                    failure = {"loss": name, "seed": s, "pred": pred, "target": target}
        out.append(SuiteResult(f"gradient[{name}]", worst, GRAD_TOL, trials, time.perf_counter() - t0, failure))
    return out


class GradStack(Module):
    """Two CPDC blocks, then an MSEM module and a DRC decoder."""

    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        self.blocks = [CpdcBlock(channels, rng), CpdcBlock(channels, rng)]
        self.msem = MsemModule(channels, rng, se_reduction=4)
        self.decoder = DrcDecoder(channels, channels, rng)
        self.assign_names()

    def forward(self, x: Tensor) -> Tensor:
        for b in self.blocks:
            x = b(x)
        return self.decoder(self.msem(x))


def stack_gradients(seed: int = 0, trials: int = 5, channels: int = 8, size: int = 8, max_entries: int = 4) -> SuiteResult:
    """Float32 backprop through the stack vs float64 central differences."""
    t0 = time.perf_counter()
    worst = 0.0
    failure: dict = {}
    for trial in range(trials):
        s = seed * 1000 + trial
        rng = np.random.default_rng(s)
        net = GradStack(channels, rng)
        # perturb the zero-initialized parameters so every path is exercised
        for p in net.parameters():
            p.data = (p.data + rng.normal(0, 0.1, p.shape)).astype(np.float32)
        x = Tensor(rng.standard_normal((2, channels, size, size)).astype(np.float32))
        probe = Tensor(rng.standard_normal((2, channels, size, size)).astype(np.float32))

        def loss():
            return ops.sum(ops.mul(net(x), probe))

        report = finite_diff_check(
            loss, net.parameters(), epsilon=1e-5, max_entries=max_entries, seed=s,
            reference_dtype=np.float64, kink_tol=0.05,
        )
        err = report.max_error
        if err > worst:
            worst = err
            if err > GRAD_TOL:
                failure = {"suite": "stack", "seed": s, "worst": max(report.errors, key=report.errors.get),
                           "kinks": report.kinks, "checked": report.checked}
    return SuiteResult("gradient[cpdc_msem_drc_stack]", worst, GRAD_TOL, trials, time.perf_counter() - t0, failure)


def run_all(seed: int = 0, trials: int = 5, equivalence_trials: int = 100) -> list[SuiteResult]:
    results = [
        cpdc_equivalence(seed, equivalence_trials, np.float32),
        cpdc_equivalence(seed, equivalence_trials, np.float64),
        constant_rejection(seed),
        loss_oracles(seed, trials),
    ]
    results += loss_gradients(seed, trials)
    results.append(stack_gradients(seed, trials))
    return results
