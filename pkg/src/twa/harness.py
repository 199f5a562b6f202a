"""Experiment driver: SGD pre-training with checkpoint sampling, the TWA and
baseline phases, the Gaussian estimator study and the extraction benchmark.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import averaging
from .checkpoints import (
    MANIFEST_NAME,
    CheckpointSet,
    SamplingPolicy,
    load_set,
    save_checkpoint,
    should_sample,
    write_twa1,
)
from .distributed import DistributedConfig
from .errors import InputError
from .model_zoo import Dataset, MlpSpec, evaluate, init_params, load_csv, loss_and_grad, make_synthetic
from .optimizer import TwaConfig, TwaState, iterate_batches, run_twa, twa_step
from .param_space import LayerPartition
from .subspace import affine_residual, extract, extract_from_array, gram_schmidt

log = logging.getLogger(__name__)

MODES = ("twa", "twa_by_layer", "swa", "lawa", "greedy_soup", "sgd")

# Independent random streams derived from one experiment seed.
STREAMS = {"data": 0, "split": 1, "sgd": 2, "twa": 3, "study": 4, "bench": 5, "init": 6}


def stream_seed(seed: int, stream: str) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(STREAMS[stream],))


def stream_rng(seed: int, stream: str) -> np.random.Generator:
    return np.random.default_rng(stream_seed(seed, stream))


def stream_int(seed: int, stream: str) -> int:
    return int(stream_seed(seed, stream).generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class DataConfig:
    kind: str = "two_gaussians"
    m: int = 2000
    noise: float = 0.3
    csv_path: str | None = None
    split: tuple[float, float, float] = (0.7, 0.15, 0.15)

    def __post_init__(self):
        split = tuple(float(s) for s in self.split)
        object.__setattr__(self, "split", split)
        if len(split) != 3 or any(s <= 0 for s in split) or abs(sum(split) - 1.0) > 1e-9:
            raise InputError(f"split fractions must be three positive numbers summing to 1, got {split}")


@dataclass(frozen=True)
class SgdConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 200
    batch_size: int = 128
    lr_decay_epochs: tuple[int, ...] = (100, 150)
    lr_decay_factor: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "lr_decay_epochs", tuple(int(e) for e in self.lr_decay_epochs))
        if self.epochs < 1:
            raise InputError("epochs must be >= 1")
        if self.batch_size < 1:
            raise InputError("batch_size must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    model: MlpSpec = field(default_factory=lambda: MlpSpec((2, 32, 2)))
    data: DataConfig = field(default_factory=DataConfig)
    sgd: SgdConfig = field(default_factory=SgdConfig)
    sampling: SamplingPolicy = field(default_factory=lambda: SamplingPolicy(limit=100))
    twa: TwaConfig = field(default_factory=TwaConfig)
    distributed: DistributedConfig | None = None
    lawa_t: int = 10
    output_dir: str = "runs/default"
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        nested = {"model": MlpSpec, "data": DataConfig, "sgd": SgdConfig,
                  "sampling": SamplingPolicy, "twa": TwaConfig, "distributed": DistributedConfig}
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in doc.items():
            if key in nested and isinstance(value, dict):
                sub_known = {f.name for f in fields(nested[key])}
                bad = set(value) - sub_known
                if bad:
                    raise InputError(f"unknown keys in {key!r}: {sorted(bad)}")
                value = nested[key](**value)
            kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def steps_per_epoch(m_train: int, batch_size: int) -> int:
    return math.ceil(m_train / batch_size)


def desk_benchmark_config(seed: int = 0, output_dir: str | Path = "runs/desk") -> ExperimentConfig:
    """The small-scale "100 + 10 epochs" setup.

    two_gaussians (m=2000, noise=0.3), MLP [2, 32, 2], 200 SGD epochs with
    x0.1 decay at epochs 100 and 150, one checkpoint per epoch over the
    first 100 epochs, then 10 epochs' worth of TWA steps.
    """
    data = DataConfig()
    m_train = _split_sizes(data.m, data.split)[0]
    twa_steps = 10 * steps_per_epoch(m_train, 128)
    return ExperimentConfig(
        model=MlpSpec((2, 32, 2), "relu", seed=stream_int(seed, "init") % (2**32)),
        data=data,
        sgd=SgdConfig(),
        sampling=SamplingPolicy("every_n_epochs", 1, "head", limit=100),
        twa=TwaConfig(eta0=0.2, lam=1e-5, steps=twa_steps, schedule="scaled_linear",
                      scale_factor=1.0, batch_size=128),
        output_dir=str(output_dir),
        seed=seed,
    )


@dataclass(frozen=True)
class Splits:
    train: Dataset
    val: Dataset
    test: Dataset


def _split_sizes(m: int, fracs) -> tuple[int, int, int]:
    n_train = int(round(fracs[0] * m))
    n_val = int(round(fracs[1] * m))
    return n_train, n_val, m - n_train - n_val


def make_splits(config: ExperimentConfig) -> Splits:
    dc = config.data
    if dc.csv_path:
        full = load_csv(dc.csv_path)
    else:
        full = make_synthetic(dc.kind, dc.m, dc.noise, stream_int(config.seed, "data"))
    k = max(full.num_classes, config.model.num_classes)
    full = Dataset(full.features, full.labels, full.name, k)
    n_train, n_val, n_test = _split_sizes(len(full), dc.split)
    if min(n_train, n_val, n_test) < 1:
        raise InputError(f"dataset of {len(full)} rows is too small for split {dc.split}")
    order = stream_rng(config.seed, "split").permutation(len(full))
    return Splits(full.take(order[:n_train]), full.take(order[n_train:n_train + n_val]),
                  full.take(order[n_train + n_val:]))


@dataclass
class TrainRun:
    checkpoints: CheckpointSet
    final_weights: np.ndarray
    history: list[dict]


def train_sgd(config: ExperimentConfig, splits: Splits | None = None) -> TrainRun:
    """Mini-batch SGD with momentum, weight decay and step decay, sampling checkpoints.

    Checkpoints go to ``<output_dir>/checkpoints``; the final weights to
    ``<output_dir>/final.twa1``. Each checkpoint records the validation
    accuracy at the time it was taken.
    """
    splits = splits or make_splits(config)
    spec, sgd, policy = config.model, config.sgd, config.sampling
    out = Path(config.output_dir)
    ckpt_dir = out / "checkpoints"
    if (ckpt_dir / MANIFEST_NAME).exists():
        for p in ckpt_dir.glob("*.twa1"):
            p.unlink()
        (ckpt_dir / MANIFEST_NAME).unlink()

    w = init_params(spec)
    velocity = np.zeros_like(w)
    rng = stream_rng(config.seed, "sgd")
    spe = steps_per_epoch(len(splits.train), sgd.batch_size)
    batches = iterate_batches(len(splits.train), sgd.batch_size, rng)
    keep_last = policy.limit if policy.phase == "tail" else None

    step, taken, lr = 0, 0, sgd.lr
    history = []
    for epoch in range(sgd.epochs):
        if epoch in sgd.lr_decay_epochs:
            lr *= sgd.lr_decay_factor
        for _ in range(spe):
            _, g = loss_and_grad(spec, w, splits.train.take(next(batches)))
            g = g + sgd.weight_decay * w
            velocity = sgd.momentum * velocity + g
            w = w - lr * velocity
            step += 1
            if should_sample(policy, epoch, step, spe, taken):
                save_checkpoint(ckpt_dir, w, step=step, epoch=epoch,
                                val_metric=evaluate(spec, w, splits.val), keep_last=keep_last)
                taken += 1
        history.append({"epoch": epoch, "lr": lr,
                        "train_acc": evaluate(spec, w, splits.train),
                        "test_acc": evaluate(spec, w, splits.test)})
    out.mkdir(parents=True, exist_ok=True)
    write_twa1(out / "final.twa1", w)
    if taken == 0:
        raise InputError("sampling policy produced no checkpoints")
    return TrainRun(load_set(ckpt_dir / MANIFEST_NAME), w, history)


@dataclass
class MetricsReport:
    mode: str
    train_acc: float
    val_acc: float
    test_acc: float
    gap: float
    n_checkpoints: int
    steps: int
    seed: int
    timing_s: float
    weights: np.ndarray = field(repr=False, default=None)
    basis: object = field(repr=False, default=None)
    state: TwaState | None = field(repr=False, default=None)

    def to_json(self) -> dict:
        return {"mode": self.mode, "train_acc": self.train_acc, "val_acc": self.val_acc,
                "test_acc": self.test_acc, "gap": self.gap, "n_checkpoints": self.n_checkpoints,
                "steps": self.steps, "seed": self.seed, "timing_s": self.timing_s}


def score(spec: MlpSpec, w, splits: Splits) -> dict:
    train = evaluate(spec, w, splits.train)
    test = evaluate(spec, w, splits.test)
    return {"train_acc": train, "val_acc": evaluate(spec, w, splits.val), "test_acc": test,
            "gap": train - test}


def run_pipeline(config: ExperimentConfig, mode: str, run: TrainRun | None = None,
                 splits: Splits | None = None, write: bool = True) -> MetricsReport:
    """Produce one solution from the sampled checkpoints and score it.

    Uses ``run`` if given, else the checkpoints already in ``output_dir``,
    else trains first. ``mode="sgd"`` reports the final SGD weights.
    """
    if mode not in MODES:
        raise InputError(f"unknown mode {mode!r}; expected one of {MODES}")
    splits = splits or make_splits(config)
    if run is None:
        run = load_run(config) or train_sgd(config, splits)
    spec = config.model
    cs = run.checkpoints
    basis = state = None
    steps = 0

    start = time.perf_counter()
    if mode == "sgd":
        w = run.final_weights
    elif mode == "swa":
        w, _ = averaging.swa(cs)
    elif mode == "lawa":
        w, _ = averaging.lawa(cs, min(config.lawa_t, cs.n))
    elif mode == "greedy_soup":
        w, _, _ = averaging.greedy_soup(cs, lambda v: evaluate(spec, v, splits.val))
    else:
        groups = config.twa.groups if mode == "twa_by_layer" else 1
        if mode == "twa_by_layer" and groups == 1:
            groups = 6
        partition = LayerPartition.equal(cs.D, groups)
        basis = extract(cs, partition)
        data = splits.train if config.twa.data_source == "train" else splits.val
        twa_cfg = replace(config.twa, seed=stream_int(config.seed, "twa") % (2**32))
        w, state = run_twa(basis, spec, data, twa_cfg, config.distributed)
        steps = twa_cfg.steps
    elapsed = time.perf_counter() - start

    report = MetricsReport(mode=mode, n_checkpoints=cs.n, steps=steps, seed=config.seed,
                           timing_s=elapsed, weights=w, basis=basis, state=state,
                           **score(spec, w, splits))
    if basis is not None:
        log.info("%s affine residual %.3e", mode, affine_residual(basis, w))
    if write:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"report_{mode}.json").write_text(json.dumps(report.to_json(), indent=1))
        write_twa1(out / f"solution_{mode}.twa1", w)
    return report


def load_run(config: ExperimentConfig) -> TrainRun | None:
    """Reuse checkpoints and final weights from a previous ``train`` in ``output_dir``."""
    from .checkpoints import read_twa1

    out = Path(config.output_dir)
    manifest = out / "checkpoints" / MANIFEST_NAME
    if not manifest.exists() or not (out / "final.twa1").exists():
        return None
    return TrainRun(load_set(manifest), read_twa1(out / "final.twa1"), [])


@dataclass(frozen=True)
class GaussianStudyConfig:
    D: int = 20
    n: int = 16
    trials: int = 50
    covariance_scale: float = 1.0
    seed: int = 0
    steps: int = 500
    lam: float = 0.0

    def __post_init__(self):
        if self.n < 2:
            raise InputError("need n >= 2 samples per trial")
        if self.trials < 1:
            raise InputError("need at least one trial")
        if self.covariance_scale <= 0:
            raise InputError("covariance_scale must be positive")


@dataclass
class StudyReport:
    twa_errors: list[float]
    swa_errors: list[float]
    fraction_twa_better: float

    def to_json(self) -> dict:
        return asdict(self)


def gaussian_trial(mu: np.ndarray, var: np.ndarray, samples: np.ndarray, steps: int, lam: float
                   ) -> tuple[float, float]:
    """Squared distances to ``mu`` of the SWA point and of TWA fitted on the
    quadratic loss ``0.5 (w - mu)^T diag(var)^-1 (w - mu)``."""
    w_swa = samples.mean(axis=0)
    swa_err = float(np.sum((w_swa - mu) ** 2))
    try:
        basis = extract_from_array(samples)
    except InputError:
        return swa_err, swa_err
    prec = 1.0 / var
    # Step size 1 / L for the coefficient-space curvature bound L = ||P||^2 max(prec).
    P = basis.blocks[0]
    L = np.linalg.norm(P, 2) ** 2 * prec.max()
    eta = 1.0 / L
    state = TwaState.initial(basis)
    for _ in range(steps):
        w = state.weights()
        state = twa_step(state, prec * (w - mu), eta, lam)
    return float(np.sum((state.weights() - mu) ** 2)), swa_err


def gaussian_study(config: GaussianStudyConfig) -> StudyReport:
    """Compare SWA and TWA as estimators of the center of a Gaussian.

    Per trial: draw a center ``mu ~ N(0, I)`` and diagonal variances
    ``covariance_scale * U(0.5, 2)``, sample ``n`` weights, and record
    ``||w - mu||^2`` for both estimators.
    """
    rng = stream_rng(config.seed, "study")
    twa_errs, swa_errs = [], []
    for _ in range(config.trials):
        mu = rng.standard_normal(config.D)
        var = config.covariance_scale * rng.uniform(0.5, 2.0, size=config.D)
        samples = mu + np.sqrt(var) * rng.standard_normal((config.n, config.D))
        t, s = gaussian_trial(mu, var, samples, config.steps, config.lam)
        twa_errs.append(t)
        swa_errs.append(s)
    better = float(np.mean(np.array(twa_errs) <= np.array(swa_errs)))
    return StudyReport(twa_errs, swa_errs, better)


@dataclass
class BenchReport:
    n: int
    D: int
    repeats: int
    extract_s: list[float]
    gram_schmidt_s: list[float]

    @property
    def ratio(self) -> float:
        """How many times faster extraction is than Gram-Schmidt (by medians)."""
        return float(np.median(self.gram_schmidt_s) / max(np.median(self.extract_s), 1e-12))

    def to_json(self) -> dict:
        return {"n": self.n, "D": self.D, "repeats": self.repeats, "extract_s": self.extract_s,
                "gram_schmidt_s": self.gram_schmidt_s,
                "extract_median_s": float(np.median(self.extract_s)),
                "gram_schmidt_median_s": float(np.median(self.gram_schmidt_s)),
                "ratio": self.ratio}


def bench_extraction(n: int, D: int, repeats: int = 3, seed: int = 0) -> BenchReport:
    """Wall-clock extraction versus Gram-Schmidt on random checkpoints.

    Gram-Schmidt is timed on its own, starting from an already extracted basis.
    """
    if n < 2 or D < 1 or repeats < 1:
        raise InputError("need n >= 2, D >= 1 and repeats >= 1")
    W = stream_rng(seed, "bench").standard_normal((n, D))
    ext, gs = [], []
    for _ in range(repeats):
        t0 = time.perf_counter()
        basis = extract_from_array(W)
        t1 = time.perf_counter()
        ortho = gram_schmidt(basis)
        t2 = time.perf_counter()
        ext.append(t1 - t0)
        gs.append(t2 - t1)
        del basis, ortho
    return BenchReport(n, D, repeats, ext, gs)
