"""End-to-end plumbing: graph build + harmonic solve + thresholding, plus
surrogate preparation for the attack suite.

Evaluation is transductive: query points join the graph unlabeled, so the
classifier sees their geometry but not their labels. One `AttackContext`
owns the surrogates for a (train, seed) pair; surrogates are independent of
the budget, so a context is fitted once and reused across budget sweeps.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .attack import AttackSpec, run_attack
from .classify import Prediction, accuracy, gl_classify, knn_classify
from .data import Dataset
from .graph import Graph, KernelSpec, build_epsilon_graph, build_knn_graph
from .models import TrainConfig, substitute_train_loop, train_surrogate
from .solve import HarmonicSolution, SolverConfig, harmonic_extend

__all__ = ["PipelineConfig", "Pipeline", "AttackContext"]


@dataclass(frozen=True)
class PipelineConfig:
    """Graph construction and solver knobs for one classifier instance.

    Exactly one of graph_k / kernel must be set: a kNN graph with the given
    weighting, or a bandwidth-kernel graph.
    """

    graph_k: int | None = None
    knn_weights: str = "self_tuning_gaussian"
    kernel: KernelSpec | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    knn_baseline_k: int = 1   # nearest-neighbor baseline, Wang-style 1-NN

    def __post_init__(self):
        if (self.graph_k is None) == (self.kernel is None):
            raise ValueError("set exactly one of graph_k or kernel")


class Pipeline:
    """Transductive graph classifier plus its nearest-neighbor baseline."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg

    def build_graph(self, ds: Dataset) -> Graph:
        if self.cfg.graph_k is not None:
            return build_knn_graph(ds, self.cfg.graph_k, self.cfg.knn_weights)
        return build_epsilon_graph(ds, self.cfg.kernel)

    def extend(self, ds: Dataset) -> HarmonicSolution:
        return harmonic_extend(self.build_graph(ds), ds, self.cfg.solver)

    def merge(self, train: Dataset, query_points) -> Dataset:
        """Append query points as unlabeled nodes (labels NaN placeholders)."""
        query_points = np.atleast_2d(np.asarray(query_points, dtype=np.float64))
        pts = np.vstack([train.points, query_points])
        labels = np.concatenate([train.labels, np.full(len(query_points), 0.0)])
        mask = np.concatenate(
            [train.labeled_mask, np.zeros(len(query_points), bool)])
        return Dataset(pts, labels, mask, train.name, dict(train.meta))

    def solve_with_queries(self, train: Dataset, query_points):
        merged = self.merge(train, query_points)
        sol = self.extend(merged)
        return sol, merged

    def predict(self, train: Dataset, query_points) -> Prediction:
        sol, _ = self.solve_with_queries(train, query_points)
        full = gl_classify(sol)
        sl = slice(train.n, None)
        return Prediction(full.classes[sl], full.scores[sl])

    def gl_accuracy(self, train, query_points, query_labels):
        return accuracy(self.predict(train, query_points), query_labels)

    def knn_accuracy(self, train, query_points, query_labels, k=None):
        k = k if k is not None else self.cfg.knn_baseline_k
        return accuracy(knn_classify(train, query_points, k), query_labels)

    def victim_oracle(self, train: Dataset):
        """Black-box query interface: points in, hard labels out."""
        def oracle(points):
            return self.predict(train, points).classes
        return oracle


_BB_KIND = {"bb_lr": "logistic", "bb_nn": "mlp", "bb_kernel": "kernel"}


@dataclass(frozen=True)
class SubstituteSettings:
    rounds: int = 3
    aug_step: float = 0.1
    seed_pool: int = 150
    logistic: TrainConfig = field(default_factory=lambda: TrainConfig(
        learning_rate=0.5, epochs=300))
    mlp: TrainConfig = field(default_factory=lambda: TrainConfig(
        learning_rate=0.1, epochs=60))
    kernel: TrainConfig = field(default_factory=lambda: TrainConfig(
        learning_rate=0.5, epochs=300))

    def config_for(self, model_kind, seed):
        base = getattr(self, model_kind)
        return replace(base, seed=seed)


class AttackContext:
    """Surrogates and reference data for one (train set, seed) pair.

    The kernel-substitution surrogate trains on the victim's own labeled
    data; black-box surrogates train through the query-augmentation loop
    against the transductive victim, seeded from attacker-supplied points
    (a validation split in the experiments).
    """

    def __init__(self, pipeline: Pipeline, train: Dataset, attacker_points,
                 seed=0, settings: SubstituteSettings = SubstituteSettings(),
                 direction_sign="paper"):
        self.pipeline = pipeline
        self.train = train
        self.attacker_points = np.atleast_2d(
            np.asarray(attacker_points, dtype=np.float64))
        self.seed = seed
        self.settings = settings
        self.direction_sign = direction_sign
        self._surrogates = {}
        self.query_counts = {}

    def surrogate_for(self, kind):
        if kind == "direct":
            return None
        if kind not in self._surrogates:
            if kind == "ksa":
                cfg = self.settings.config_for("kernel", self.seed)
                self._surrogates[kind] = train_surrogate("kernel", self.train, cfg)
            else:
                model_kind = _BB_KIND[kind]
                cfg = self.settings.config_for(model_kind, self.seed)
                rng = np.random.default_rng(self.seed)
                pool = self.attacker_points
                if len(pool) > self.settings.seed_pool:
                    pick = rng.choice(len(pool), self.settings.seed_pool,
                                      replace=False)
                    pool = pool[pick]
                model, queries = substitute_train_loop(
                    self.pipeline.victim_oracle(self.train), pool,
                    self.settings.rounds, self.settings.aug_step,
                    kind=model_kind, cfg=cfg)
                self._surrogates[kind] = model
                self.query_counts[kind] = queries
        return self._surrogates[kind]

    def spec(self, kind, r) -> AttackSpec:
        return AttackSpec(kind, r, self.surrogate_for(kind), self.seed,
                          self.direction_sign, "unlabeled")

    def craft(self, kind, r, target: Dataset):
        """Perturb the unlabeled rows of `target` with the given attack."""
        return run_attack(self.spec(kind, r), target, reference=self.train)
