"""Joint objective, optimizer and the training loop with early stopping.

The minimized loss for one step is::

    lambda_r * mean CE(p_r, y_r) over a T_r batch
  + lambda_e * mean CE(p_e, y_e) over a T_e batch
  + lambda_c * mean over a batch of T = T_r + T_e + T_u of sum_j w_j * phi_j(p_r, p_e)

with ``phi_j = -log(max(poly_j, eps))``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from . import graph as G
from . import net
from .folc import DEFAULT_CLAMP_EPSILON, CompiledConstraint, compile_rules, default_ruleset, reweight
from .labels import EMOTION, REACTION
from .metrics import MetricsReport, task_metrics
from .textprep import Corpus, Example, artificial_augment

log = logging.getLogger(__name__)

VARIANTS = ("plain", "constr", "artificial")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "constr"
    lr: float = 1e-3
    batch_r: int = 32
    batch_e: int = 32
    batch_all: int = 64
    lambda_r: float = 1.0
    lambda_e: float = 1.0
    lambda_c: float = 1.0
    w_strong: float = 1.0
    w_weak: float = 0.2
    rule_weights: tuple[float, ...] | None = None
    max_epochs: int = 100
    patience: int = 20
    steps_per_epoch: int | None = None
    clip_norm: float = 5.0
    clamp_epsilon: float = DEFAULT_CLAMP_EPSILON
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        scales = (self.lambda_r, self.lambda_e, self.lambda_c, self.w_strong, self.w_weak, *(self.rule_weights or ()))
        if any(s < 0 for s in scales):
            raise ValueError("scales and rule weights must be nonnegative")
        if self.lr <= 0 or self.max_epochs < 0:
            raise ValueError("lr must be positive and max_epochs nonnegative")
        if self.rule_weights is not None:
            object.__setattr__(self, "rule_weights", tuple(float(w) for w in self.rule_weights))

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.rule_weights is not None:
            d["rule_weights"] = list(self.rule_weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def variant_constraints(cfg: TrainConfig, rules=None) -> list[CompiledConstraint]:
    """Compiled rules carrying the weights the variant trains with (all 0 unless constr)."""
    rules = list(rules) if rules is not None else default_ruleset(cfg.w_strong, cfg.w_weak)
    if cfg.rule_weights is not None:
        rules = reweight(rules, cfg.rule_weights)
    if cfg.variant != "constr":
        rules = [r.with_weight(0.0) for r in rules]
    return compile_rules(rules, cfg.clamp_epsilon)


# ---------------------------------------------------------------------------
# Loss terms


def cross_entropy(p, y, eps: float = DEFAULT_CLAMP_EPSILON):
    """``-log p[class(y)]`` for a single probability vector and one-hot ``y``."""
    y = np.asarray(y)
    if G.value_of(p).shape != y.shape:
        raise ValueError(f"dimension mismatch: p {G.value_of(p).shape} vs y {y.shape}")
    k = int(np.argmax(y))
    return -G.log(G.maximum(p[k], eps))


def batch_cross_entropy(p, labels: Sequence[int], eps: float = DEFAULT_CLAMP_EPSILON):
    """Mean CE of the rows of ``p`` (N, C) against integer labels."""
    rows = np.arange(len(labels))
    picked = p[rows, np.asarray(labels, dtype=np.intp)]
    return (-G.log(G.maximum(picked, eps))).mean()


def rule_penalties(p_r, p_e, constraints: Sequence[CompiledConstraint]):
    """Per-row weighted penalty sum ``sum_j w_j phi_j``; None when every weight is 0."""
    total = None
    for c in constraints:
        if c.weight == 0:
            continue

        def lookup(pred, p_r=p_r, p_e=p_e):
            probs = p_r if pred.task == REACTION else p_e
            return probs[..., pred.class_index]

        poly = c.poly.evaluate(lookup)
        phi = -G.log(G.maximum(poly, c.clamp_epsilon))
        term = phi * c.weight
        total = term if total is None else total + term
    return total


def constraint_term(p_r, p_e, constraints: Sequence[CompiledConstraint]):
    """Mean over rows of the weighted penalty sum (0 when no rule is active)."""
    per_row = rule_penalties(p_r, p_e, constraints)
    if per_row is None:
        return 0.0
    return per_row.mean()


@dataclass
class BatchLoss:
    tape: G.Tape
    loss: G.Node
    terms: dict[str, float]


def batch_loss(batch_r: Sequence[Example], batch_e: Sequence[Example], batch_all: Sequence[Example],
               params: net.ModelParams, constraints: Sequence[CompiledConstraint], cfg: TrainConfig,
               training: bool = False, rng: np.random.Generator | None = None) -> BatchLoss:
    if not (batch_r or batch_e or batch_all):
        raise ValueError("all three batches are empty")
    active = [c for c in constraints if c.weight != 0]
    use_all = bool(batch_all) and bool(active) and cfg.lambda_c != 0
    seqs = [x.ids for x in batch_r] + [x.ids for x in batch_e] + ([x.ids for x in batch_all] if use_all else [])
    tape = G.Tape()
    terms = {"ce_r": 0.0, "ce_e": 0.0, "constraint": 0.0}
    total = tape.const(0.0)
    if seqs:
        p_r, p_e = net.forward_batch(seqs, params, tape, training=training, rng=rng)
        nr, ne = len(batch_r), len(batch_e)
        eps = cfg.clamp_epsilon
        if nr:
            ce_r = batch_cross_entropy(p_r[:nr], [x.label for x in batch_r], eps)
            terms["ce_r"] = ce_r.item()
            total = total + cfg.lambda_r * ce_r
        if ne:
            ce_e = batch_cross_entropy(p_e[nr:nr + ne], [x.label for x in batch_e], eps)
            terms["ce_e"] = ce_e.item()
            total = total + cfg.lambda_e * ce_e
        if use_all:
            con = constraint_term(p_r[nr + ne:], p_e[nr + ne:], active)
            terms["constraint"] = con.item()
            total = total + cfg.lambda_c * con
    terms["total"] = total.item()
    return BatchLoss(tape, total, terms)


def parameter_gradients(bl: BatchLoss, params: net.ModelParams) -> dict[str, np.ndarray]:
    """Gradient of the batch loss for every parameter; zeros where the loss does not reach."""
    grads = {name: np.zeros_like(arr) for name, arr in params.arrays.items()}
    if bl.tape.parameters:
        bl.tape.backward(bl.loss)
        grads.update(bl.tape.gradients())
    return grads


# ---------------------------------------------------------------------------
# Optimizer


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 clip_norm: float | None = 5.0):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.clip_norm = clip_norm
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: net.ModelParams, grads: dict[str, np.ndarray]) -> float:
        """Apply one update in place; returns the gradient norm before clipping."""
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        scale = 1.0
        if self.clip_norm is not None and norm > self.clip_norm:
            scale = self.clip_norm / norm
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            g = g * scale
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            params.arrays[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return norm


# ---------------------------------------------------------------------------
# Evaluation helpers


def evaluate(params: net.ModelParams, corpus: Corpus) -> MetricsReport:
    report = MetricsReport()
    if corpus.T_r:
        p_r, _ = net.predict_proba([x.ids for x in corpus.T_r], params)
        report.tasks[REACTION] = task_metrics(np.argmax(p_r, 1), [x.label for x in corpus.T_r], REACTION)
    if corpus.T_e:
        _, p_e = net.predict_proba([x.ids for x in corpus.T_e], params)
        report.tasks[EMOTION] = task_metrics(np.argmax(p_e, 1), [x.label for x in corpus.T_e], EMOTION)
    return report


def validation_scores(params: net.ModelParams, corpus: Corpus) -> tuple[float | None, float | None]:
    report = evaluate(params, corpus)
    f1_r = report.tasks[REACTION].macro_f1 if REACTION in report.tasks else None
    f1_e = report.tasks[EMOTION].macro_f1 if EMOTION in report.tasks else None
    return f1_r, f1_e


def average_f1(scores) -> float:
    if isinstance(scores, (int, float)):
        return float(scores)
    present = [s for s in scores if s is not None]
    if not present:
        raise ValueError("no validation score available")
    return float(np.mean(present))


# ---------------------------------------------------------------------------
# Training loop


@dataclass
class TrainState:
    epoch: int = 0
    best_score: float = -math.inf
    best_epoch: int = 0
    since_improvement: int = 0
    best_params: net.ModelParams | None = None

    def update(self, epoch: int, score: float, params: net.ModelParams) -> bool:
        """Record an epoch's score; True on strict improvement."""
        self.epoch = epoch
        if score > self.best_score:
            self.best_score = score
            self.best_epoch = epoch
            self.since_improvement = 0
            self.best_params = params.copy()
            return True
        self.since_improvement += 1
        return False


class _Cycler:
    """Endless reshuffled pass over a list, drawing fixed-size batches."""

    def __init__(self, items: Sequence, rng: np.random.Generator):
        self.items = list(items)
        self.rng = rng
        self.order: list[int] = []

    def take(self, n: int) -> list:
        if not self.items or n <= 0:
            return []
        out = []
        while len(out) < n:
            if not self.order:
                self.order = list(self.rng.permutation(len(self.items)))
            out.append(self.items[self.order.pop()])
        return out


def steps_per_epoch(corpus: Corpus, cfg: TrainConfig) -> int:
    if cfg.steps_per_epoch is not None:
        return cfg.steps_per_epoch
    steps = [math.ceil(len(s) / b) for s, b in ((corpus.T_r, cfg.batch_r), (corpus.T_e, cfg.batch_e)) if s and b]
    if not steps:
        steps = [math.ceil(len(corpus.all()) / max(cfg.batch_all, 1))]
    return max(1, max(steps))


Validator = Callable[[net.ModelParams, int], object]


def train(train_corpus: Corpus, val_corpus: Corpus | None, params: net.ModelParams, cfg: TrainConfig,
          constraints: Sequence[CompiledConstraint] | None = None, validate: Validator | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> tuple[net.ModelParams, list[dict]]:
    """Minimize the joint objective with early stopping on the average validation F1.

    ``validate(params, epoch)`` may replace the default validation; it returns
    either a float or a ``(f1_reaction, f1_emotion)`` pair.  The returned
    parameters are those of the best epoch (the initial ones when
    ``max_epochs`` is 0).
    """
    if not train_corpus.all():
        raise ValueError("empty training corpus")
    if validate is None:
        if val_corpus is None or not (val_corpus.T_r or val_corpus.T_e):
            raise ValueError("empty validation corpus")
        validate = lambda p, epoch: validation_scores(p, val_corpus)
    if constraints is None:
        constraints = variant_constraints(cfg)
    params = params.copy()
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(cfg.lr, cfg.beta1, cfg.beta2, clip_norm=cfg.clip_norm)
    pools = [_Cycler(train_corpus.T_r, rng), _Cycler(train_corpus.T_e, rng), _Cycler(train_corpus.all(), rng)]
    n_steps = steps_per_epoch(train_corpus, cfg)
    state = TrainState(best_params=params.copy())
    history: list[dict] = []

    for epoch in range(1, cfg.max_epochs + 1):
        sums = {"ce_r": 0.0, "ce_e": 0.0, "constraint": 0.0, "total": 0.0}
        for _ in range(n_steps):
            br = pools[0].take(cfg.batch_r)
            be = pools[1].take(cfg.batch_e)
            ba = pools[2].take(cfg.batch_all)
            bl = batch_loss(br, be, ba, params, constraints, cfg, training=True, rng=rng)
            if not math.isfinite(bl.terms["total"]):
                raise TrainingDiverged(f"loss became {bl.terms['total']} at epoch {epoch}: terms {bl.terms}")
            opt.step(params, parameter_gradients(bl, params))
            for k in sums:
                sums[k] += bl.terms[k]
        if not params.all_finite():
            raise TrainingDiverged(f"parameters became non-finite at epoch {epoch}")
        scores = validate(params, epoch)
        avg = average_f1(scores)
        improved = state.update(epoch, avg, params)
        entry = {"epoch": epoch, **{f"train_{k}": v / n_steps for k, v in sums.items()}}
        if isinstance(scores, tuple):
            entry["val_f1_reaction"], entry["val_f1_emotion"] = scores
        entry.update({"val_avg_f1": avg, "lr": cfg.lr, "improved": improved})
        history.append(entry)
        log.info("epoch %d %s", epoch, json.dumps(entry))
        if on_epoch:
            on_epoch(entry)
        if state.since_improvement >= cfg.patience:
            break
    return state.best_params, history


def run_variant(train_corpus: Corpus, val_corpus: Corpus, test_corpus: Corpus, model_cfg: net.ModelConfig,
                cfg: TrainConfig, rules=None, init_seed: int | None = None):
    """Train one of plain / constr / artificial and score it on the test corpus.

    Returns ``(test report, best params, training log)``.
    """
    constraints = variant_constraints(cfg, rules)
    if cfg.variant == "artificial":
        train_corpus = artificial_augment(train_corpus)
    params = net.init_params(model_cfg, cfg.seed if init_seed is None else init_seed)
    best, history = train(train_corpus, val_corpus, params, cfg, constraints)
    return evaluate(best, test_corpus), best, history
