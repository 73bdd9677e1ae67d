"""Input-neuron evolution and the end-to-end feature selection loop."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Callable, NamedTuple

import numpy as np

from . import dst
from .data import Dataset
from .network import NetConfig, train_epoch
from .sparse import SparseLayer, Topology, bottom_k, er_init, top_k

log = logging.getLogger(__name__)

MODES = ("neurofs", "neurofs_random_growth", "rigl_fs")


def _exact(x) -> Fraction:
    # decimal reading of the value, so ceil((1 - 0.2) * 100 - 10) is exactly 70
    return Fraction(str(x))


def _ceil(q: Fraction) -> int:
    return -((-q.numerator) // q.denominator)


@dataclass
class EvolutionConfig:
    K: int = 50
    epsilon: float = 30
    zeta_in: float = 0.2
    zeta_h: float = 0.3
    alpha: float = 0.65
    t_max: int = 100
    mode: str = "neurofs"
    seed: int = 0
    log_interval: int = 0
    net: NetConfig = field(default_factory=NetConfig)

    def __post_init__(self):
        if isinstance(self.net, dict):
            self.net = NetConfig(**self.net)
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        for name in ("zeta_in", "zeta_h", "alpha"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must be in (0, 1), got {v}")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if self.log_interval < 0:
            raise ValueError("log_interval must be >= 0")

    @property
    def t_removal(self) -> int:
        return _ceil(_exact(self.alpha) * self.t_max)

    def total_removals(self, d: int) -> int:
        """R = ceil((1 - zeta_in) * d - K), floored at 0 for degenerate configs."""
        return max(0, _ceil((1 - _exact(self.zeta_in)) * d - self.K))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["net"]["hidden"] = list(self.net.hidden)
        return out


@dataclass
class EvolutionState:
    d: int
    t_removal: int
    R: int
    R_cum: int
    active: np.ndarray  # boolean, length d
    t: int = 0

    @classmethod
    def initial(cls, input_layer: SparseLayer, cfg: EvolutionConfig) -> "EvolutionState":
        active = input_layer.row_nnz() > 0
        d = input_layer.n_in
        return cls(d, cfg.t_removal, cfg.total_removals(d), int(d - active.sum()), active)

    @property
    def n_active(self) -> int:
        return int(self.active.sum())

    def recount(self, input_layer: SparseLayer) -> None:
        self.active = input_layer.row_nnz() > 0
        self.R_cum = int(self.d - self.active.sum())


class ScheduleStep(NamedTuple):
    prune: int
    grow: int
    remove: int


def schedule(t: int, state: EvolutionState, cfg: EvolutionConfig) -> ScheduleStep:
    """Neuron prune/grow counts for epoch ``t`` (1-based).

    grow   = ceil(zeta_in * (1 - t / t_max) * R_cum), at most the inactive pool
    remove = ceil((R - R_cum) / (t_removal - t)) before t_removal,
             the whole remainder R - R_cum at t_removal, 0 afterwards
    prune  = remove + grow

    ``prune`` is clamped so that at least K neurons stay active.
    """
    if not 1 <= t <= cfg.t_max:
        raise ValueError(f"epoch {t} outside 1..{cfg.t_max}")
    R, R_cum = state.R, state.R_cum
    if R_cum > R:
        raise ValueError(f"inconsistent state: R_cum={R_cum} exceeds R={R}")
    grow = _ceil(_exact(cfg.zeta_in) * (cfg.t_max - t) * R_cum / cfg.t_max)
    grow = min(grow, R_cum)
    if t < state.t_removal:
        remove = _ceil(Fraction(R - R_cum, state.t_removal - t))
    elif t == state.t_removal:
        remove = R - R_cum
    else:
        remove = 0
    room = max(0, (state.d - R_cum) - cfg.K)
    remove = min(remove, room)
    prune = min(remove + grow, room)
    return ScheduleStep(prune, prune - remove, remove)


def neuron_strength(layer: SparseLayer) -> np.ndarray:
    """L1 norm of each input neuron's outgoing weights (0 when inactive)."""
    return np.bincount(layer.rows, weights=np.abs(layer.weights), minlength=layer.n_in)


def prune_neurons(layer: SparseLayer, c_prune: int, strengths: np.ndarray) -> int:
    """Disconnect the ``c_prune`` weakest active neurons; returns connections removed."""
    if c_prune <= 0:
        return 0
    active = layer.active_rows()
    victims = active[bottom_k(strengths[active], c_prune)]
    return layer.remove(np.flatnonzero(np.isin(layer.rows, victims)))


def prune_input_weights(layer: SparseLayer, zeta_in: float) -> int:
    """Drop floor(zeta_in * nnz) lowest-magnitude input connections."""
    return dst.prune_hidden(layer, zeta_in)


def regrow_neurons(layer, dense_grad, c_grow, exclude=None, growth="gradient", rng=None) -> np.ndarray:
    """Activate ``c_grow`` inactive neurons, each with one zero-weight seed connection.

    Gradient policy: neurons are ranked by their largest |gradient|, and the
    seed goes to that argmax column. ``exclude`` removes neurons from the
    candidate pool. Returns the activated indices in ascending order.
    """
    if c_grow <= 0:
        return np.empty(0, dtype=np.int64)
    pool = np.flatnonzero(layer.row_nnz() == 0)
    if exclude is not None and len(exclude):
        pool = np.setdiff1d(pool, exclude)
    c_grow = min(int(c_grow), len(pool))
    if growth == "gradient":
        g = np.abs(dense_grad[pool])
        chosen = top_k(g.max(axis=1), c_grow)
        rows = pool[chosen]
        cols = g[chosen].argmax(axis=1)
    else:
        rows = np.sort(rng.choice(pool, size=c_grow, replace=False))
        cols = rng.integers(0, layer.n_out, size=c_grow)
    layer.add(rows, cols)
    return rows


def regrow_input_weights(layer, dense_grad, budget, growth="gradient", rng=None) -> int:
    """Add ``budget`` connections to active neurons; returns the number added."""
    if budget <= 0:
        return 0
    return dst.grow_connections(layer, dense_grad, budget, growth, rng, allowed_rows=layer.active_rows())


def select_features(layer: SparseLayer, K: int) -> np.ndarray:
    """Top-K active neurons by strength, lower index first on ties, sorted."""
    active = layer.active_rows()
    if len(active) < K:
        raise ValueError(f"only {len(active)} active neurons, cannot select K={K}")
    return active[top_k(neuron_strength(layer)[active], K)]


def update_input_layer(layer, dense_grad, state, cfg, t, rng=None) -> dict:
    """One epoch of input-neuron evolution. Returns per-step counts."""
    growth = "random" if cfg.mode == "neurofs_random_growth" else "gradient"
    step = schedule(t, state, cfg)

    before = layer.row_nnz() > 0
    removed = prune_neurons(layer, step.prune, neuron_strength(layer))
    dropped = np.flatnonzero(before & (layer.row_nnz() == 0))
    removed += prune_input_weights(layer, cfg.zeta_in)

    # Activate enough neurons that exactly step.remove net removals happen.
    # Rows emptied by weight pruning are candidates again; the neurons just
    # dropped for low strength are not.
    inactive = int((layer.row_nnz() == 0).sum())
    n_activate = max(0, inactive - (state.R_cum + step.remove))
    activated = regrow_neurons(layer, dense_grad, n_activate, dropped, growth, rng)

    budget = removed - len(activated)
    grown = regrow_input_weights(layer, dense_grad, budget, growth, rng)
    return {
        "c_prune": step.prune, "c_grow": step.grow, "c_remove": step.remove,
        "activated": len(activated), "removed": removed, "budget": budget, "grown": grown,
    }


@dataclass
class SelectionResult:
    selected: list
    strength_history: dict = field(default_factory=dict)  # epoch -> length-d strengths
    active_history: list = field(default_factory=list)  # index = epoch, 0 is initialisation
    loss_history: list = field(default_factory=list)
    final_loss: float = float("nan")
    diagnostics: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    topology: Topology | None = field(default=None, repr=False)

    def to_json(self) -> str:
        doc = {
            "selected": [int(i) for i in self.selected],
            "K": len(self.selected),
            "final_loss": self.final_loss,
            "active_history": [int(a) for a in self.active_history],
            "loss_history": self.loss_history,
            "diagnostics": self.diagnostics,
            "config": self.config,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def run(train: Dataset, cfg: EvolutionConfig, on_epoch: Callable | None = None) -> SelectionResult:
    """Train a sparse MLP with input-neuron evolution and select K features.

    ``on_epoch(t, topology, state, info)`` is called after each epoch's
    topology update; ``info`` carries per-layer nnz before and after the
    update plus the input-layer step counts.
    """
    d = train.d
    if cfg.K > d:
        raise ValueError(f"K={cfg.K} exceeds the number of features d={d}")
    dims = cfg.net.dims(d, train.n_classes)
    topo: Topology = er_init(dims, cfg.epsilon, cfg.seed)
    rng = np.random.default_rng([cfg.seed, 1])
    state = EvolutionState.initial(topo.layers[0], cfg)
    evolve_inputs = cfg.mode != "rigl_fs"
    if evolve_inputs and state.R_cum > state.R:
        raise ValueError(
            f"{state.R_cum} input neurons have no connections at initialisation, "
            f"more than the {state.R} planned removals; increase epsilon"
        )
    policy = dst.HiddenUpdatePolicy(cfg.zeta_h, "random" if cfg.mode == "neurofs_random_growth" else "gradient")

    result = SelectionResult(selected=[], config=cfg.to_dict())
    result.active_history.append(state.n_active)
    if cfg.log_interval:
        result.strength_history[0] = neuron_strength(topo.layers[0])

    for t in range(1, cfg.t_max + 1):
        state.t = t
        epoch_loss, snapshot = train_epoch(topo, train, cfg.net, rng)
        info = {"nnz_before": topo.nnz()}
        first_hidden = 1
        if evolve_inputs:
            info.update(update_input_layer(topo.layers[0], snapshot[0], state, cfg, t, rng))
            if info["grown"] < info["budget"]:
                msg = f"epoch {t}: input regrowth clamped to {info['grown']} of {info['budget']}"
                log.warning(msg)
                result.diagnostics.append(msg)
        else:
            first_hidden = 0
        for l in range(first_hidden, len(topo.layers)):
            removed, grown = dst.update_layer(topo.layers[l], snapshot[l], policy, rng)
            if grown < removed:
                msg = f"epoch {t}: layer {l} regrowth clamped to {grown} of {removed}"
                log.warning(msg)
                result.diagnostics.append(msg)
        info["nnz_after"] = topo.nnz()
        state.recount(topo.layers[0])

        result.active_history.append(state.n_active)
        result.loss_history.append(epoch_loss)
        if cfg.log_interval and (t % cfg.log_interval == 0 or t == cfg.t_max):
            result.strength_history[t] = neuron_strength(topo.layers[0])
        log.debug("epoch %d loss %.5f active %d", t, epoch_loss, state.n_active)
        if on_epoch is not None:
            on_epoch(t, topo, state, info)

    result.selected = [int(i) for i in select_features(topo.layers[0], cfg.K)]
    result.final_loss = result.loss_history[-1]
    result.topology = topo
    return result
