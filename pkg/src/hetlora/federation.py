"""Round orchestration: broadcast, local training, uplink, aggregation, rank
assignment and the before/after-aggregation accuracy probes."""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, fields

import numpy as np

from . import aggregation as agg
from .datagen import ClientShard, PartitionSpec, SyntheticTask, generate_task, partition
from .lora import LoraAdapter, LoraConfig, init_adapter, param_count
from .model import (
    AdaptedModel,
    FrozenBackbone,
    evaluate,
    fresh_adam_states,
    init_adapters,
    local_train,
    pretrain_backbone,
    random_backbone,
)
from .numerics import AdamState, Rng, make_rng

log = logging.getLogger(__name__)

BYTES_PER_PARAM = 4

# stream ids for make_rng(seed, stream, ...)
_TASK, _PARTITION, _BACKBONE, _ADAPTER_INIT, _SELECTION, _CLIENT = range(6)


class RankPolicy(str, enum.Enum):
    ORACLE = "oracle"
    TOP_K_VALIDATION = "top_k_validation"
    ALL_LOW = "all_low"
    ALL_HIGH = "all_high"


LEDGER_PRESETS = {
    # (m, n, number of adapted matrices); None means "use the simulated model's layers"
    "model": None,
    "distilbert": (768, 768, 18),
}


@dataclass
class FederationConfig:
    seed: int = 0
    rounds: int = 30
    strategy: agg.AggregationStrategy = agg.AggregationStrategy.REPLICATION
    rank_policy: RankPolicy = RankPolicy.TOP_K_VALIDATION
    # clients
    scenario: str = "main"  # "main" or "lone_hq"
    num_clients: int = 100
    participation_fraction: float = 0.1
    hq_fraction: float = 0.1
    alpha_hq: float = 5.0
    alpha_lq: float = 1.0
    samples_per_client: int = 1000
    # ranks
    r_low: int = 5
    r_high: int = 20
    high_rank_fraction: float = 0.1
    # local training
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    local_epochs: int = 1
    # synthetic task / backbone
    num_classes: int = 4
    dim: int = 32
    hidden: int = 64
    separation: float = 2.5
    train_pool_factor: float = 1.5
    test_pool: int = 4000
    val_fraction: float = 0.1
    pretrain_samples: int = 400
    pretrain_steps: int = 10
    pretrain_lr: float = 1e-3
    # communication ledger
    ledger_preset: str = "model"

    def __post_init__(self):
        self.strategy = agg.AggregationStrategy(self.strategy)
        self.rank_policy = RankPolicy(self.rank_policy)
        self.validate()

    def validate(self) -> None:
        if not 0.0 < self.participation_fraction <= 1.0:
            raise ValueError(f"participation_fraction must lie in (0, 1], got {self.participation_fraction}")
        if self.participation_fraction * self.num_clients < 1:
            raise ValueError("participation_fraction * num_clients must be at least 1")
        if not 1 <= self.r_low <= self.r_high:
            raise ValueError(f"need 1 <= r_low <= r_high, got r_low={self.r_low}, r_high={self.r_high}")
        if self.rounds < 0:
            raise ValueError("rounds must be non-negative")
        if self.scenario not in ("main", "lone_hq"):
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.ledger_preset not in LEDGER_PRESETS:
            raise ValueError(f"unknown ledger preset {self.ledger_preset!r}")
        if not 0.0 <= self.high_rank_fraction <= 1.0:
            raise ValueError("high_rank_fraction must lie in [0, 1]")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        for name in ("num_clients", "samples_per_client", "batch_size", "local_epochs",
                     "num_classes", "dim", "hidden", "test_pool"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")

    @property
    def k_high(self) -> int:
        return int(round(self.high_rank_fraction * self.num_clients))

    def as_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.value if isinstance(v, enum.Enum) else v
        return out


@dataclass
class ClientState:
    client_id: int
    shard: ClientShard
    rank: int
    adapters: list[LoraAdapter]
    adam: list[tuple[AdamState, AdamState]]
    rng: Rng
    val_accuracy: float | None = None

    @property
    def high_quality(self) -> bool:
        return self.shard.high_quality


@dataclass
class ServerState:
    adapters: list[LoraAdapter]
    round_index: int = 0
    cumulative_bytes: int = 0

    @property
    def rank(self) -> int:
        return self.adapters[0].r


@dataclass
class ParticipantRecord:
    client_id: int
    rank: int
    acc_before: float
    acc_after: float
    high_quality: bool = False
    uplink_bytes: int = 0


@dataclass
class RoundRecord:
    round: int
    global_acc: float
    participants: list[ParticipantRecord] = field(default_factory=list)
    uplink_bytes: int = 0
    cumulative_bytes: int = 0
    global_rank: int = 0


@dataclass
class Environment:
    """Everything shared read-only by the clients of one experiment."""
    cfg: FederationConfig
    task: SyntheticTask
    backbone: FrozenBackbone
    shards: list[ClientShard]


def uplink_params(cfg: FederationConfig, backbone: FrozenBackbone, rank: int) -> int:
    preset = LEDGER_PRESETS[cfg.ledger_preset]
    if preset is None:
        return sum(param_count(LoraConfig(m, n, rank)) for m, n in backbone.layer_shapes())
    m, n, k = preset
    return param_count(LoraConfig(m, n, rank, k))


def build_environment(cfg: FederationConfig) -> Environment:
    budget = cfg.num_clients * cfg.samples_per_client
    n_train = max(int(np.ceil(budget * cfg.train_pool_factor)), cfg.num_classes)
    n_val = max(int(round(cfg.test_pool * cfg.val_fraction)), cfg.num_classes)
    n_test = max(cfg.test_pool - n_val, cfg.num_classes)
    task = generate_task(cfg.num_classes, cfg.dim, (n_train, n_val, n_test), make_rng(cfg.seed, _TASK),
                         separation=cfg.separation)
    lone = cfg.scenario == "lone_hq"
    spec = PartitionSpec(
        num_clients=cfg.num_clients,
        hq_fraction=cfg.hq_fraction,
        alpha_hq=cfg.alpha_hq,
        alpha_lq=cfg.alpha_lq,
        samples_per_client=cfg.samples_per_client,
        balanced_first=lone,
    )
    shards = partition(task, spec, make_rng(cfg.seed, _PARTITION))

    rng = make_rng(cfg.seed, _BACKBONE)
    backbone = random_backbone(cfg.dim, cfg.hidden, cfg.num_classes, rng)
    if cfg.pretrain_steps > 0 and cfg.pretrain_samples > 0:
        # held-out pool, disjoint from every split
        y = rng.integers(0, cfg.num_classes, cfg.pretrain_samples)
        x = task.means[y] + rng.standard_normal((cfg.pretrain_samples, cfg.dim))
        backbone = pretrain_backbone(backbone, x, y, cfg.pretrain_steps, cfg.pretrain_lr)
    return Environment(cfg, task, backbone, shards)


def select_clients(states: list[ClientState], fraction: float, rng: Rng, r_high: int | None = None) -> list[int]:
    """Stratified sample keeping the high/low-rank mix of the population.

    A non-empty high-rank tier always contributes at least one participant
    so the aggregate never loses its high-rank components.
    """
    n = len(states)
    n_sel = int(round(fraction * n))
    if n_sel < 1:
        raise ValueError(f"fraction {fraction} of {n} clients selects nobody")
    if r_high is None:
        r_high = max(s.rank for s in states)
    high = [s.client_id for s in states if s.rank == r_high]
    low = [s.client_id for s in states if s.rank != r_high]
    if not low or not high:
        chosen = rng.choice(np.array(high or low), size=n_sel, replace=False)
        return sorted(int(c) for c in chosen)
    n_high = int(round(n_sel * len(high) / n))
    n_high = min(max(n_high, 1), len(high), n_sel)
    n_low = min(n_sel - n_high, len(low))
    chosen = list(rng.choice(np.array(high), size=n_high, replace=False))
    if n_low:
        chosen += list(rng.choice(np.array(low), size=n_low, replace=False))
    return sorted(int(c) for c in chosen)


def assign_ranks(states: list[ClientState], policy: RankPolicy, k_high: int, r_low: int, r_high: int) -> list[ClientState]:
    policy = RankPolicy(policy)
    if k_high > len(states):
        raise ValueError(f"k_high={k_high} exceeds the {len(states)} clients")
    if policy is RankPolicy.ALL_LOW:
        promoted = set()
    elif policy is RankPolicy.ALL_HIGH:
        promoted = {s.client_id for s in states}
    elif policy is RankPolicy.ORACLE:
        promoted = {s.client_id for s in states if s.high_quality}
    else:
        scored = sorted(states, key=lambda s: (-(s.val_accuracy if s.val_accuracy is not None else -1.0), s.client_id))
        promoted = {s.client_id for s in scored[:k_high]}
    for s in states:
        new_rank = r_high if s.client_id in promoted else r_low
        if new_rank != s.rank:
            s.adapters = [_resize(a, new_rank) for a in s.adapters]
            s.adam = [(sb.resized((sb.m.shape[0], new_rank)), sa.resized((new_rank, sa.m.shape[1])))
                      for sb, sa in s.adam]
            s.rank = new_rank
    return states


def _resize(adapter: LoraAdapter, rank: int) -> LoraAdapter:
    if rank >= adapter.r:
        return agg.pad_zero(adapter, rank)
    return agg.truncate(adapter, rank)


def _extend_global(adapters: list[LoraAdapter], rank: int, rng: Rng) -> list[LoraAdapter]:
    """Raise the global rank: zero ``B`` columns keep the delta unchanged while
    fresh Gaussian ``A`` rows give the new components a gradient signal."""
    out = []
    for ad in adapters:
        if ad.r >= rank:
            out.append(ad)
            continue
        m, n = ad.shape
        fresh = init_adapter(LoraConfig(m, n, rank), rng)
        A = fresh.A.copy()
        A[:ad.r] = ad.A
        B = np.zeros((m, rank))
        B[:, :ad.r] = ad.B
        out.append(LoraAdapter(B, A))
    return out


class Federation:
    """A single experiment: environment, server state and per-client state."""

    def __init__(self, cfg: FederationConfig, env: Environment | None = None):
        self.cfg = cfg
        self.env = env or build_environment(cfg)
        self.backbone_hash = self.env.backbone.fingerprint()
        self.selection_rng = make_rng(cfg.seed, _SELECTION)
        self.init_rng = make_rng(cfg.seed, _ADAPTER_INIT)
        self.states = [
            ClientState(s.client_id, s, cfg.r_low, [], [], make_rng(cfg.seed, _CLIENT, s.client_id))
            for s in self.env.shards
        ]
        if cfg.rank_policy is not RankPolicy.TOP_K_VALIDATION:
            for s in self.states:
                s.rank = cfg.r_low
            assign_ranks(self.states, cfg.rank_policy, cfg.k_high, cfg.r_low, cfg.r_high)
        self.promoted = cfg.rank_policy is not RankPolicy.TOP_K_VALIDATION
        g_rank = max(s.rank for s in self.states)
        self.server = ServerState(init_adapters(self.env.backbone, g_rank, self.init_rng))
        for s in self.states:
            s.adapters = agg_downlink(self.server.adapters, s.rank)
            s.adam = fresh_adam_states(s.adapters, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        self.records: list[RoundRecord] = []

    def _model(self, adapters: list[LoraAdapter]) -> AdaptedModel:
        return AdaptedModel(self.env.backbone, adapters)

    def _test_acc(self, adapters: list[LoraAdapter]) -> float:
        return evaluate(self._model(adapters), self.env.task.x_test, self.env.task.y_test)

    def initial_record(self) -> RoundRecord:
        rec = RoundRecord(0, self._test_acc(self.server.adapters), global_rank=self.server.rank)
        self.records.append(rec)
        return rec

    def run_round(self) -> RoundRecord:
        cfg, env, server = self.cfg, self.env, self.server
        server.round_index += 1
        t = server.round_index
        ids = select_clients(self.states, cfg.participation_fraction, self.selection_rng, cfg.r_high)

        uploads: list[tuple[int, list[LoraAdapter], float]] = []
        before: dict[int, float] = {}
        sent: dict[int, int] = {}
        for cid in ids:
            st = self.states[cid]
            st.adapters = agg_downlink(server.adapters, st.rank)
            x, y = env.task.x_train[st.shard.indices], env.task.y_train[st.shard.indices]
            st.adapters = local_train(self._model(st.adapters), x, y, cfg.local_epochs, st.adam, st.rng,
                                      cfg.batch_size)
            before[cid] = self._test_acc(st.adapters)
            sent[cid] = BYTES_PER_PARAM * uplink_params(cfg, env.backbone, st.rank)
            uploads.append((cid, st.adapters, float(st.shard.size)))

        server.adapters = self._aggregate(uploads)

        if not self.promoted:
            for cid in ids:
                st = self.states[cid]
                st.val_accuracy = evaluate(self._model(st.adapters), env.task.x_val, env.task.y_val)
            assign_ranks(self.states, RankPolicy.TOP_K_VALIDATION, cfg.k_high, cfg.r_low, cfg.r_high)
            self.promoted = True
            g_rank = max(s.rank for s in self.states)
            if g_rank > server.rank:
                log.info("round %d: promoting global adapters to rank %d", t, g_rank)
                server.adapters = _extend_global(server.adapters, g_rank, self.init_rng)

        participants = []
        for cid in ids:
            st = self.states[cid]
            after = self._test_acc(agg_downlink(server.adapters, st.rank))
            participants.append(ParticipantRecord(cid, st.rank, before[cid], after, st.high_quality, sent[cid]))
        uplink = sum(sent.values())
        server.cumulative_bytes += uplink
        rec = RoundRecord(t, self._test_acc(server.adapters), participants, uplink, server.cumulative_bytes,
                          server.rank)
        self.records.append(rec)
        return rec

    def _aggregate(self, uploads: list[tuple[int, list[LoraAdapter], float]]) -> list[LoraAdapter]:
        r_target = max(ads[0].r for _, ads, _ in uploads)
        new = []
        for slot in range(len(self.server.adapters)):
            layer_ups = [agg.ClientUpdate(cid, ads[slot], w, ads[slot].r == r_target) for cid, ads, w in uploads]
            merged = agg.aggregate(self.cfg.strategy, layer_ups, r_target)
            old = self.server.adapters[slot]
            if merged.r < old.r:
                # no participant held the global rank: keep the stale trailing components
                merged = agg.pad_replicate(merged, old)
            new.append(merged)
        return new


def agg_downlink(adapters: list[LoraAdapter], rank: int) -> list[LoraAdapter]:
    return [agg.downlink(a, rank) for a in adapters]


def run_experiment(cfg: FederationConfig, env: Environment | None = None) -> list[RoundRecord]:
    fed = Federation(cfg, env)
    fed.initial_record()
    for _ in range(cfg.rounds):
        fed.run_round()
        if fed.env.backbone.fingerprint() != fed.backbone_hash:
            raise RuntimeError("frozen backbone was modified during training")
    return fed.records
