"""Run configuration shared by every CLI command.

Files are YAML or JSON. Paths prefixed with ``pkg:`` resolve into the
bundled data directory. Relative input paths resolve against the config
file's directory; output paths (``out``, ``log_dir``, ``sink``) resolve
against the working directory. ``GAAS_LISTEN`` and ``GAAS_LOG_DIR`` override the listen
address and log directory.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import yaml

from govgate.enforcement import EnforcementConfig
from govgate.policy import CompiledRuleSet, compile_rule_set, load_rule_set
from govgate.sim.agents import AgentSpec, ConfigError
from govgate.sim.harness import Regime, SimConfig, SimRegime
from govgate.sim.market import generate_market, write_market
from govgate.trust import Formulation, TrustConfig, TrustWeights

PKG_PREFIX = "pkg:"
DOMAINS = ("trading", "essay")


def data_root() -> Path:
    return Path(str(resources.files("govgate.data")))


def resolve_path(value: str | None, base: Path) -> str | None:
    if value is None:
        return None
    if value.startswith(PKG_PREFIX):
        return str(data_root() / value[len(PKG_PREFIX) :])
    p = Path(value).expanduser()
    return str(p if p.is_absolute() else base / p)


def default_trust(domain: str) -> TrustConfig:
    # Essay weights sum above one and are reported on the unnormalized scale.
    if domain == "essay":
        return TrustConfig(TrustWeights.essay(), formulation=Formulation.MAIN_TEXT)
    return TrustConfig(TrustWeights.trading(), formulation=Formulation.NORMALIZED)


@dataclass(frozen=True)
class RunConfig:
    domain: str = "trading"
    policy: str | None = None
    trust: TrustConfig = field(default_factory=TrustConfig)
    enforcement: EnforcementConfig = field(default_factory=EnforcementConfig)
    regime: Regime = Regime.SIM2_GOVERNED
    seed: int = 0
    days: int | None = None
    agents: tuple[AgentSpec, ...] = ()
    market: str | None = None
    corpus: str | None = None
    catalog: str | None = None
    initial_cash: float = 10_000.0
    faults_per_day: float = 1.0
    out: str = "runs/latest"
    listen: str = "127.0.0.1:8080"
    log_dir: str | None = None
    sink: str | None = None

    def rules(self) -> CompiledRuleSet:
        """Load and compile the configured pack; raises PolicyError subclasses."""
        return compile_rule_set(load_rule_set(self.policy, domain=self.domain))

    def sim_regime(self) -> SimRegime:
        return SimRegime(self.regime, self.seed, self.days, self.agents)

    def sim_config(self) -> SimConfig:
        return SimConfig(
            trust=self.trust,
            enforcement=self.enforcement,
            market_path=self.market,
            initial_cash=self.initial_cash,
            faults_per_day=self.faults_per_day,
            corpus_path=self.corpus,
            catalog_path=self.catalog,
        )

    def with_overrides(self, **changes: Any) -> "RunConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        if "regime" in changes:
            changes["regime"] = Regime(changes["regime"])
        return replace(self, **changes)


def _trust(doc: Mapping[str, Any] | None, domain: str) -> TrustConfig:
    base = default_trust(domain)
    if not doc:
        return base
    doc = dict(doc)
    w = base.weights
    weights = TrustWeights(
        float(doc.pop("alpha", w.alpha)),
        float(doc.pop("beta", w.beta)),
        float(doc.pop("gamma", w.gamma)),
        float(doc.pop("delta", w.delta)),
    )
    lam = float(doc.pop("lambda", doc.pop("lam", base.lam)))
    cfg = TrustConfig(
        weights,
        lam=lam,
        epsilon=float(doc.pop("epsilon", base.epsilon)),
        formulation=doc.pop("formulation", base.formulation),
    )
    if doc:
        raise ConfigError(f"unknown trust keys: {sorted(doc)}")
    return cfg


def _enforcement(doc: Mapping[str, Any] | None) -> EnforcementConfig:
    try:
        return EnforcementConfig(**dict(doc or {}))
    except TypeError as exc:
        raise ConfigError(f"bad enforcement section: {exc}") from None


def _agents(items, base: Path) -> tuple[AgentSpec, ...]:
    out = []
    for item in items or ():
        if isinstance(item, str):
            item = {"id": item, "script": item}
        params = dict(item.get("params") or {})
        if "fixture" in params:
            params["fixture"] = resolve_path(str(params["fixture"]), base)
            if not Path(params["fixture"]).exists():
                raise ConfigError(f"fixture not found: {params['fixture']}")
        out.append(
            AgentSpec(
                id=str(item["id"]),
                script=str(item.get("script", item["id"])),
                cash=item.get("cash"),
                holdings=dict(item.get("holdings") or {}),
                params=params,
            )
        )
    return tuple(out)


def _market(value: Any, base: Path, cache_dir: Path) -> str | None:
    """A directory of CSVs, or ``{generate: {seed, days}}`` for synthetic data."""
    if value is None:
        return None
    if isinstance(value, Mapping) and "generate" in value:
        g = value["generate"]
        seed, days = int(g.get("seed", 0)), int(g.get("days", 60))
        target = cache_dir / f"market-{seed}-{days}"
        if not target.exists():
            write_market(generate_market(seed, days), target)
        return str(target)
    return resolve_path(str(value), base)


def parse_config(doc: Mapping[str, Any], base: Path | None = None, env: Mapping[str, str] | None = None) -> RunConfig:
    base = base or Path.cwd()
    env = os.environ if env is None else env
    doc = dict(doc or {})
    domain = doc.get("domain", "trading")
    if domain not in DOMAINS:
        raise ConfigError(f"unknown domain {domain!r}")
    policy = resolve_path(doc.get("policy") or f"pkg:packs/{domain}.json", base)
    # Output locations are relative to the working directory so packaged configs never write into the install.
    out = resolve_path(doc.get("out") or "runs/latest", Path.cwd())
    cfg = RunConfig(
        domain=domain,
        policy=policy,
        trust=_trust(doc.get("trust"), domain),
        enforcement=_enforcement(doc.get("enforcement")),
        regime=Regime(doc.get("regime", Regime.SIM2_GOVERNED.value)),
        seed=int(doc.get("seed", 0)),
        days=None if doc.get("days") is None else int(doc["days"]),
        agents=_agents(doc.get("agents"), base),
        market=_market(doc.get("market"), base, Path(out).parent / ".cache"),
        corpus=resolve_path(doc.get("corpus"), base),
        catalog=resolve_path(doc.get("catalog"), base),
        initial_cash=float(doc.get("initial_cash", 10_000.0)),
        faults_per_day=float(doc.get("faults_per_day", 1.0)),
        out=out,
        listen=env.get("GAAS_LISTEN") or doc.get("listen", "127.0.0.1:8080"),
        log_dir=resolve_path(env.get("GAAS_LOG_DIR") or doc.get("log_dir"), Path.cwd()),
        sink=resolve_path(doc.get("sink"), Path.cwd()),
    )
    for name in ("policy", "market", "corpus", "catalog"):
        path = getattr(cfg, name)
        if path is not None and not Path(path).exists():
            raise ConfigError(f"{name} path does not exist: {path}")
    return cfg


def load_config(path: str | Path, env: Mapping[str, str] | None = None) -> RunConfig:
    """Read a run configuration file; raises OSError or ConfigError."""
    if str(path).startswith(PKG_PREFIX):
        path = resolve_path(str(path), Path.cwd())
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if doc is not None and not isinstance(doc, Mapping):
        raise ConfigError(f"{path}: top level must be a mapping")
    return parse_config(doc or {}, path.parent, env)
