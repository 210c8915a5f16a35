"""Run configuration: a flat ``key = value`` text file plus named presets."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path


@dataclass
class Config:
    seed: int = 0
    steps: int = 3000
    batch_size: int = 128
    lr: float = 1e-5
    weight_decay: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    theta0: float = 1.0
    alpha_d: float = 0.9999
    lambda_spa: float = 0.001
    lambda_smt: float = 0.001
    lambda_aplus: float | None = None  # None: reuse lambda_N as printed
    T: int = 30
    gnn_dim: int = 8
    ffn_dim: int = 128
    heads: int = 8
    dropout: float = 0.0
    positional: bool = True
    use_loss_n: bool = True
    use_loss_aplus: bool = True
    use_loss_aminus: bool = True
    use_loss_spa: bool = True
    use_loss_smt: bool = True
    min_normal_fraction: float = 0.25
    # knowledge graphs
    n_concepts: int = 20
    d_sub: int = 1
    max_parents: int = 5
    max_repair_attempts: int = 3
    edges_require_conceptnet: bool = False
    llm_backend: str = "synthetic"  # synthetic | http
    conceptnet_backend: str = "file"  # file | http
    conceptnet_file: str = ""
    # embeddings
    embedding_backend: str = "synthetic"  # synthetic | cache:<path> | http:<url>
    d_emb: int = 1024
    signal_beta: float = 1.5
    # evaluation / logging
    var_score: str = "prob"  # prob | conditional
    eval_every: int = 0
    checkpoint_every: int = 0

    def replace(self, **kw) -> "Config":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {'' if v is None else v}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(field: dataclasses.Field, raw: str):
    raw = raw.strip()
    typ = field.type if isinstance(field.type, str) else field.type.__name__
    if "None" in typ and raw in ("", "none", "None"):
        return None
    if typ.startswith("bool"):
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"{field.name}: not a boolean: {raw!r}")
    if typ.startswith("int"):
        return int(raw)
    if typ.startswith("float"):
        return float(raw)
    return raw


def parse_overrides(pairs: dict[str, str]) -> dict:
    by_name = {f.name: f for f in fields(Config)}
    out = {}
    for k, raw in pairs.items():
        if k not in by_name:
            raise KeyError(f"unknown config key {k!r}")
        out[k] = _coerce(by_name[k], raw)
    return out


def load_config(path, base: Config | None = None) -> Config:
    """Read ``key = value`` lines (``#`` comments allowed) over ``base``."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    parser.read_string("[run]\n" + Path(path).read_text(encoding="utf-8"))
    values = parse_overrides(dict(parser["run"]))
    return (base or Config()).replace(**values)


PRESETS: dict[str, Config] = {
    # published training settings
    "paper": Config(),
    # decay rate of the best decay-rate ablation row
    "paper_decay099": Config(alpha_d=0.99),
    # desk-scale synthetic runs: small joint space, larger step size
    "synthetic": Config(d_emb=64, lr=1e-3),
}


def preset(name: str) -> Config:
    try:
        return dataclasses.replace(PRESETS[name])
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
