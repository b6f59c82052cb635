"""Hidden-confounding simulator for clustered regression data.

For cluster ``k`` the covariates are drawn from ``N_p((c' gamma_k) 1_p, I_p)``
with a single ``c ~ N_q(0, I)`` per dataset, so the cluster effects shift the
covariate distribution as well as the outcome
``y = X beta + [intercept effect] + [z * slope effect] + eps``.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .baselines import icc_of
from .errors import InvalidSplit
from .model import ClusteredDataset

PRESETS = {
    "Low": (4, 10, 1),
    "Medium": (10, 25, 1),
    "High": (14, 35, 1),
}

GAUSSIAN_VARIANCES = tuple(float(v) for v in range(10, 101, 10))
SPARSE_LEVELS = (90, 80, 75, 66, 60, 50, 40, 33, 25, 20, 10, 0)  # percent of zero effects
ICC_TARGETS = tuple(t / 10 for t in range(1, 10))


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation scenario.

    ``effect_type`` is ``"gaussian"`` (uses ``variance``) or ``"sparse"``
    (uses ``zero_fraction``).  ``preset`` picks (K, p, q) from ``PRESETS``;
    ``"Custom"`` uses the explicit ``K``, ``p``, ``q``.
    """

    effect_type: str = "gaussian"
    variance: float = 10.0
    zero_fraction: float = 0.9
    preset: str = "Low"
    K: Optional[int] = None
    p: Optional[int] = None
    q: Optional[int] = None
    n_per_cluster: int = 50
    sigma_eps: float = 1.0
    seed: int = 0
    split: tuple = (0.6, 0.2, 0.2)
    replicate_id: int = 0

    def __post_init__(self):
        if self.effect_type not in ("gaussian", "sparse"):
            raise ValueError(f"unknown effect type {self.effect_type!r}")
        if self.preset != "Custom" and self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}")
        if abs(sum(self.split) - 1.0) > 1e-9 or len(self.split) != 3 or min(self.split) < 0:
            raise ValueError("split fractions must be three non-negative numbers summing to 1")
        if not 0.0 <= self.zero_fraction <= 1.0:
            raise ValueError("zero_fraction must lie in [0, 1]")
        K, p, q = self.dims
        if min(K, p, q) < 1:
            raise ValueError("K, p and q must be at least 1")
        if self.effect_type == "gaussian" and not self.variance > 0:
            raise ValueError("Gaussian effect variance must be positive")
        object.__setattr__(self, "split", tuple(float(s) for s in self.split))

    @property
    def dims(self) -> tuple:
        if self.preset == "Custom":
            if self.K is None or self.p is None:
                raise ValueError("Custom preset needs explicit K and p")
            return int(self.K), int(self.p), int(self.q or 1)
        return PRESETS[self.preset]

    @property
    def name(self) -> str:
        level = f"var{self.variance:g}" if self.effect_type == "gaussian" else f"zero{round(100 * self.zero_fraction)}"
        return f"{self.preset}-{self.effect_type}-{level}"

    def key(self) -> int:
        """Stable 32-bit tag of the scenario (excluding seed and replicate)."""
        d = asdict(self)
        d.pop("seed")
        d.pop("replicate_id")
        return zlib.crc32(json.dumps(d, sort_keys=True).encode())

    def rng(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(self.key(), int(self.replicate_id)))
        return np.random.default_rng(ss)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split"] = list(self.split)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        if "split" in d:
            d["split"] = tuple(d["split"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class ScenarioTruth:
    beta_true: np.ndarray
    gamma_true: np.ndarray  # q x K
    c_load: np.ndarray
    sigma_eps: float
    icc_true: float
    cluster_order: tuple = field(default=())

    def to_dict(self) -> dict:
        return {
            "beta_true": self.beta_true.tolist(),
            "gamma_true": self.gamma_true.tolist(),
            "c_load": self.c_load.tolist(),
            "sigma_eps": self.sigma_eps,
            "icc_true": self.icc_true,
            "cluster_order": list(self.cluster_order),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioTruth":
        return cls(
            beta_true=np.asarray(d["beta_true"], dtype=float),
            gamma_true=np.asarray(d["gamma_true"], dtype=float),
            c_load=np.asarray(d["c_load"], dtype=float),
            sigma_eps=float(d["sigma_eps"]),
            icc_true=float(d["icc_true"]),
            cluster_order=tuple(d.get("cluster_order", ())),
        )

    def to_json(self) -> str:
        # repr-precision floats round-trip exactly through json
        return json.dumps(self.to_dict(), indent=2)


def gen_gamma_gaussian(K: int, var: float, rng: np.random.Generator) -> np.ndarray:
    if not var > 0:
        raise ValueError("variance must be positive")
    return rng.normal(0.0, np.sqrt(var), size=K)


def n_nonzero(K: int, zero_fraction: float) -> int:
    """Number of nonzero effects, ``K (1 - zero_fraction)`` rounded half up."""
    return int(np.floor(K * (1.0 - zero_fraction) + 0.5 + 1e-9))


def gen_gamma_sparse(K: int, zero_fraction: float, rng: np.random.Generator) -> np.ndarray:
    if not 0.0 <= zero_fraction <= 1.0:
        raise ValueError("zero_fraction must lie in [0, 1]")
    k = n_nonzero(K, zero_fraction)
    gamma = np.zeros(K)
    where = rng.choice(K, size=k, replace=False)
    gamma[where] = rng.choice(np.array([-1.0, 1.0]), size=k)
    return gamma


def _split_counts(n_k: int, split) -> np.ndarray:
    counts = np.floor(np.asarray(split) * n_k + 1e-9).astype(int)
    # hand leftover rows to the training split
    counts[0] += n_k - counts.sum()
    return counts


def gen_dataset(config: ScenarioConfig):
    """Draw a dataset and its ground truth; rows are split within each cluster."""
    K, p, q = config.dims
    rng = config.rng()
    counts = _split_counts(config.n_per_cluster, config.split)
    if np.any(counts < 1):
        raise InvalidSplit(f"split {config.split} leaves some cluster with an empty role ({counts.tolist()} rows)")

    if config.effect_type == "gaussian":
        gamma = np.vstack([gen_gamma_gaussian(K, config.variance, rng) for _ in range(q)])
    else:
        gamma = np.vstack([gen_gamma_sparse(K, config.zero_fraction, rng) for _ in range(q)])
    c = rng.normal(size=q)
    beta = rng.normal(size=p)

    n_k = config.n_per_cluster
    labels = np.repeat(np.arange(K), n_k)
    shift = c @ gamma  # confounded covariate mean per cluster
    X = shift[labels][:, None] + rng.normal(size=(K * n_k, p))
    z = rng.normal(size=K * n_k) if q >= 2 else None
    y = X @ beta + gamma[0, labels] + rng.normal(0.0, config.sigma_eps, size=K * n_k)
    if z is not None:
        y = y + z * gamma[1, labels]

    role = np.empty(K * n_k, dtype=object)
    block = np.array(["train"] * counts[0] + ["validation"] * counts[1] + ["test"] * counts[2], dtype=object)
    for k in range(K):
        role[k * n_k:(k + 1) * n_k] = block

    if config.effect_type == "gaussian":
        var_gamma = config.variance
    else:
        var_gamma = float(np.var(gamma[0]))
    icc = icc_of(var_gamma, config.sigma_eps**2)
    data = ClusteredDataset(X=X, y=y, labels=labels, z=z, role=role)
    truth = ScenarioTruth(beta_true=beta, gamma_true=gamma, c_load=c, sigma_eps=config.sigma_eps,
                          icc_true=icc, cluster_order=tuple(range(K)))
    return data, truth


def scenario_grid(seed: int = 0, **overrides) -> list:
    """The 66 scenarios: 10 Gaussian variances and 12 sparsity levels for each preset."""
    out = []
    for preset in PRESETS:
        for v in GAUSSIAN_VARIANCES:
            out.append(ScenarioConfig(effect_type="gaussian", variance=v, preset=preset, seed=seed, **overrides))
        for level in SPARSE_LEVELS:
            out.append(ScenarioConfig(effect_type="sparse", zero_fraction=level / 100, preset=preset, seed=seed, **overrides))
    return out


def icc_variance(target: float, sigma_eps: float = 1.0) -> float:
    """Effect variance giving intra-cluster correlation ``target``."""
    if not 0.0 < target < 1.0:
        raise ValueError("target ICC must lie strictly between 0 and 1")
    return target / (1.0 - target) * sigma_eps**2


def icc_scenarios(preset: str = "Medium", targets=ICC_TARGETS, seed: int = 0, sigma_eps: float = 1.0) -> list:
    return [
        ScenarioConfig(effect_type="gaussian", variance=icc_variance(t, sigma_eps), preset=preset,
                       sigma_eps=sigma_eps, seed=seed)
        for t in targets
    ]


def with_replicate(config: ScenarioConfig, replicate_id: int) -> ScenarioConfig:
    return replace(config, replicate_id=int(replicate_id))
