"""Encoder stacks: trunk, projection, and the bootstrap-side heads.

All variants share a relu MLP trunk producing the representation h
(this is what probes consume) and a two-layer projection with batch
standardization after its first layer only; standardizing the final
projection output hurts the compressed objectives, so no layer does it.

The bootstrap variants add a predictor q (same shape as the
projection), and the compressed bootstrap variant further adds the
backward-mean head m (again projection-shaped) and a linear decoder
head l.  Bootstrap variants also carry a target copy of trunk and
projection: parameters never receive gradients, they track the online
weights through an exponential moving average whose coefficient walks
a half-cosine from alpha_base at step 0 to exactly 1 at the final step.

Parameter init is uniform(-s, s) with s = sqrt(6 / (fan_in + fan_out)),
drawn in a fixed order from a single generator, so a seed pins every
weight bit-exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

_BOOTSTRAP = ("byol", "c_byol")
_VALID_VARIANTS = ("simclr", "c_simclr", "byol", "c_byol")


@dataclass(frozen=True)
class StackConfig:
    input_dim: int = 32
    trunk_hidden: tuple[int, ...] = (256,)
    repr_dim: int = 128
    proj_hidden: int = 256
    proj_dim: int = 32
    variant: str = "simclr"

    def __post_init__(self):
        if self.variant not in _VALID_VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        dims = (self.input_dim, self.repr_dim, self.proj_hidden, self.proj_dim, *self.trunk_hidden)
        if any(d < 1 for d in dims):
            raise ValueError(f"all dimensions must be positive, got {self}")


@dataclass(frozen=True)
class EmaSchedule:
    alpha_base: float = 0.99
    total_steps: int = 1

    def __post_init__(self):
        if not (0.0 <= self.alpha_base <= 1.0):
            raise ValueError(f"alpha_base must lie in [0, 1], got {self.alpha_base}")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")

    def alpha(self, step: int) -> float:
        """alpha_base at step 0, walking a half-cosine up to 1 at the end."""
        if not (0 <= step <= self.total_steps):
            raise ValueError(f"step {step} outside [0, {self.total_steps}]")
        frac = step / self.total_steps
        return 1.0 - (1.0 - self.alpha_base) * (math.cos(math.pi * frac) + 1.0) / 2.0


def ema_alpha(step: int, total_steps: int, alpha_base: float) -> float:
    return EmaSchedule(alpha_base, total_steps).alpha(step)


def _init_weight(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Linear:
    def __init__(self, name: str, in_dim: int, out_dim: int, rng: np.random.Generator,
                 trainable: bool = True):
        self.name = name
        self.weight = ad.Tensor(_init_weight(rng, in_dim, out_dim), requires_grad=trainable)
        self.bias = ad.Tensor(np.zeros(out_dim), requires_grad=trainable)

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        return ad.add(ad.matmul(x, self.weight), self.bias)

    def slots(self):
        """(name, owner object, attribute, weight_decay_applies) per param;
        the owner/attribute pair lets callers swap a parameter tensor in
        and out, which is how finite-difference checks probe full losses."""
        return [(f"{self.name}.weight", self, "weight", True),
                (f"{self.name}.bias", self, "bias", True)]


class StandardizeAffine:
    """Batch standardization with learned gain/bias and running stats."""

    def __init__(self, name: str, dim: int, trainable: bool = True):
        self.name = name
        self.gain = ad.Tensor(np.ones(dim), requires_grad=trainable)
        self.bias = ad.Tensor(np.zeros(dim), requires_grad=trainable)
        self.state = ad.RunningStats(dim)

    def __call__(self, x: ad.Tensor, training: bool) -> ad.Tensor:
        return ad.batch_standardize(x, self.gain, self.bias, self.state, training)

    def slots(self):
        # gain/bias are exempt from weight decay by convention
        return [(f"{self.name}.gain", self, "gain", False),
                (f"{self.name}.bias", self, "bias", False)]


class ProjectionMlp:
    """Linear -> standardize -> relu -> Linear; no standardization after
    the final layer."""

    def __init__(self, name: str, in_dim: int, hidden: int, out_dim: int,
                 rng: np.random.Generator, trainable: bool = True):
        self.name = name
        self.fc1 = Linear(f"{name}.fc1", in_dim, hidden, rng, trainable)
        self.bn = StandardizeAffine(f"{name}.bn", hidden, trainable)
        self.fc2 = Linear(f"{name}.fc2", hidden, out_dim, rng, trainable)

    def __call__(self, x: ad.Tensor, training: bool) -> ad.Tensor:
        return self.fc2(ad.relu(self.bn(self.fc1(x), training)))

    def slots(self):
        return self.fc1.slots() + self.bn.slots() + self.fc2.slots()

    def stats(self):
        return [(f"{self.name}.bn", self.bn.state)]


class Trunk:
    def __init__(self, name: str, cfg: StackConfig, rng: np.random.Generator,
                 trainable: bool = True):
        self.name = name
        dims = (cfg.input_dim, *cfg.trunk_hidden, cfg.repr_dim)
        self.layers = [Linear(f"{name}.{i}", dims[i], dims[i + 1], rng, trainable)
                       for i in range(len(dims) - 1)]

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        h = self.layers[0](x)
        for layer in self.layers[1:]:
            h = layer(ad.relu(h))
        return h

    def slots(self):
        out = []
        for layer in self.layers:
            out += layer.slots()
        return out


class EncoderStack:
    """Online trunk/projection plus variant-specific heads and targets."""

    def __init__(self, cfg: StackConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng([int(seed), 7])
        self.trunk = Trunk("trunk", cfg, rng)
        self.projection = ProjectionMlp("projection", cfg.repr_dim, cfg.proj_hidden,
                                        cfg.proj_dim, rng)
        self.predictor = None
        self.m_head = None
        self.l_head = None
        self.target_trunk = None
        self.target_projection = None
        if cfg.variant in _BOOTSTRAP:
            self.predictor = ProjectionMlp("predictor", cfg.proj_dim, cfg.proj_hidden,
                                           cfg.proj_dim, rng)
        if cfg.variant == "c_byol":
            self.m_head = ProjectionMlp("m_head", cfg.proj_dim, cfg.proj_hidden,
                                        cfg.proj_dim, rng)
            self.l_head = Linear("l_head", cfg.proj_dim, cfg.proj_dim, rng)
        if cfg.variant in _BOOTSTRAP:
            self.target_trunk = Trunk("target_trunk", cfg, rng, trainable=False)
            self.target_projection = ProjectionMlp("target_projection", cfg.repr_dim,
                                                   cfg.proj_hidden, cfg.proj_dim, rng,
                                                   trainable=False)
            self._copy_online_to_target()

    # -- forward paths ----------------------------------------------------

    def represent(self, x: ad.Tensor) -> ad.Tensor:
        """Representation h; what linear probes consume."""
        return self.trunk(x)

    def project_unit(self, x: ad.Tensor, training: bool) -> tuple[ad.Tensor, ad.Tensor]:
        """(h, unit projection r)."""
        h = self.trunk(x)
        r = ad.l2_normalize_rows(self.projection(h, training))
        return h, r

    def predictor_unit(self, x: ad.Tensor, training: bool) -> ad.Tensor:
        """Unit forward mean mu_e = |q(g(f(x)))| for bootstrap variants."""
        if self.predictor is None:
            raise ValueError(f"variant {self.cfg.variant!r} has no predictor")
        h = self.trunk(x)
        p = self.projection(h, training)
        return ad.l2_normalize_rows(self.predictor(p, training))

    def target_unit(self, x: ad.Tensor, training: bool) -> ad.Tensor:
        """Detached unit target projection (stop-gradient by construction)."""
        if self.target_trunk is None:
            raise ValueError(f"variant {self.cfg.variant!r} has no target network")
        h = self.target_trunk(x)
        p = self.target_projection(h, training)
        return ad.stop_gradient(ad.l2_normalize_rows(p))

    def backward_mean_unit(self, y: ad.Tensor, training: bool) -> ad.Tensor:
        if self.m_head is None:
            raise ValueError(f"variant {self.cfg.variant!r} has no backward-mean head")
        return ad.l2_normalize_rows(self.m_head(y, training))

    def decode(self, z: ad.Tensor) -> ad.Tensor:
        if self.l_head is None:
            raise ValueError(f"variant {self.cfg.variant!r} has no decoder head")
        return self.l_head(z)

    # -- parameter bookkeeping --------------------------------------------

    def _module_list(self):
        mods = [self.trunk, self.projection]
        for m in (self.predictor, self.m_head, self.l_head):
            if m is not None:
                mods.append(m)
        for m in (self.target_trunk, self.target_projection):
            if m is not None:
                mods.append(m)
        return mods

    def parameter_slots(self) -> list[tuple[str, object, str, bool]]:
        """(name, owner, attribute, weight_decay_applies) for every
        parameter, including targets; reading getattr(owner, attribute)
        yields the live tensor even after in-place swaps."""
        out = []
        for mod in self._module_list():
            out += mod.slots()
        return out

    def named_parameters(self) -> list[tuple[str, ad.Tensor, bool]]:
        return [(n, getattr(owner, attr), d) for n, owner, attr, d in self.parameter_slots()]

    def trainable_parameters(self) -> list[tuple[str, ad.Tensor, bool]]:
        return [(n, t, d) for n, t, d in self.named_parameters() if t.requires_grad]

    def trainable_slots(self) -> list[tuple[str, object, str, bool]]:
        return [(n, o, a, d) for n, o, a, d in self.parameter_slots()
                if getattr(o, a).requires_grad]

    def named_stats(self) -> list[tuple[str, ad.RunningStats]]:
        out = []
        for mod in self._module_list():
            if hasattr(mod, "stats"):
                out += mod.stats()
        return out

    def _ema_pairs(self) -> list[tuple[ad.Tensor, ad.Tensor]]:
        online = {n: getattr(o, a) for n, o, a, _ in self.trunk.slots() + self.projection.slots()}
        pairs = []
        for n, o, a, _ in self.target_trunk.slots() + self.target_projection.slots():
            source = online[n.replace("target_", "", 1)]
            pairs.append((source, getattr(o, a)))
        return pairs

    def _copy_online_to_target(self) -> None:
        for source, target in self._ema_pairs():
            target.assign_(source.data)

    def ema_update(self, alpha: float) -> None:
        """target <- alpha * target + (1 - alpha) * online, trunk and
        projection parameters only."""
        if self.target_trunk is None:
            raise ValueError(f"variant {self.cfg.variant!r} has no target network")
        if not (0.0 <= alpha <= 1.0):
            raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
        for source, target in self._ema_pairs():
            target.assign_(alpha * target.data + (1.0 - alpha) * source.data)

    # -- state (de)serialization ------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name, tensor, _ in self.named_parameters():
            out[name] = tensor.data
        for name, stats in self.named_stats():
            out[f"{name}.running_mean"] = stats.mean
            out[f"{name}.running_var"] = stats.var
            out[f"{name}.updates"] = np.array([float(stats.updates)])
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        expected = set(self.state_arrays())
        got = set(arrays)
        if expected != got:
            missing = sorted(expected - got)[:4]
            extra = sorted(got - expected)[:4]
            raise ValueError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, tensor, _ in self.named_parameters():
            tensor.assign_(arrays[name])
        for name, stats in self.named_stats():
            stats.mean = np.array(arrays[f"{name}.running_mean"], dtype=np.float64)
            stats.var = np.array(arrays[f"{name}.running_var"], dtype=np.float64)
            stats.updates = int(arrays[f"{name}.updates"][0])
