"""Transfer building blocks: heterogeneous feature encoders and shared/private stacks.

Every block works on one domain batch at a time.  A domain batch uses the
domain's own feature layout, ``[shared | private]``; only the private path of
that domain is evaluated, so a source batch never touches target-private
weights (and vice versa).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .nn_core import (
    MLP,
    DenseLayer,
    LayerCollection,
    bce_with_logits,
    check_finite,
    frobenius_orth,
    frobenius_orth_grad,
    loss_mse,
    sigmoid,
)

DOMAINS = ("source", "target")
MANIFEST_FORMAT = "htce-bench/params"
MANIFEST_VERSION = 1


def _check_domain(domain: str) -> None:
    if domain not in DOMAINS:
        raise ValueError(f"unknown domain {domain!r}")


@dataclass
class Representation:
    z_shared: np.ndarray
    z_private: np.ndarray

    @property
    def concat(self) -> np.ndarray:
        return np.hstack([self.z_shared, self.z_private])


class EncoderTriple(LayerCollection):
    """phi_s on the shared block, phi_pR / phi_pT on the full domain vector.

    ``n_extra`` appends extra columns (the treatment flag of the S-learner) to
    the shared encoder's input.
    """

    def __init__(
        self,
        d_shared: int,
        d_private_source: int,
        d_private_target: int,
        rng: np.random.Generator,
        units: int = 100,
        n_extra: int = 0,
    ):
        self.d_shared = d_shared
        self.d_domain = {"source": d_shared + d_private_source, "target": d_shared + d_private_target}
        self.n_extra = n_extra
        self.shared = DenseLayer.create(d_shared + n_extra, units, "relu", rng)
        self.private = {
            dom: DenseLayer.create(self.d_domain[dom], units, "relu", rng) for dom in DOMAINS
        }

    def named_layers(self) -> dict[str, DenseLayer]:
        return {
            "shared": self.shared,
            "private_source": self.private["source"],
            "private_target": self.private["target"],
        }

    def encode(self, x: np.ndarray, domain: str, extra: np.ndarray | None = None):
        _check_domain(domain)
        if x.ndim != 2 or x.shape[1] != self.d_domain[domain]:
            raise ValueError(f"{domain} batch must have {self.d_domain[domain]} columns, got {x.shape}")
        xs = x[:, : self.d_shared]
        if self.n_extra:
            if extra is None:
                raise ValueError("this encoder expects extra shared inputs")
            xs = np.hstack([xs, np.asarray(extra, dtype=np.float64).reshape(len(x), self.n_extra)])
        z_s, cache_s = self.shared.forward(xs)
        z_p, cache_p = self.private[domain].forward(x)
        return Representation(z_s, z_p), (domain, cache_s, cache_p)

    def backward(self, cache, dz_shared: np.ndarray, dz_private: np.ndarray) -> None:
        domain, cache_s, cache_p = cache
        self.shared.backward(cache_s, dz_shared)
        self.private[domain].backward(cache_p, dz_private)


def encode(enc: EncoderTriple, x: np.ndarray, domain: str, extra: np.ndarray | None = None) -> Representation:
    return enc.encode(x, domain, extra)[0]


def orth_feature_loss(
    zeta_s_source: np.ndarray,
    zeta_p_source: np.ndarray,
    zeta_s_target: np.ndarray,
    zeta_p_target: np.ndarray,
) -> float:
    """Representation orthogonality penalty, each domain against its own shared rows."""
    return frobenius_orth(zeta_s_source, zeta_p_source) + frobenius_orth(zeta_s_target, zeta_p_target)


class SharedPrivateStack(LayerCollection):
    """L layers of (shared, source-private, target-private) subspaces for one arm.

    Layer 1 feeds the input representation to both the shared and the private
    subspace.  Later layers feed ``h_s`` to the shared subspace and
    ``[h_s | h_p]`` to the private one.  The last layer emits one unit per
    subspace; the output is ``psi(h_p + h_s)``.
    """

    def __init__(
        self,
        in_dim: int,
        rng: np.random.Generator,
        units: int = 100,
        n_layers: int = 5,
        output: str = "linear",
    ):
        if n_layers < 1:
            raise ValueError("a stack needs at least one layer")
        if output not in ("linear", "sigmoid"):
            raise ValueError(f"unknown output activation {output!r}")
        self.in_dim = in_dim
        self.output = output
        self.layers: list[dict[str, DenseLayer]] = []
        for l in range(n_layers):
            last = l == n_layers - 1
            out = 1 if last else units
            act = "linear" if last else "selu"
            in_s = in_dim if l == 0 else units
            in_p = in_dim if l == 0 else 2 * units
            self.layers.append(
                {
                    "shared": DenseLayer.create(in_s, out, act, rng),
                    "source": DenseLayer.create(in_p, out, act, rng),
                    "target": DenseLayer.create(in_p, out, act, rng),
                }
            )

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def named_layers(self) -> dict[str, DenseLayer]:
        return {
            f"l{l}.{sub}": layer
            for l, subs in enumerate(self.layers)
            for sub, layer in subs.items()
        }

    def forward(self, h: np.ndarray, domain: str) -> tuple[np.ndarray, list]:
        """Pre-activation output ``h_p + h_s`` (shape ``(n,)``) and caches."""
        _check_domain(domain)
        if h.ndim != 2 or h.shape[1] != self.in_dim:
            raise ValueError(f"stack expects width {self.in_dim}, got {h.shape}")
        caches = []
        hs_in, hp_in = h, h
        for subs in self.layers:
            hs, cs = subs["shared"].forward(hs_in)
            hp, cp = subs[domain].forward(hp_in)
            caches.append((cs, cp))
            hs_in, hp_in = hs, np.hstack([hs, hp])
        logit = (hs + hp)[:, 0]
        return logit, [domain, caches]

    def backward(self, cache, dlogit: np.ndarray) -> np.ndarray:
        domain, caches = cache
        d = dlogit.reshape(-1, 1)
        dhs, dhp = d, d
        dh_in = None
        for l in range(self.n_layers - 1, -1, -1):
            cs, cp = caches[l]
            subs = self.layers[l]
            dxs = subs["shared"].backward(cs, dhs)
            dxp = subs[domain].backward(cp, dhp)
            if l == 0:
                dh_in = dxs + dxp
            else:
                m = subs["shared"].in_dim
                dhs = dxs + dxp[:, :m]
                dhp = dxp[:, m:]
        return dh_in

    def predict(self, h: np.ndarray, domain: str) -> np.ndarray:
        logit, _ = self.forward(h, domain)
        return sigmoid(logit) if self.output == "sigmoid" else logit

    def _orth_pairs(self):
        for subs in self.layers:
            theta_s = subs["shared"].weights
            m = theta_s.shape[0]
            for dom in DOMAINS:
                yield subs["shared"], subs[dom], m

    def orth_loss(self) -> float:
        return sum(frobenius_orth(s.weights, p.weights[:m]) for s, p, m in self._orth_pairs())

    def orth_backward(self, scale: float) -> None:
        for s, p, m in self._orth_pairs():
            gs, gp = frobenius_orth_grad(s.weights, p.weights[:m])
            if not s.frozen:
                s.grad_w += scale * gs
            if not p.frozen:
                p.grad_w[:m] += scale * gp

    def disable_sharing(self) -> None:
        """Pin every shared subspace at zero (the no-PO-sharing ablation)."""
        for subs in self.layers:
            subs["shared"].freeze_at_zero()


def stack_forward(stack: SharedPrivateStack, repr_: Representation | np.ndarray, domain: str) -> np.ndarray:
    h = repr_.concat if isinstance(repr_, Representation) else repr_
    return stack.predict(h, domain)


def orth_po_loss(stacks: SharedPrivateStack | list[SharedPrivateStack]) -> float:
    if isinstance(stacks, SharedPrivateStack):
        stacks = [stacks]
    return sum(s.orth_loss() for s in stacks)


# ---------------------------------------------------------------- composite networks

NET_KINDS = ("t", "s", "tarnet", "single")


@dataclass
class NetSpec:
    """Architecture of one transfer network.

    kind ``t``: one encoder triple and one stack per arm.
    kind ``s``: one encoder triple whose shared encoder also sees w, one stack.
    kind ``tarnet``: shared encoders, per-domain representation towers, one stack per arm.
    kind ``single``: one encoder triple and one stack (propensity, DR second stage).
    """

    kind: str
    d_shared: int
    d_private_source: int
    d_private_target: int
    encoder_units: int = 100
    subspace_units: int = 100
    n_layers: int = 5
    tower_layers: int = 3
    tower_units: int = 100
    output: str = "linear"

    def __post_init__(self) -> None:
        if self.kind not in NET_KINDS:
            raise ValueError(f"unknown network kind {self.kind!r}")

    @property
    def n_arms(self) -> int:
        return 2 if self.kind in ("t", "tarnet") else 1

    def d_domain(self, domain: str) -> int:
        return self.d_shared + (self.d_private_source if domain == "source" else self.d_private_target)


@dataclass
class Ablation:
    po_sharing: bool = True
    orth_z: bool = True
    orth_po: bool = True

    @classmethod
    def named(cls, name: str) -> "Ablation":
        table = {
            "full": cls(),
            "no_po_sharing": cls(po_sharing=False),
            "no_orth_z": cls(orth_z=False),
            "no_orth_po": cls(orth_po=False),
        }
        if name not in table:
            raise ValueError(f"unknown ablation {name!r}; choose from {sorted(table)}")
        return table[name]


class HTCENet(LayerCollection):
    """Encoders, optional representation towers and shared/private stacks."""

    def __init__(self, spec: NetSpec, rng: np.random.Generator, ablation: Ablation | None = None):
        self.spec = spec
        self.ablation = ablation or Ablation()
        n_enc = 2 if spec.kind == "t" else 1
        self.encoders = [
            EncoderTriple(
                spec.d_shared, spec.d_private_source, spec.d_private_target, rng,
                units=spec.encoder_units, n_extra=1 if spec.kind == "s" else 0,
            )
            for _ in range(n_enc)
        ]
        rep_width = 2 * spec.encoder_units
        self.towers: dict[str, MLP] = {}
        if spec.kind == "tarnet":
            self.towers = {
                dom: MLP.create(rep_width, [spec.tower_units] * spec.tower_layers, "relu", rng)
                for dom in DOMAINS
            }
            rep_width = spec.tower_units
        self.stacks = [
            SharedPrivateStack(rep_width, rng, spec.subspace_units, spec.n_layers, spec.output)
            for _ in range(spec.n_arms)
        ]
        if not self.ablation.po_sharing:
            for stack in self.stacks:
                stack.disable_sharing()

    def named_layers(self) -> dict[str, DenseLayer]:
        out = {}
        for a, enc in enumerate(self.encoders):
            out.update({f"enc{a}.{k}": v for k, v in enc.named_layers().items()})
        for dom, tower in self.towers.items():
            out.update(tower.named_layers(f"tower_{dom}"))
        for a, stack in enumerate(self.stacks):
            out.update({f"stack{a}.{k}": v for k, v in stack.named_layers().items()})
        return out

    def private_layer_names(self, domain: str) -> list[str]:
        """Names of every layer that only ``domain`` batches may update."""
        tag = {"source": ("private_source", ".source", "tower_source"),
               "target": ("private_target", ".target", "tower_target")}[domain]
        return [
            name for name in self.named_layers()
            if name.endswith(tag[0]) or name.endswith(tag[1]) or name.startswith(tag[2])
        ]

    # ---- forward / backward on one domain batch

    def _encode(self, x: np.ndarray, w: np.ndarray | None, domain: str):
        n = len(x)
        kind = self.spec.kind
        if kind == "t":
            u = self.spec.encoder_units
            z_s, z_p = np.empty((n, u)), np.empty((n, u))
            caches = []
            for a, enc in enumerate(self.encoders):
                idx = np.flatnonzero(w == a)
                if len(idx) == 0:
                    continue
                rep, c = enc.encode(x[idx], domain)
                z_s[idx], z_p[idx] = rep.z_shared, rep.z_private
                caches.append((a, idx, c))
            return z_s, z_p, caches
        extra = None if kind != "s" else np.asarray(w, dtype=np.float64).reshape(-1, 1)
        rep, c = self.encoders[0].encode(x, domain, extra)
        return rep.z_shared, rep.z_private, [(0, None, c)]

    def forward(self, x: np.ndarray, w: np.ndarray | None, domain: str):
        """Pre-activation output for each row (routed to arm ``w`` where relevant)."""
        _check_domain(domain)
        if self.spec.n_arms == 2 or self.spec.kind == "s":
            if w is None:
                raise ValueError(f"kind {self.spec.kind!r} needs a treatment vector")
            w = np.asarray(w).astype(np.int64).reshape(-1)
        z_s, z_p, enc_caches = self._encode(x, w, domain)
        phi = np.hstack([z_s, z_p])
        tower_cache = None
        if self.towers:
            phi, tower_cache = self.towers[domain].forward(phi)
        logit = np.empty(len(x))
        stack_caches = []
        if self.spec.n_arms == 2:
            for a, stack in enumerate(self.stacks):
                idx = np.flatnonzero(w == a)
                if len(idx) == 0:
                    continue
                logit[idx], c = stack.forward(phi[idx], domain)
                stack_caches.append((a, idx, c))
        else:
            logit[:], c = self.stacks[0].forward(phi, domain)
            stack_caches.append((0, None, c))
        cache = dict(domain=domain, z_s=z_s, z_p=z_p, enc=enc_caches, tower=tower_cache,
                     stacks=stack_caches, width=phi.shape[1])
        return logit, cache

    def backward(self, cache, dlogit: np.ndarray, dz_s: np.ndarray | None = None, dz_p: np.ndarray | None = None) -> None:
        domain = cache["domain"]
        n = len(dlogit)
        dphi = np.zeros((n, cache["width"]))
        for a, idx, c in cache["stacks"]:
            if idx is None:
                dphi += self.stacks[a].backward(c, dlogit)
            else:
                dphi[idx] += self.stacks[a].backward(c, dlogit[idx])
        if self.towers:
            dphi = self.towers[domain].backward(cache["tower"], dphi)
        u = self.spec.encoder_units
        gs, gp = dphi[:, :u], dphi[:, u:]
        if dz_s is not None:
            gs = gs + dz_s
            gp = gp + dz_p
        for a, idx, c in cache["enc"]:
            if idx is None:
                self.encoders[a].backward(c, gs, gp)
            else:
                self.encoders[a].backward(c, gs[idx], gp[idx])

    # ---- losses

    def step_loss(
        self,
        batches: dict[str, tuple[np.ndarray, np.ndarray | None, np.ndarray]],
        loss: str = "mse",
        orth_weight: float = 0.01,
        include_orth_po: bool = True,
    ) -> dict[str, float]:
        """Composite loss on per-domain batches; accumulates gradients.

        ``batches`` maps a domain to ``(x, w, target)``.  The outcome loss is
        the sum over domains of the per-domain mean loss.
        """
        parts = {"y": 0.0, "orth_z": 0.0, "orth_po": 0.0}
        for domain, (x, w, target) in batches.items():
            if len(x) == 0:
                continue
            logit, cache = self.forward(x, w, domain)
            if loss == "mse":
                pred = sigmoid(logit) if self.spec.output == "sigmoid" else logit
                value, dpred = loss_mse(pred, target)
                dlogit = dpred * pred * (1.0 - pred) if self.spec.output == "sigmoid" else dpred
            elif loss == "bce":
                if self.spec.output != "sigmoid":
                    raise ValueError("bce loss needs a sigmoid output")
                value, dlogit = bce_with_logits(logit, target)
            else:
                raise ValueError(f"unknown loss {loss!r}")
            parts["y"] += value
            dz_s = dz_p = None
            if self.ablation.orth_z and orth_weight > 0:
                z_s, z_p = cache["z_s"], cache["z_p"]
                parts["orth_z"] += frobenius_orth(z_s, z_p)
                gs, gp = frobenius_orth_grad(z_s, z_p)
                dz_s, dz_p = orth_weight * gs, orth_weight * gp
            self.backward(cache, dlogit, dz_s, dz_p)
        if include_orth_po and self.ablation.orth_po and self.ablation.po_sharing and orth_weight > 0:
            parts["orth_po"] = orth_po_loss(self.stacks)
            for stack in self.stacks:
                stack.orth_backward(orth_weight)
        parts["total"] = parts["y"] + orth_weight * (
            (parts["orth_z"] if self.ablation.orth_z else 0.0)
            + (parts["orth_po"] if self.ablation.orth_po else 0.0)
        )
        check_finite(np.array(parts["total"]), "training loss")
        return parts

    # ---- inference

    def predict_logit(self, x: np.ndarray, domain: str, arm: int | None = None) -> np.ndarray:
        kind = self.spec.kind
        n = len(x)
        if kind in ("t", "tarnet", "s"):
            if arm not in (0, 1):
                raise ValueError(f"kind {kind!r} needs arm 0 or 1")
            logit, _ = self.forward(x, np.full(n, arm), domain)
            return logit
        logit, _ = self.forward(x, None, domain)
        return logit

    def predict(self, x: np.ndarray, domain: str, arm: int | None = None) -> np.ndarray:
        logit = self.predict_logit(x, domain, arm)
        return sigmoid(logit) if self.spec.output == "sigmoid" else logit


def propensity_block(enc: EncoderTriple, stack: SharedPrivateStack, x: np.ndarray, domain: str) -> np.ndarray:
    """Propensity estimate ``sigmoid(g_pi(Phi_pi(x)))`` for one domain batch."""
    if stack.output != "sigmoid":
        raise ValueError("propensity stack must have a sigmoid output")
    return stack.predict(encode(enc, x, domain).concat, domain)


# ---------------------------------------------------------------- manifests


def net_manifest(net: HTCENet) -> dict:
    """JSON-ready description of architecture and weights.

    Keys of ``params`` read ``<block>.<layer>.<subspace>.{W,b}``, e.g.
    ``stack1.l3.target.W`` is arm 1, layer 4, target-private weights.
    """
    return {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "spec": asdict(net.spec),
        "ablation": asdict(net.ablation),
        "params": {name: arr.tolist() for name, arr in net.snapshot().items()},
    }


def net_from_manifest(manifest: dict) -> HTCENet:
    if manifest.get("format") != MANIFEST_FORMAT:
        raise ValueError("not an htce-bench parameter manifest")
    if manifest.get("version") != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version {manifest.get('version')}")
    net = HTCENet(NetSpec(**manifest["spec"]), np.random.default_rng(0), Ablation(**manifest["ablation"]))
    params = {k: np.asarray(v, dtype=np.float64) for k, v in manifest["params"].items()}
    expected = net.snapshot()
    if params.keys() != expected.keys():
        raise ValueError("manifest parameters do not match the architecture")
    for k, v in params.items():
        if v.shape != expected[k].shape:
            raise ValueError(f"shape mismatch for {k}: {v.shape} vs {expected[k].shape}")
    net.restore(params)
    return net


def save_net(net: HTCENet, path: str | Path) -> None:
    Path(path).write_text(json.dumps(net_manifest(net)))


def load_net(path: str | Path) -> HTCENet:
    return net_from_manifest(json.loads(Path(path).read_text()))
