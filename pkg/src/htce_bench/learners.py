"""HTCE learners, single-domain baselines and the shared training loop."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .architecture import ARCHITECTURE_VERSION, BASELINE, HTCE, OPTIMIZER
from .htce_blocks import Ablation, HTCENet, NetSpec, net_from_manifest, net_manifest
from .nn_core import (
    MLP,
    AdamState,
    DenseLayer,
    LayerCollection,
    NonFiniteError,
    adam_step,
    bce_with_logits,
    check_finite,
    loss_mse,
    sigmoid,
)
from .simbench import Dataset, SplitDataset

logger = logging.getLogger(__name__)

VARIANTS = ("s", "t", "dr", "tarnet")
BASELINE_MODES = ("target", "shared")
PROPENSITY_CLIP = OPTIMIZER["propensity_clip"]


class ArmMissingError(ValueError):
    """A treatment arm has no training samples."""


class PropensityCollapseError(RuntimeError):
    """Every estimated propensity sits on a clipping bound."""


@dataclass
class TrainConfig:
    learning_rate: float = OPTIMIZER["learning_rate"]
    batch_size: int = OPTIMIZER["batch_size_per_domain"]
    orth_weight: float = OPTIMIZER["orth_weight"]
    max_epochs: int = OPTIMIZER["max_epochs"]
    patience: int = OPTIMIZER["patience"]
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.max_epochs <= 0 or self.patience <= 0:
            raise ValueError("learning_rate, batch_size, max_epochs and patience must be positive")
        if self.orth_weight < 0:
            raise ValueError("orth_weight must be non-negative")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = math.inf
    steps: int = 0

    @property
    def epochs(self) -> int:
        return len(self.val_loss)


# ---------------------------------------------------------------- training loop


def _as_train(ds: Dataset | SplitDataset) -> Dataset:
    return ds.train if isinstance(ds, SplitDataset) else ds


def fit(
    model: LayerCollection,
    train_sizes: dict[str, int],
    step: Callable[[dict[str, np.ndarray]], float],
    validate: Callable[[], float],
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> TrainHistory:
    """Adam with per-domain minibatches and early stopping on ``validate()``.

    An epoch is ``ceil(max(n_d) / B)`` steps.  The largest domain is walked
    through a fresh permutation; smaller domains are drawn with replacement.
    ``step`` receives the row indices per domain, accumulates gradients and
    returns the minibatch loss.  The parameters with the lowest validation loss
    are restored at the end.
    """
    if not train_sizes or min(train_sizes.values()) < 1:
        raise ValueError("every training domain needs at least one sample")
    state = AdamState(learning_rate=cfg.learning_rate, beta1=OPTIMIZER["beta1"],
                      beta2=OPTIMIZER["beta2"], eps=OPTIMIZER["eps"])
    params = model.parameters()
    grads = model.gradients()
    hist = TrainHistory()
    lead = max(train_sizes, key=lambda k: train_sizes[k])
    n_lead = train_sizes[lead]
    B = cfg.batch_size
    steps_per_epoch = math.ceil(n_lead / B)
    best = model.snapshot()
    hist.best_val_loss = validate()
    stale = 0
    for epoch in range(cfg.max_epochs):
        perm = rng.permutation(n_lead)
        total = 0.0
        for s in range(steps_per_epoch):
            idx = {lead: perm[s * B:(s + 1) * B]}
            for dom, n in train_sizes.items():
                if dom != lead:
                    idx[dom] = rng.integers(0, n, size=B)
            model.zero_grad()
            total += step(idx)
            adam_step(params, grads, state)
            hist.steps += 1
        hist.train_loss.append(total / steps_per_epoch)
        val = validate()
        check_finite(np.array(val), "validation loss")
        hist.val_loss.append(val)
        if val < hist.best_val_loss:
            hist.best_val_loss = val
            hist.best_epoch = epoch
            best = model.snapshot()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.restore(best)
    logger.info("stopped after %d epochs (%d steps); best epoch %d, val loss %.4g",
                hist.epochs, hist.steps, hist.best_epoch, hist.best_val_loss)
    return hist


def _check_arms(parts: dict[str, Dataset]) -> None:
    """Every arm must appear in every training part."""
    for name, ds in parts.items():
        for a in (0, 1):
            if not np.any(ds.w == a):
                raise ArmMissingError(f"arm w={a} absent from the {name} training data")


def _d_shared(*datasets: Dataset) -> int:
    vals = {ds.d_shared for ds in datasets}
    if None in vals or len(vals) != 1:
        raise ValueError("datasets must carry one common d_shared")
    return vals.pop()


def clip_propensity(pi: np.ndarray, clip: float = PROPENSITY_CLIP) -> np.ndarray:
    return np.clip(pi, clip, 1.0 - clip)


def dr_pseudo_outcome(
    y: np.ndarray, w: np.ndarray, mu0_hat: np.ndarray, mu1_hat: np.ndarray, pi_hat: np.ndarray,
    clip: float | None = PROPENSITY_CLIP,
) -> np.ndarray:
    """Doubly-robust pseudo-outcome; its conditional mean is the CATE."""
    y, w, mu0_hat, mu1_hat, pi_hat = (np.asarray(a, dtype=np.float64) for a in (y, w, mu0_hat, mu1_hat, pi_hat))
    if clip is not None:
        pi_hat = clip_propensity(pi_hat, clip)
    if np.any(pi_hat <= 0.0) or np.any(pi_hat >= 1.0):
        raise ValueError("propensities must lie strictly inside (0, 1)")
    a1 = w / pi_hat
    a0 = (1.0 - w) / (1.0 - pi_hat)
    return (a1 - a0) * y + (1.0 - a1) * mu1_hat - (1.0 - a0) * mu0_hat


# ---------------------------------------------------------------- HTCE learners


def _net_spec(kind: str, d_shared: int, source: Dataset, target: Dataset, output: str = "linear",
              arch: dict | None = None) -> NetSpec:
    if kind == "tarnet":
        n_layers = HTCE["tarnet"]["stack_layers"]
    else:
        n_layers = HTCE["t"]["stack_layers"]
    kw = dict(
        kind=kind,
        d_shared=d_shared,
        d_private_source=source.x.shape[1] - d_shared,
        d_private_target=target.x.shape[1] - d_shared,
        encoder_units=HTCE["encoders"]["units"],
        subspace_units=HTCE["t"]["subspace_units"],
        n_layers=n_layers,
        tower_layers=HTCE["tarnet"]["towers"]["layers"],
        tower_units=HTCE["tarnet"]["towers"]["units"],
        output=output,
    )
    if arch:
        kw.update({k: v for k, v in arch.items() if k in kw and k not in ("kind", "output")})
    return NetSpec(**kw)


def _train_net(
    net: HTCENet,
    train: dict[str, tuple[np.ndarray, np.ndarray | None, np.ndarray]],
    val: tuple[np.ndarray, np.ndarray | None, np.ndarray],
    loss: str,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> TrainHistory:
    """Fit ``net`` on per-domain ``(x, w, target)`` arrays; validate on target."""
    xv, wv, tv = val

    def step(idx):
        batches = {
            dom: (x[idx[dom]], None if w is None else w[idx[dom]], t[idx[dom]])
            for dom, (x, w, t) in train.items()
        }
        return net.step_loss(batches, loss=loss, orth_weight=cfg.orth_weight)["total"]

    def validate():
        logit, _ = net.forward(xv, wv, "target")
        if loss == "bce":
            return bce_with_logits(logit, tv)[0]
        pred = sigmoid(logit) if net.spec.output == "sigmoid" else logit
        return loss_mse(pred, tv)[0]

    return fit(net, {d: len(v[0]) for d, v in train.items()}, step, validate, cfg, rng)


@dataclass
class HTCELearner:
    variant: str
    nets: dict[str, HTCENet]
    history: dict[str, TrainHistory]
    ablation: Ablation = field(default_factory=Ablation)
    trained: bool = True

    def predict_mu(self, x: np.ndarray, domain: str = "target") -> tuple[np.ndarray, np.ndarray]:
        po = self.nets["po"]
        return po.predict(x, domain, 0), po.predict(x, domain, 1)

    def predict_cate(self, x: np.ndarray, domain: str = "target") -> np.ndarray:
        if not self.trained:
            raise RuntimeError("model is not trained")
        if self.variant == "dr":
            tau = self.nets["tau"].predict(x, domain)
        else:
            mu0, mu1 = self.predict_mu(x, domain)
            tau = mu1 - mu0
        return check_finite(tau, "CATE prediction")

    def predict_propensity(self, x: np.ndarray, domain: str = "target") -> np.ndarray:
        return self.nets["prop"].predict(x, domain)

    def manifest(self) -> dict:
        return {
            "kind": "htce",
            "variant": self.variant,
            "architecture_version": ARCHITECTURE_VERSION,
            "ablation": asdict(self.ablation),
            "nets": {k: net_manifest(v) for k, v in self.nets.items()},
        }


def _factual(ds: Dataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return ds.x, ds.w, ds.y


def train_htce(
    variant: str,
    source: Dataset | SplitDataset,
    target: SplitDataset,
    cfg: TrainConfig | None = None,
    ablation: Ablation | str | None = None,
    arch: dict | None = None,
    oracle_nuisances: bool = False,
) -> HTCELearner:
    """Train one HTCE learner on a source domain and a split target domain.

    ``source`` may be a plain Dataset (all of it is used for training) or a
    SplitDataset (its training slice is used).  ``arch`` overrides widths and
    depths, mostly for tests.  ``oracle_nuisances`` (DR only) replaces the
    first stage with the simulator's true mu0, mu1 and pi.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    cfg = cfg or TrainConfig()
    if isinstance(ablation, str):
        ablation = Ablation.named(ablation)
    ablation = ablation or Ablation()
    src = _as_train(source)
    tr, va = target.train, target.validation
    if len(src) == 0 or len(tr) == 0 or len(va) == 0:
        raise ValueError("source, target train and target validation must be nonempty")
    d_shared = _d_shared(src, tr, va)
    rng = np.random.default_rng(cfg.seed)
    if not (variant == "dr" and oracle_nuisances):
        _check_arms({"source": src, "target": tr})

    if variant == "dr":
        return _train_htce_dr(src, target, cfg, ablation, arch, d_shared, rng, oracle_nuisances)

    kind = {"s": "s", "t": "t", "tarnet": "tarnet"}[variant]
    net = HTCENet(_net_spec(kind, d_shared, src, tr, arch=arch), rng, ablation)
    hist = _train_net(net, {"source": _factual(src), "target": _factual(tr)}, _factual(va), "mse", cfg, rng)
    return HTCELearner(variant, {"po": net}, {"po": hist}, ablation)


def _train_htce_dr(src, target, cfg, ablation, arch, d_shared, rng, oracle):
    tr, va = target.train, target.validation
    nets: dict[str, HTCENet] = {}
    hist: dict[str, TrainHistory] = {}

    if oracle:
        def nuisances(ds: Dataset, domain: str):
            return ds.mu0, ds.mu1, ds.pi
    else:
        po = HTCENet(_net_spec("t", d_shared, src, tr, arch=arch), rng, ablation)
        hist["po"] = _train_net(po, {"source": _factual(src), "target": _factual(tr)}, _factual(va), "mse", cfg, rng)
        prop = HTCENet(_net_spec("single", d_shared, src, tr, output="sigmoid", arch=arch), rng, ablation)
        hist["prop"] = _train_net(
            prop,
            {"source": (src.x, None, src.w.astype(np.float64)), "target": (tr.x, None, tr.w.astype(np.float64))},
            (va.x, None, va.w.astype(np.float64)), "bce", cfg, rng,
        )
        nets["po"], nets["prop"] = po, prop

        def nuisances(ds: Dataset, domain: str):
            return po.predict(ds.x, domain, 0), po.predict(ds.x, domain, 1), prop.predict(ds.x, domain)

    pseudo = {}
    for name, ds, domain in (("source", src, "source"), ("train", tr, "target"), ("val", va, "target")):
        mu0, mu1, pi = nuisances(ds, domain)
        pseudo[name] = dr_pseudo_outcome(ds.y, ds.w, mu0, mu1, pi)
        if name != "val" and not oracle:
            clipped = clip_propensity(pi)
            if np.all((clipped == PROPENSITY_CLIP) | (clipped == 1.0 - PROPENSITY_CLIP)):
                raise PropensityCollapseError(f"all {domain} propensities sit on the clip bounds")

    tau_net = HTCENet(_net_spec("single", d_shared, src, tr, arch=arch), rng, ablation)
    hist["tau"] = _train_net(
        tau_net,
        {"source": (src.x, None, pseudo["source"]), "target": (tr.x, None, pseudo["train"])},
        (va.x, None, pseudo["val"]), "mse", cfg, rng,
    )
    nets["tau"] = tau_net
    return HTCELearner("dr", nets, hist, ablation)


def train_htce_s(source, target, cfg=None, **kw) -> HTCELearner:
    return train_htce("s", source, target, cfg, **kw)


def train_htce_t(source, target, cfg=None, **kw) -> HTCELearner:
    return train_htce("t", source, target, cfg, **kw)


def train_htce_dr(source, target, cfg=None, **kw) -> HTCELearner:
    return train_htce("dr", source, target, cfg, **kw)


def train_htce_tarnet(source, target, cfg=None, **kw) -> HTCELearner:
    return train_htce("tarnet", source, target, cfg, **kw)


# ---------------------------------------------------------------- single-domain baselines


class BaselineNet(LayerCollection):
    """Single-domain CATE networks: S, T (two MLPs) or TARNet (trunk + two heads)."""

    def __init__(self, kind: str, d_in: int, rng: np.random.Generator, output: str = "linear",
                 hidden: list[int] | None = None, rep: list[int] | None = None, heads: list[int] | None = None):
        self.kind = kind
        self.output = output
        self.d_in = d_in
        self.trunk: MLP | None = None
        if kind == "s":
            self.heads = [MLP.create(d_in + 1, hidden or BASELINE["s"]["hidden"], "relu", rng, 1, output)]
        elif kind == "t":
            h = hidden or BASELINE["t"]["hidden"]
            self.heads = [MLP.create(d_in, h, "relu", rng, 1, output) for _ in range(2)]
        elif kind == "tarnet":
            r = rep or BASELINE["tarnet"]["representation"]
            self.trunk = MLP.create(d_in, r, "relu", rng)
            self.heads = [MLP.create(r[-1], heads or BASELINE["tarnet"]["heads"], "relu", rng, 1, output) for _ in range(2)]
        elif kind == "single":
            self.heads = [MLP.create(d_in, hidden or BASELINE["dr"]["hidden"], "relu", rng, 1, output)]
        else:
            raise ValueError(f"unknown baseline kind {kind!r}")

    def named_layers(self) -> dict[str, DenseLayer]:
        out = {}
        if self.trunk is not None:
            out.update(self.trunk.named_layers("trunk"))
        for a, head in enumerate(self.heads):
            out.update(head.named_layers(f"head{a}"))
        return out

    def forward(self, x: np.ndarray, w: np.ndarray | None):
        """Output (pre-activation for sigmoid heads) of the factual arm per row."""
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise ValueError(f"expected {self.d_in} columns, got {x.shape}")
        if self.kind in ("s", "single"):
            inp = x if self.kind == "single" else np.hstack([x, np.asarray(w, dtype=np.float64).reshape(-1, 1)])
            out, c = self._head_logits(0, inp)
            return out, [(0, None, c)]
        h, trunk_cache = (x, None) if self.trunk is None else self.trunk.forward(x)
        w = np.asarray(w).astype(np.int64)
        out = np.empty(len(x))
        caches = []
        for a in (0, 1):
            idx = np.flatnonzero(w == a)
            if len(idx):
                out[idx], c = self._head_logits(a, h[idx])
                caches.append((a, idx, c))
        return out, [("trunk", trunk_cache, h.shape[1])] + caches

    def _head_logits(self, a: int, inp: np.ndarray):
        # run the sigmoid head's last layer as linear so BCE can work on logits
        head = self.heads[a]
        caches = []
        h = inp
        for layer in head.layers[:-1]:
            h, c = layer.forward(h)
            caches.append(c)
        last = head.layers[-1]
        pre = h @ last.weights + last.bias
        caches.append(h)
        return check_finite(pre[:, 0], "baseline output"), caches

    def _head_backward(self, a: int, caches, dlogit: np.ndarray) -> np.ndarray:
        head = self.heads[a]
        last = head.layers[-1]
        h = caches[-1]
        d = dlogit.reshape(-1, 1)
        last.grad_w += h.T @ d
        last.grad_b += d.sum(axis=0)
        g = d @ last.weights.T
        for layer, c in zip(reversed(head.layers[:-1]), reversed(caches[:-1])):
            g = layer.backward(c, g)
        return g

    def backward(self, caches, dlogit: np.ndarray) -> None:
        if caches[0][0] == "trunk":
            _, trunk_cache, width = caches[0]
            dh = np.zeros((len(dlogit), width))
            for a, idx, c in caches[1:]:
                dh[idx] += self._head_backward(a, c, dlogit[idx])
            if self.trunk is not None:
                self.trunk.backward(trunk_cache, dh)
        else:
            self._head_backward(0, caches[0][2], dlogit)

    def predict(self, x: np.ndarray, arm: int | None = None) -> np.ndarray:
        w = None if arm is None else np.full(len(x), arm)
        logit, _ = self.forward(x, w)
        return sigmoid(logit) if self.output == "sigmoid" else logit


def _train_baseline_net(net: BaselineNet, train, val, loss: str, cfg: TrainConfig, rng) -> TrainHistory:
    x, w, t = train
    xv, wv, tv = val

    def objective(logit, target):
        if loss == "bce":
            return bce_with_logits(logit, target)
        return loss_mse(logit, target)

    def step(idx):
        i = idx["train"]
        logit, caches = net.forward(x[i], None if w is None else w[i])
        value, dlogit = objective(logit, t[i])
        net.backward(caches, dlogit)
        return value

    def validate():
        logit, _ = net.forward(xv, wv)
        return objective(logit, tv)[0]

    return fit(net, {"train": len(x)}, step, validate, cfg, rng)


@dataclass
class BaselineLearner:
    variant: str
    mode: str
    columns: np.ndarray
    nets: dict[str, BaselineNet]
    history: dict[str, TrainHistory]
    trained: bool = True
    n_features: int | None = None  # width of the target covariates it was trained on

    def _x(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or (self.n_features is not None and x.shape[1] != self.n_features):
            raise ValueError(f"expected target covariates with {self.n_features} columns, got {x.shape}")
        return x[:, self.columns]

    def predict_cate(self, x: np.ndarray) -> np.ndarray:
        if not self.trained:
            raise RuntimeError("model is not trained")
        xs = self._x(x)
        if self.variant == "dr":
            tau = self.nets["tau"].predict(xs)
        else:
            po = self.nets["po"]
            tau = po.predict(xs, 1) - po.predict(xs, 0)
        return check_finite(tau, "CATE prediction")

    def manifest(self) -> dict:
        return {
            "kind": "baseline",
            "variant": self.variant,
            "mode": self.mode,
            "architecture_version": ARCHITECTURE_VERSION,
            "columns": self.columns.tolist(),
            "n_features": self.n_features,
            "nets": {
                k: {"net_kind": v.kind, "d_in": v.d_in, "output": v.output,
                    "params": {n: a.tolist() for n, a in v.snapshot().items()}}
                for k, v in self.nets.items()
            },
        }


def train_baseline(
    target: SplitDataset,
    variant: str,
    mode: str = "target",
    cfg: TrainConfig | None = None,
    source: Dataset | SplitDataset | None = None,
    arch: dict | None = None,
) -> BaselineLearner:
    """Single-domain CATE learner on the target training split.

    ``mode="shared"`` keeps only the shared feature block; if ``source`` is
    given, its rows (restricted to the shared block) are pooled into training.
    Early stopping always uses the target validation split.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if mode not in BASELINE_MODES:
        raise ValueError(f"unknown baseline mode {mode!r}")
    cfg = cfg or TrainConfig()
    arch = arch or {}
    rng = np.random.default_rng(cfg.seed)
    tr, va = target.train, target.validation
    if len(tr) == 0 or len(va) == 0:
        raise ValueError("target train and validation must be nonempty")
    if mode == "shared":
        cols = np.arange(_d_shared(tr, va))
        train_ds = tr.subset(slice(None))
        train_ds.x = tr.x[:, cols]
        if source is not None:
            src = _as_train(source)
            if src.d_shared != len(cols):
                raise ValueError("source and target disagree on the shared block")
            pooled = src.subset(slice(None))
            pooled.x = src.x[:, cols]
            train_ds = Dataset.concat([train_ds, pooled])
    else:
        if source is not None:
            raise ValueError("target-only baselines do not use source data")
        cols = np.arange(tr.x.shape[1])
        train_ds = tr
    _check_arms({"train": train_ds})
    xv = va.x[:, cols]
    d_in = len(cols)
    hidden = arch.get("hidden")
    nets: dict[str, BaselineNet] = {}
    hist: dict[str, TrainHistory] = {}
    factual = (train_ds.x, train_ds.w, train_ds.y)
    factual_val = (xv, va.w, va.y)

    if variant in ("s", "t", "tarnet"):
        net = BaselineNet(variant, d_in, rng, hidden=hidden, rep=arch.get("rep"), heads=arch.get("heads"))
        hist["po"] = _train_baseline_net(net, factual, factual_val, "mse", cfg, rng)
        nets["po"] = net
        return BaselineLearner(variant, mode, cols, nets, hist, n_features=tr.x.shape[1])

    po = BaselineNet("t", d_in, rng, hidden=hidden)
    hist["po"] = _train_baseline_net(po, factual, factual_val, "mse", cfg, rng)
    prop = BaselineNet("single", d_in, rng, output="sigmoid", hidden=hidden)
    w_f = train_ds.w.astype(np.float64)
    hist["prop"] = _train_baseline_net(prop, (train_ds.x, None, w_f), (xv, None, va.w.astype(np.float64)), "bce", cfg, rng)

    def pseudo(x, w, y):
        pi = prop.predict(x)
        return dr_pseudo_outcome(y, w, po.predict(x, 0), po.predict(x, 1), pi), pi

    y_tr, pi_tr = pseudo(train_ds.x, train_ds.w, train_ds.y)
    clipped = clip_propensity(pi_tr)
    if np.all((clipped == PROPENSITY_CLIP) | (clipped == 1.0 - PROPENSITY_CLIP)):
        raise PropensityCollapseError("all propensities sit on the clip bounds")
    y_va, _ = pseudo(xv, va.w, va.y)
    tau = BaselineNet("single", d_in, rng, hidden=hidden)
    hist["tau"] = _train_baseline_net(tau, (train_ds.x, None, y_tr), (xv, None, y_va), "mse", cfg, rng)
    nets.update(po=po, prop=prop, tau=tau)
    return BaselineLearner("dr", mode, cols, nets, hist, n_features=tr.x.shape[1])


# ---------------------------------------------------------------- prediction and persistence


def predict_cate(model: HTCELearner | BaselineLearner, x_target: np.ndarray) -> np.ndarray:
    return model.predict_cate(x_target)


def save_model(model: HTCELearner | BaselineLearner, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.manifest()))


def load_model(path: str | Path) -> HTCELearner | BaselineLearner:
    m = json.loads(Path(path).read_text())
    if m.get("architecture_version") != ARCHITECTURE_VERSION:
        raise ValueError(f"model was saved with architecture version {m.get('architecture_version')}")
    if m["kind"] == "htce":
        nets = {k: net_from_manifest(v) for k, v in m["nets"].items()}
        return HTCELearner(m["variant"], nets, {}, Ablation(**m["ablation"]))
    if m["kind"] == "baseline":
        nets = {}
        for k, v in m["nets"].items():
            params = {n: np.asarray(a, dtype=np.float64) for n, a in v["params"].items()}
            # rebuild with the saved layer widths
            net = BaselineNet(v["net_kind"], v["d_in"], np.random.default_rng(0), output=v["output"],
                              **_baseline_shapes(v["net_kind"], params))
            net.restore(params)
            nets[k] = net
        return BaselineLearner(m["variant"], m["mode"], np.asarray(m["columns"]), nets, {},
                               n_features=m.get("n_features"))
    raise ValueError(f"unknown model kind {m.get('kind')!r}")


def _baseline_shapes(kind: str, params: dict[str, np.ndarray]) -> dict:
    def widths(prefix):
        ws = []
        i = 0
        while f"{prefix}.{i}.W" in params:
            ws.append(params[f"{prefix}.{i}.W"].shape[1])
            i += 1
        return ws

    if kind == "tarnet":
        return {"rep": widths("trunk"), "heads": widths("head0")[:-1]}
    return {"hidden": widths("head0")[:-1]}


__all__ = [
    "ArmMissingError",
    "BaselineLearner",
    "HTCELearner",
    "NonFiniteError",
    "PropensityCollapseError",
    "TrainConfig",
    "dr_pseudo_outcome",
    "fit",
    "predict_cate",
    "train_baseline",
    "train_htce",
    "train_htce_dr",
    "train_htce_s",
    "train_htce_t",
    "train_htce_tarnet",
]
