"""Training loop, evaluation, ablation sweeps, and run persistence.

Each epoch refreshes the aging/base schedules, re-derives pseudo-labels
with semi-supervised k-means on the current embeddings, then walks
shuffled two-view batches through the full loss.  Deterministic mode is
the default: every random stream derives from the run seed, so equal
(config, seed, backend) reproduce byte-identical metrics files.
"""

from __future__ import annotations

import dataclasses
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import data as datamod
from . import heads, losses, trees
from .autodiff import Tensor
from .clustering import GcdMetrics, gcd_accuracy, kmeans, ss_kmeans
from .losses import LossParts, LossWeights, loss_final
from .nn import (MomentumSGD, ParamStore, Layer, grad_result, init_mlp,
                 mlp_apply, mlp_forward)

CHECKPOINT_VERSION = "sieve-ckpt-1"


def desk_loss_weights() -> LossWeights:
    """Loss coefficients retuned for the small synthetic benchmark.

    The published defaults assume backbone-scale gradients; at desk scale
    the measured length-pressure-to-contrastive-defense ratio is ~100x
    larger, so the length coefficient comes down and the mask binarity
    and code-supervision shares go up (both inside the published sweep
    ranges).  ``LossWeights()`` keeps the published values.
    """
    return LossWeights(delta=0.002, mu=0.1, lambda_code=0.5)


@dataclass
class RunConfig:
    # data: synthetic generator or an embedding file
    embedding_path: str | None = None
    depth: int = 3
    per_leaf: int = 20
    dim: int = 64
    noise_sigma: float = 0.05
    level_scale: float = 0.7
    known_class_frac: float = 0.5
    labeled_frac: float = 0.5
    # model
    code_len: int = 12
    feature_hidden: int = 64
    feature_dim: int = 32
    head_hidden: int = 32
    # schedules
    n_epochs: int = 60
    batch_size: int = 32
    a_start: float = 1.0
    a_max: float = 10.0
    # optimizer
    lr: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 5e-4
    cosine_lr: bool = True
    # loss weights (desk profile; paper_profile() restores published values)
    weights: LossWeights = field(default_factory=desk_loss_weights)
    # augmentation views
    sigma_aug: float = 0.05
    drop_frac: float = 0.05
    # bookkeeping
    seed: int = 0
    eval_every: int = 0  # 0 = final only
    checkpoint_every: int = 0
    eval_space: str = "code"  # "code" | "feature"
    code_embed_mode: str = "vector"  # "vector" | "scalar"
    pseudo_label_space: str = "feature"
    deterministic: bool = True
    out_dir: str | None = None

    def __post_init__(self):
        if self.code_len < 1 or self.code_len > 24:
            raise ValueError("code_len must lie in [1, 24] (base^k powers stay bounded)")
        if self.eval_space not in ("code", "feature"):
            raise ValueError(f"unknown eval_space {self.eval_space!r}")
        if self.pseudo_label_space not in ("code", "feature"):
            raise ValueError(f"unknown pseudo_label_space {self.pseudo_label_space!r}")

    @classmethod
    def paper_profile(cls, **overrides) -> "RunConfig":
        """Published profile: 200 epochs, batch 128, published loss weights."""
        base = dict(n_epochs=200, batch_size=128, lr=0.1, weights=LossWeights())
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        if "weights" in d and isinstance(d["weights"], dict):
            d["weights"] = LossWeights(**d["weights"])
        return cls(**d)


class SieveModel:
    """Feature extractor plus the three heads, with the eval-time schedule."""

    NETS = ("feature", "code", "mask", "cat")

    def __init__(self, feature: ParamStore, code: ParamStore, mask: ParamStore,
                 cat: ParamStore, schedule: heads.TrainSchedule,
                 known_classes: list[int], code_embed_mode: str = "vector"):
        self.feature = feature
        self.code = code
        self.mask = mask
        self.cat = cat
        self.schedule = schedule
        self.known_classes = list(known_classes)
        self.code_embed_mode = code_embed_mode

    @classmethod
    def init(cls, cfg: RunConfig, input_dim: int, known_classes: list[int],
             rng: np.random.Generator) -> "SieveModel":
        mask_net = init_mlp([cfg.feature_dim, cfg.head_hidden, cfg.code_len], rng,
                            final_scale=0.3)
        # the masker must start near all-ones; a positive output bias keeps
        # every bit alive until the other heads have something to defend
        mask_net.layers[-1].bias[:] = 1.0
        return cls(
            feature=init_mlp([input_dim, cfg.feature_hidden, cfg.feature_dim], rng),
            code=init_mlp([cfg.feature_dim, cfg.head_hidden, cfg.code_len], rng),
            mask=mask_net,
            cat=init_mlp([cfg.code_len, cfg.head_hidden, len(known_classes)], rng),
            schedule=heads.TrainSchedule.at_epoch(0, max(cfg.n_epochs, 1),
                                                  cfg.a_start, cfg.a_max),
            known_classes=known_classes,
            code_embed_mode=cfg.code_embed_mode,
        )

    def stores(self) -> list[ParamStore]:
        return [self.feature, self.code, self.mask, self.cat]

    # --- eval-time embeddings (plain arrays) ---

    def feature_embed(self, x: np.ndarray) -> np.ndarray:
        return mlp_forward(self.feature, x)

    def _heads(self, x: np.ndarray):
        f = Tensor(self.feature_embed(x))
        return (
            heads.code_head(f, self.code, self.schedule),
            heads.mask_head(f, self.mask, self.schedule),
        )

    def code_embed(self, x: np.ndarray) -> np.ndarray:
        code, mask = self._heads(x)
        return heads.code_embedding(code, mask, self.schedule.base,
                                    self.code_embed_mode).data

    def harden_codes(self, x: np.ndarray) -> list[str]:
        code, mask = self._heads(x)
        out = heads.harden(code, mask)
        return [out] if isinstance(out, str) else out

    def embed(self, x: np.ndarray, space: str) -> np.ndarray:
        if space == "feature":
            return self.feature_embed(x)
        if space == "code":
            return self.code_embed(x)
        raise ValueError(f"unknown embedding space {space!r}")


@dataclass
class RunResult:
    history: list[dict]
    final_feature: GcdMetrics | None
    final_code: GcdMetrics | None
    baseline_feature: GcdMetrics | None
    baseline_code: GcdMetrics | None
    tree_purity: float | None
    checkpoint_path: str | None
    manifest: dict
    model: SieveModel
    dataset: datamod.HierDataset
    split: datamod.GcdSplit

    def metrics(self, space: str) -> GcdMetrics:
        return self.final_code if space == "code" else self.final_feature

    def baseline(self, space: str) -> GcdMetrics:
        return self.baseline_code if space == "code" else self.baseline_feature


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, model: SieveModel, cfg: RunConfig) -> None:
    arrays = {}
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "known_classes": model.known_classes,
        "schedule": {"a": model.schedule.a, "base": model.schedule.base,
                     "epoch": model.schedule.epoch, "n_epochs": model.schedule.n_epochs},
        "code_embed_mode": model.code_embed_mode,
        "activations": {},
    }
    for net_name in SieveModel.NETS:
        store: ParamStore = getattr(model, net_name)
        meta["activations"][net_name] = [lay.activation for lay in store.layers]
        for i, lay in enumerate(store.layers):
            arrays[f"{net_name}.{i}.weight"] = lay.weight
            arrays[f"{net_name}.{i}.bias"] = lay.bias
    np.savez(path, __meta__=np.frombuffer(
        json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path) -> tuple[SieveModel, RunConfig]:
    with np.load(path) as blob:
        if "__meta__" not in blob:
            raise ValueError(f"{path}: not a checkpoint (missing metadata)")
        meta = json.loads(bytes(blob["__meta__"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(
                f"{path}: checkpoint version {meta.get('version')!r} unsupported "
                f"(expected {CHECKPOINT_VERSION})"
            )
        nets = {}
        for net_name in SieveModel.NETS:
            acts = meta["activations"][net_name]
            layers = []
            for i, act in enumerate(acts):
                layers.append(Layer(
                    weight=np.array(blob[f"{net_name}.{i}.weight"]),
                    bias=np.array(blob[f"{net_name}.{i}.bias"]),
                    activation=act,
                ))
            nets[net_name] = ParamStore(layers)
    cfg = RunConfig.from_dict(meta["config"])
    sched = heads.TrainSchedule(**meta["schedule"])
    model = SieveModel(nets["feature"], nets["code"], nets["mask"], nets["cat"],
                       sched, meta["known_classes"], meta["code_embed_mode"])
    return model, cfg


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _load_data(cfg: RunConfig) -> tuple[datamod.HierDataset, datamod.GcdSplit]:
    if cfg.embedding_path:
        ds = datamod.load_embedding_file(cfg.embedding_path)
    else:
        ds = datamod.gen_hier_dataset(cfg.seed, cfg.depth, cfg.per_leaf, cfg.dim,
                                      cfg.noise_sigma, cfg.level_scale)
    split = datamod.gcd_split(ds, cfg.known_class_frac, cfg.labeled_frac,
                              seed=cfg.seed + 1)
    return ds, split


def _epoch_lr(cfg: RunConfig, epoch: int) -> float:
    if not cfg.cosine_lr or cfg.n_epochs <= 1:
        return cfg.lr
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * epoch / cfg.n_epochs))


def _two_views(xb: np.ndarray, seeds: np.ndarray, cfg: RunConfig):
    v1 = np.stack([datamod.augment(row, int(s[0]), cfg.sigma_aug, cfg.drop_frac)
                   for row, s in zip(xb, seeds)])
    v2 = np.stack([datamod.augment(row, int(s[1]), cfg.sigma_aug, cfg.drop_frac)
                   for row, s in zip(xb, seeds)])
    return v1, v2


def _pseudo_labels(model: SieveModel, ds, split, cfg: RunConfig,
                   seed: int) -> np.ndarray:
    emb = model.embed(ds.features, cfg.pseudo_label_space)
    labeled = {int(i): int(ds.labels[i]) for i in split.labeled_idx}
    res = ss_kmeans(emb, labeled, k=len(ds.classes), seed=seed)
    return res.assign


def batch_loss(model: SieveModel, v1: np.ndarray, v2: np.ndarray,
               true_labels: np.ndarray, pseudo: np.ndarray,
               schedule: heads.TrainSchedule, w: LossWeights,
               cat_index: dict) -> losses.LossBreakdown:
    """Build the full loss graph for one two-view batch.

    ``true_labels`` uses -1 for unlabeled rows; ``pseudo`` must cover every
    row.  ``cat_index`` maps known class ids to categorizer columns.
    """
    f1 = mlp_apply(model.feature, ad.as_tensor(v1))
    f2 = mlp_apply(model.feature, ad.as_tensor(v2))
    parts = LossParts()

    if w.alpha != 0.0:
        mixed_in = losses.loss_c_in(f1, f2, true_labels, w)
        parts.c_in_u, parts.c_in_s = mixed_in.unsup, mixed_in.sup

    need_codes = w.beta != 0.0 or w.delta != 0.0 or w.gamma != 0.0 \
        or w.zeta != 0.0 or w.mu != 0.0
    if need_codes:
        code1 = heads.code_head(f1, model.code, schedule)
        code2 = heads.code_head(f2, model.code, schedule)
        mask1 = heads.mask_head(f1, model.mask, schedule)
        mask2 = heads.mask_head(f2, model.mask, schedule)

        if w.beta != 0.0:
            emb1 = heads.code_embedding(code1, mask1, schedule.base, model.code_embed_mode)
            emb2 = heads.code_embedding(code2, mask2, schedule.base, model.code_embed_mode)
            stacked = ad.concat_rows([emb1, emb2])
            mixed_code = losses.loss_c_code(
                code1.bits, code2.bits, stacked, np.concatenate([pseudo, pseudo]), w
            )
            parts.c_code_u, parts.c_code_s = mixed_code.unsup, mixed_code.sup

        if w.delta != 0.0:
            both_masks = ad.concat_rows([mask1.soft_mask, mask2.soft_mask])
            parts.length = losses.loss_length(both_masks, schedule.base, w.p)

        if w.gamma != 0.0:
            lidx = np.flatnonzero(true_labels >= 0)
            if len(lidx):
                trunc = ad.concat_rows([
                    ad.gather_rows(heads.truncate(code1, mask1), lidx),
                    ad.gather_rows(heads.truncate(code2, mask2), lidx),
                ])
                logits = heads.categorizer(trunc, model.cat)
                y = np.array([cat_index[int(c)] for c in true_labels[lidx]] * 2)
                parts.cat = losses.loss_cat(logits, y)

        if w.zeta != 0.0:
            parts.code_cond = losses.loss_code_cond(ad.concat_rows([code1.bits, code2.bits]))
        if w.mu != 0.0:
            parts.mask_cond = losses.loss_mask_cond(
                ad.concat_rows([mask1.soft_mask, mask2.soft_mask]))

    return loss_final(parts, w)


def _mean_breakdown(records: list[losses.LossBreakdown]) -> dict:
    keys = [k for k in records[0].as_dict()]
    return {k: float(np.mean([r.as_dict()[k] for r in records])) for k in keys}


def kmeans_baseline(emb: np.ndarray, ds, split, seed: int = 0) -> GcdMetrics:
    """Plain k-means (no labeled anchors) scored on the unlabeled set."""
    res = kmeans(emb, k=len(ds.classes), init_seed=seed)
    return gcd_accuracy(res.assign, ds.labels, known_classes=_known_of(split),
                        labeled_idx=split.labeled_idx)


def _known_of(split) -> set:
    return set(int(c) for c in split.known_classes)


def evaluate(model: SieveModel, ds, split, seed: int = 0) -> dict[str, GcdMetrics]:
    """Semi-supervised k-means metrics on both embedding spaces."""
    out = {}
    labeled = {int(i): int(ds.labels[i]) for i in split.labeled_idx}
    for space in ("feature", "code"):
        emb = model.embed(ds.features, space)
        res = ss_kmeans(emb, labeled, k=len(ds.classes), seed=seed)
        out[space] = gcd_accuracy(res.assign, ds.labels,
                                  known_classes=_known_of(split),
                                  labeled_idx=split.labeled_idx)
    return out


def evaluate_checkpoint(path, embedding_path: str | None = None) -> dict[str, GcdMetrics]:
    """Reload a checkpoint and score it on its configured dataset."""
    model, cfg = load_checkpoint(path)
    if embedding_path:
        cfg.embedding_path = embedding_path
    ds, split = _load_data(cfg)
    if ds.dim != model.feature.layers[0].weight.shape[1]:
        raise ValueError(
            f"dataset dim {ds.dim} does not match checkpoint input dim "
            f"{model.feature.layers[0].weight.shape[1]}"
        )
    return evaluate(model, ds, split, seed=cfg.seed)


def train(cfg: RunConfig) -> RunResult:
    """Run the full training loop and final evaluation."""
    ds, split = _load_data(cfg)
    known = sorted(_known_of(split))
    cat_index = {c: i for i, c in enumerate(known)}

    init_ss = np.random.SeedSequence([cfg.seed, 104729])
    model = SieveModel.init(cfg, ds.dim, known, np.random.default_rng(init_ss))
    optimizer = MomentumSGD(cfg.lr, cfg.momentum, cfg.weight_decay)

    out_dir = _prepare_out_dir(cfg)
    metrics_fh = open(out_dir / "metrics.jsonl", "w") if out_dir else None

    true_labels = np.where(np.isin(np.arange(ds.n), split.labeled_idx),
                           ds.labels, -1)

    history: list[dict] = []
    w = cfg.weights
    need_pseudo = w.beta != 0.0 and w.lambda_code > 0.0
    ckpt_path = (out_dir / "checkpoint.npz") if out_dir else None
    if ckpt_path:
        save_checkpoint(ckpt_path, model, cfg)

    try:
        for epoch in range(cfg.n_epochs):
            schedule = heads.TrainSchedule.at_epoch(epoch, cfg.n_epochs,
                                                    cfg.a_start, cfg.a_max)
            model.schedule = schedule
            optimizer.lr = _epoch_lr(cfg, epoch)
            erng = np.random.default_rng([cfg.seed, 7919, epoch])

            pseudo = (_pseudo_labels(model, ds, split, cfg, seed=epoch)
                      if need_pseudo else ds.labels.copy())

            order = erng.permutation(ds.n)
            records = []
            for start in range(0, ds.n, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                if len(idx) < 2:
                    continue  # contrastive terms need negatives
                seeds = erng.integers(0, 2**62, size=(len(idx), 2))
                v1, v2 = _two_views(ds.features[idx], seeds, cfg)
                bd = batch_loss(model, v1, v2, true_labels[idx], pseudo[idx],
                                schedule, w, cat_index)
                ad.backward(bd.node)
                for store in model.stores():
                    optimizer.step(store, grad_result(bd.node, store).grads)
                records.append(bd)

            record = {"epoch": epoch, "a": schedule.a, "base": schedule.base,
                      "lr": optimizer.lr}
            record.update(_mean_breakdown(records) if records else {})
            if cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
                model.schedule = _eval_schedule(cfg)
                for space, m in evaluate(model, ds, split, seed=cfg.seed).items():
                    record[f"eval_{space}_acc_all"] = m.acc_all
                model.schedule = schedule
            history.append(record)
            if metrics_fh:
                metrics_fh.write(json.dumps(record, sort_keys=True) + "\n")
            if ckpt_path and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(out_dir / f"checkpoint_epoch{epoch + 1}.npz", model, cfg)
                save_checkpoint(ckpt_path, model, cfg)
    except (FloatingPointError, ValueError, RuntimeError) as exc:
        # non-finite loss or gradients: refuse the step, keep the last checkpoint
        if metrics_fh:
            metrics_fh.close()
        raise RuntimeError(
            f"training aborted at epoch {len(history)}: {exc}; "
            f"last good checkpoint retained" + (f" at {ckpt_path}" if ckpt_path else "")
        ) from exc

    model.schedule = _eval_schedule(cfg)
    finals = evaluate(model, ds, split, seed=cfg.seed)
    base_f = kmeans_baseline(model.embed(ds.features, "feature"), ds, split, seed=cfg.seed)
    base_c = kmeans_baseline(model.embed(ds.features, "code"), ds, split, seed=cfg.seed)
    report = trees.extract_learned_tree(model, ds)

    if ckpt_path:
        save_checkpoint(ckpt_path, model, cfg)
    manifest = {"version": CHECKPOINT_VERSION, "seed": cfg.seed, "config": cfg.to_dict()}
    if metrics_fh:
        metrics_fh.close()
    if out_dir:
        _write_summary(out_dir, finals, base_f, base_c, report.mean_purity)
        (out_dir / "tree.txt").write_text(report.text)

    return RunResult(
        history=history,
        final_feature=finals["feature"],
        final_code=finals["code"],
        baseline_feature=base_f,
        baseline_code=base_c,
        tree_purity=report.mean_purity,
        checkpoint_path=str(ckpt_path) if ckpt_path else None,
        manifest=manifest,
        model=model,
        dataset=ds,
        split=split,
    )


def _eval_schedule(cfg: RunConfig) -> heads.TrainSchedule:
    return heads.TrainSchedule.at_epoch(cfg.n_epochs, max(cfg.n_epochs, 1),
                                        cfg.a_start, cfg.a_max)


def _prepare_out_dir(cfg: RunConfig):
    if not cfg.out_dir:
        return None
    from pathlib import Path

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"version": CHECKPOINT_VERSION, "seed": cfg.seed, "config": cfg.to_dict()}
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return out


def _write_summary(out_dir, finals, base_f, base_c, purity) -> None:
    buf = io.StringIO()
    buf.write("space,acc_all,acc_known,acc_novel,kmeans_baseline_acc_all\n")
    for space, base in (("feature", base_f), ("code", base_c)):
        m = finals[space]
        buf.write(f"{space},{m.acc_all!r},{m.acc_known!r},{m.acc_novel!r},{base.acc_all!r}\n")
    buf.write(f"tree_purity,{purity!r},,,\n")
    (out_dir / "summary.csv").write_text(buf.getvalue())


# ---------------------------------------------------------------------------
# ablation
# ---------------------------------------------------------------------------

SWITCHES = {
    "c_in": "alpha",
    "c_code": "beta",
    "code_cond": "zeta",
    "length": "delta",
    "mask_cond": "mu",
    "cat": "gamma",
}


@dataclass
class AblationRow:
    disabled: tuple
    result: RunResult


def ablate(cfg: RunConfig, switch_rows) -> list[AblationRow]:
    """Re-train once per requested row with the named coefficients zeroed.

    Each row is an iterable of switch names (empty = full model); a bare
    string is treated as a single-switch row.
    """
    rows = []
    for row in switch_rows:
        names = (row,) if isinstance(row, str) else tuple(row)
        unknown = [n for n in names if n not in SWITCHES]
        if unknown:
            raise ValueError(f"unknown ablation switches {unknown}; "
                             f"valid: {sorted(SWITCHES)}")
        weights = dataclasses.replace(cfg.weights,
                                      **{SWITCHES[n]: 0.0 for n in names})
        sub = dataclasses.replace(cfg, weights=weights)
        if cfg.out_dir:
            tag = "full" if not names else "-".join(sorted(names))
            sub = dataclasses.replace(sub, out_dir=str(cfg.out_dir) + f"/ablate_{tag}")
        rows.append(AblationRow(disabled=names, result=train(sub)))
    return rows


def ablation_table(rows: list[AblationRow], space: str = "code") -> str:
    """CSV report, one line per row: switch states then the accuracy triple."""
    cols = list(SWITCHES)
    buf = io.StringIO()
    buf.write(",".join(cols) + ",acc_all,acc_known,acc_novel\n")
    for row in rows:
        states = ["off" if c in row.disabled else "on" for c in cols]
        m = row.result.metrics(space)
        buf.write(",".join(states) + f",{m.acc_all!r},{m.acc_known!r},{m.acc_novel!r}\n")
    return buf.getvalue()
