"""Small pre-LN transformer encoder with a frozen backbone and LoRA adapters
on the attention query/value projections.

The backbone (embeddings, attention, FFN, layernorms) never trains in the
federated phase; only the rank-r adapters and the classifier head do.
Adapters start at exactly zero effect (B = 0).
"""

from dataclasses import dataclass

import numpy as np

from .. import numkit as nk
from ..numkit.optim import OptimizerState, adamw_step
from ..textdata import PAD_ID, make_batches
from .params import ParamGroup, ParamSet, StructuralError


@dataclass(frozen=True)
class LoraFormerConfig:
    num_classes: int
    layers: int = 2
    d_model: int = 64
    heads: int = 4
    ffn_dim: int = 128
    lora_rank: int = 8
    lora_scaling: float = 32.0
    lora_dropout: float = 0.1
    backbone_mode: str = "random-frozen"  # or "pretrained-frozen"

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ValueError("d_model must be divisible by heads")
        if self.lora_rank < 1:
            raise ValueError("lora_rank must be >= 1")
        if self.backbone_mode not in ("random-frozen", "pretrained-frozen"):
            raise ValueError(f"unknown backbone mode {self.backbone_mode!r}")


def _backbone_groups(cfg: LoraFormerConfig, vocab_size: int, max_seq_len: int, seed: int):
    def init(name, shape, std=None):
        rng = nk.derive(seed, "init", name)
        std = std if std is not None else (2.0 / sum(shape)) ** 0.5
        return ParamGroup(name, nk.Tensor(rng.normal(0, std, shape)), False, False)

    def affine(name, dim):
        return [ParamGroup(f"{name}.gain", nk.Tensor(np.ones(dim)), False, False),
                ParamGroup(f"{name}.bias", nk.Tensor(np.zeros(dim)), False, False)]

    d = cfg.d_model
    groups = [init("tok_emb", (vocab_size, d), std=0.02),
              init("pos_emb", (max_seq_len, d), std=0.02)]
    for i in range(cfg.layers):
        p = f"layer{i}"
        groups += affine(f"{p}.ln1", d)
        for proj in ("q", "k", "v", "o"):
            groups.append(init(f"{p}.attn.w{proj}", (d, d)))
            groups.append(ParamGroup(f"{p}.attn.b{proj}", nk.Tensor(np.zeros(d)), False, False))
        groups += affine(f"{p}.ln2", d)
        groups.append(init(f"{p}.ffn.w1", (d, cfg.ffn_dim)))
        groups.append(ParamGroup(f"{p}.ffn.b1", nk.Tensor(np.zeros(cfg.ffn_dim)), False, False))
        groups.append(init(f"{p}.ffn.w2", (cfg.ffn_dim, d)))
        groups.append(ParamGroup(f"{p}.ffn.b2", nk.Tensor(np.zeros(d)), False, False))
    groups += affine("ln_f", d)
    return groups


def _adapter_groups(cfg: LoraFormerConfig, seed: int):
    groups = []
    for i in range(cfg.layers):
        for proj in ("q", "v"):
            name = f"layer{i}.attn.{proj}_lora"
            a = nk.derive(seed, "init", f"{name}.A").normal(0, 0.02, (cfg.lora_rank, cfg.d_model))
            groups.append(ParamGroup(f"{name}.A", nk.Tensor(a), True, True))
            groups.append(ParamGroup(f"{name}.B", nk.Tensor(np.zeros((cfg.d_model, cfg.lora_rank))),
                                     True, True))
    return groups


def _head_groups(cfg: LoraFormerConfig):
    return [ParamGroup("head.weight", nk.Tensor(np.zeros((cfg.d_model, cfg.num_classes))), True, False),
            ParamGroup("head.bias", nk.Tensor(np.zeros(cfg.num_classes)), True, False)]


def build_loraformer(cfg: LoraFormerConfig, vocab_size: int, max_seq_len: int, seed: int,
                     adapter_seed: int = None):
    """Returns (ParamSet, forward).  Backbone frozen; adapters + head trainable."""
    adapter_seed = seed if adapter_seed is None else adapter_seed
    groups = (_backbone_groups(cfg, vocab_size, max_seq_len, seed)
              + _adapter_groups(cfg, adapter_seed) + _head_groups(cfg))
    return ParamSet(groups, "loraformer"), make_forward(cfg)


def make_forward(cfg: LoraFormerConfig):
    scaling = cfg.lora_scaling / cfg.lora_rank
    keep = 1.0 - cfg.lora_dropout

    def projection(leaves, x, prefix, letter, train, rng):
        out = nk.add(nk.matmul(x, leaves[f"{prefix}.w{letter}"]), leaves[f"{prefix}.b{letter}"])
        lora = f"{prefix}.{letter}_lora"
        if f"{lora}.A" in leaves:
            path = nk.dropout(x, keep, rng, train=train) if keep < 1.0 else x
            delta = nk.matmul(nk.matmul(path, nk.transpose_last2(leaves[f"{lora}.A"])),
                              nk.transpose_last2(leaves[f"{lora}.B"]))
            out = nk.add(out, nk.scale(delta, scaling))
        return out

    def forward(params: ParamSet, token_ids, train: bool = False, rng=None,
                head: str = "head", return_pooled: bool = False):
        leaves = {g.name: nk.leaf(g.tensor.data, name=g.name, trainable=g.trainable)
                  for g in params}
        ids = np.asarray(token_ids)
        batch, seq = ids.shape
        pad_mask = ids != PAD_ID
        pos_ids = np.broadcast_to(np.arange(seq), (batch, seq))
        h = nk.add(nk.embedding_lookup(leaves["tok_emb"], ids),
                   nk.embedding_lookup(leaves["pos_emb"], pos_ids))
        dh = cfg.d_model // cfg.heads

        def split_heads(x):
            return nk.transpose(nk.reshape(x, (batch, seq, cfg.heads, dh)), (0, 2, 1, 3))

        for i in range(cfg.layers):
            p = f"layer{i}"
            a_in = nk.layernorm(h, leaves[f"{p}.ln1.gain"], leaves[f"{p}.ln1.bias"])
            q = projection(leaves, a_in, f"{p}.attn", "q", train, rng)
            k = nk.add(nk.matmul(a_in, leaves[f"{p}.attn.wk"]), leaves[f"{p}.attn.bk"])
            v = projection(leaves, a_in, f"{p}.attn", "v", train, rng)
            attn = nk.scaled_dot_attention(split_heads(q), split_heads(k), split_heads(v),
                                           key_mask=pad_mask[:, None, :])
            merged = nk.reshape(nk.transpose(attn, (0, 2, 1, 3)), (batch, seq, cfg.d_model))
            h = nk.add(h, nk.add(nk.matmul(merged, leaves[f"{p}.attn.wo"]), leaves[f"{p}.attn.bo"]))
            f_in = nk.layernorm(h, leaves[f"{p}.ln2.gain"], leaves[f"{p}.ln2.bias"])
            ffn = nk.matmul(nk.gelu(nk.add(nk.matmul(f_in, leaves[f"{p}.ffn.w1"]),
                                           leaves[f"{p}.ffn.b1"])),
                            leaves[f"{p}.ffn.w2"])
            h = nk.add(h, nk.add(ffn, leaves[f"{p}.ffn.b2"]))
        h = nk.layernorm(h, leaves["ln_f.gain"], leaves["ln_f.bias"])
        pooled = nk.masked_mean_pool(h, pad_mask.astype(np.float64))
        if return_pooled:
            return pooled
        return nk.add(nk.matmul(pooled, leaves[f"{head}.weight"]), leaves[f"{head}.bias"])

    return forward


def merge_lora(params: ParamSet, cfg: LoraFormerConfig) -> ParamSet:
    """Fold adapters into the frozen projections: W' = W + (scale) (B A)^T."""
    if params.model_kind != "loraformer":
        raise StructuralError("merge_lora requires a loraformer ParamSet")
    if params.lora_size() == 0:
        raise StructuralError("adapters already merged")
    scaling = cfg.lora_scaling / cfg.lora_rank
    groups = []
    for g in params:
        if g.lora:
            continue
        m = _merge_target(g.name)
        if m is not None and params.has(f"{m}.A"):
            a = params.get(f"{m}.A").tensor.data
            b = params.get(f"{m}.B").tensor.data
            merged = g.tensor.data + scaling * (b @ a).T
            groups.append(ParamGroup(g.name, nk.Tensor(merged), g.trainable, False))
        else:
            groups.append(g)
    return ParamSet(groups, "loraformer")


def _merge_target(name: str):
    # layerN.attn.wq -> layerN.attn.q_lora ; likewise for wv
    if name.endswith(".attn.wq"):
        return name[: -len("wq")] + "q_lora"
    if name.endswith(".attn.wv"):
        return name[: -len("wv")] + "v_lora"
    return None


class DisjointnessError(ValueError):
    """Proxy pretraining corpus overlaps the target dataset."""


def pretrain_backbone(params: ParamSet, cfg: LoraFormerConfig, proxy_dataset, steps: int,
                      seed: int, target_dataset=None, lr: float = 1e-3,
                      batch_size: int = 32) -> ParamSet:
    """Train the backbone centrally on a disjoint proxy corpus with a throwaway
    head, then freeze it again.  Adapters and the real head are untouched."""
    if target_dataset is not None:
        target_docs = {(d.label, d.tokens) for d in target_dataset.train + target_dataset.test}
        for d in proxy_dataset.train:
            if (d.label, d.tokens) in target_docs:
                raise DisjointnessError("proxy corpus shares documents with the target dataset")
    if steps == 0:
        return params.copy()

    forward = make_forward(cfg)
    # backbone trainable for the proxy phase; adapters dropped (their delta is
    # zero at init and they must not absorb proxy gradients)
    work_groups = [ParamGroup(g.name, g.tensor, True, False)
                   for g in params if not g.lora and not g.name.startswith("head.")]
    proxy_head = [
        ParamGroup("proxy_head.weight",
                   nk.Tensor(np.zeros((cfg.d_model, proxy_dataset.num_classes))), True, False),
        ParamGroup("proxy_head.bias", nk.Tensor(np.zeros(proxy_dataset.num_classes)), True, False),
    ]
    work = ParamSet(work_groups + proxy_head, "loraformer")

    state = OptimizerState("adamw", lr=lr, weight_decay=0.01)
    done = 0
    epoch = 0
    while done < steps:
        batches = make_batches(proxy_dataset.train, batch_size,
                               nk.sub_seed(seed, "pretrain-epoch", epoch),
                               proxy_dataset.max_seq_len)
        for batch in batches:
            if done >= steps:
                break
            rng = nk.derive(seed, "pretrain-dropout", done)
            logits = forward(work, batch.token_ids, train=True, rng=rng, head="proxy_head")
            loss = nk.softmax_cross_entropy(logits, batch.labels)
            grads = nk.backward(loss)
            work = work.with_tensors(adamw_step(state, work.trainable_dict(), grads))
            done += 1
        epoch += 1

    trained = {g.name: work.get(g.name).tensor for g in params
               if not g.lora and not g.name.startswith("head.")}
    return params.with_tensors(trained)
