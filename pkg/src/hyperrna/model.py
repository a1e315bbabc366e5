"""Full encoder-decoder assembled from the embedding, HGNN and GVP parts."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as F
from .attention import embed_graph, init_scalar_pool, init_vector_attention
from .decoder import (
    DecoderContext,
    autoregressive_sample,
    decode_step,
    init_decoder,
    teacher_forced_logits,
)
from .errors import DimensionMismatch
from .featurize import GeometricGraph
from .hypergraph import build_hypergraph, encoder_forward, init_encoder


@dataclass
class ModelConfig:
    d_e: int = 128
    d_v: int = 16
    d_h: int = 16
    edge_scalar: int = 32
    heads: int = 3
    attn_layers: int = 1
    encoder_layers: int = 3
    decoder_layers: int = 3
    dropout: float = 0.1
    conv: str = "row"
    vector_attention: bool = True
    scalar_pool: bool = True
    mask_attn_knn: bool = False
    num_rbf: int = 24

    @property
    def block_widths(self) -> tuple[int, ...]:
        return (self.num_rbf,) * 4 + (self.d_e - 4 * self.num_rbf,)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name: f.type for f in fields(cls)}
        out = {}
        for key, value in d.items():
            if key not in known:
                continue
            default = getattr(cls, key)
            if isinstance(default, bool):
                out[key] = value if isinstance(value, bool) else str(value).lower() in ("1", "true", "yes")
            else:
                out[key] = type(default)(value)
        return cls(**out)


def init_params(config: ModelConfig, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    params = {}
    params.update(init_vector_attention(rng, config.d_v, config.heads, config.attn_layers))
    params.update(init_scalar_pool(rng, config.block_widths, config.d_e))
    params.update(init_encoder(rng, config.encoder_layers, config.d_e, config.d_v))
    params.update(init_decoder(rng, config.decoder_layers, config.d_e, config.d_v, config.d_h, config.edge_scalar))
    return params


class HyperRNAModel:
    def __init__(self, config: ModelConfig | None = None, params: dict | None = None, seed: int = 0):
        self.config = config or ModelConfig()
        self.params = params if params is not None else init_params(self.config, seed)

    def check_graph(self, graph: GeometricGraph) -> None:
        c = self.config
        if graph.d_e != c.d_e or graph.d_v != c.d_v or tuple(graph.block_widths) != c.block_widths:
            raise DimensionMismatch(
                f"graph has d_e={graph.d_e}, d_v={graph.d_v}, blocks={graph.block_widths}; "
                f"model expects d_e={c.d_e}, d_v={c.d_v}, blocks={c.block_widths}"
            )
        if graph.edge_scalar.shape[1] != c.edge_scalar:
            raise DimensionMismatch(f"graph edge width {graph.edge_scalar.shape[1]} != {c.edge_scalar}")

    def encode(self, graph: GeometricGraph, train: bool = False, rng=None):
        """Returns (s_p, v_p) pooled latents."""
        c = self.config
        s_a, v_a = embed_graph(
            graph,
            self.params,
            attn_layers=c.attn_layers,
            use_vector_attention=c.vector_attention,
            mask_knn=c.mask_attn_knn,
            use_scalar_pool=c.scalar_pool,
        )
        hg = build_hypergraph(graph.adjacency)
        _, _, s_p, v_p = encoder_forward(
            s_a, v_a, hg, self.params, layers=c.encoder_layers, form=c.conv,
            dropout=c.dropout, train=train, rng=rng,
        )
        return s_p, v_p

    def teacher_forced_logits(self, graph: GeometricGraph, sequence: str | None = None,
                              train: bool = False, rng=None) -> F.Tensor:
        self.check_graph(graph)
        s_p, v_p = self.encode(graph, train, rng)
        seq = graph.rna_sequence if sequence is None else sequence
        return teacher_forced_logits(
            seq, s_p, v_p, DecoderContext(graph), self.params,
            layers=self.config.decoder_layers, dropout=self.config.dropout, train=train, rng=rng,
        )

    def step_probabilities(self, graph: GeometricGraph, prefix, tau: float = 1.0) -> np.ndarray:
        s_p, v_p = self.encode(graph)
        return decode_step(prefix, s_p, v_p, DecoderContext(graph), self.params, tau, self.config.decoder_layers)

    def sample(self, graph: GeometricGraph, tau: float = 1.0, seed=0, num: int = 1) -> list[str]:
        """``num`` sequences; encoder runs once, one rng stream covers all samples."""
        self.check_graph(graph)
        s_p, v_p = self.encode(graph)
        ctx = DecoderContext(graph)
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return [
            autoregressive_sample(s_p, v_p, ctx, self.params, tau, rng, self.config.decoder_layers)
            for _ in range(num)
        ]
