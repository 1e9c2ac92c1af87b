"""
🛡️ GraphSAGE エンジン
平均集約の順伝播・ソフトマックス交差エントロピー・解析的逆伝播・Adam 学習

層 k の計算: C = [H, A·H], P = C·Wᵀ + b
  k < K : H' = normalize(relu(P))  (ノルム 0 の行は 0 のまま)
  k = K : z = P (ソフトマックスに渡す生スコア)

Author: システンスカフェ テックチーム
Date: 2026-10-18
"""

from typing import List, Optional, Sequence, Tuple
from dataclasses import dataclass, field
import logging
import math

import numpy as np
import scipy.sparse as sp
from tqdm import tqdm

from app.models.errors import Divergence, ShapeMismatch
from app.models.feature_types import FeatureTable
from app.models.provenance_graph import ProvenanceGraph, Subgraph
from app.models.role_model import Submodel
from app.models.detector_config import DetectorConfig, default_config
from app.utils.logging_setup import progress_disabled


logger = logging.getLogger(__name__)


# ===== 数値ヘルパー =====

def class_probabilities(z: np.ndarray) -> np.ndarray:
    """最大値を引いて安定化したソフトマックス"""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(z: np.ndarray, labels: np.ndarray, reduction: str = "mean") -> Tuple[float, np.ndarray]:
    """損失と ∂loss/∂z"""
    m = len(labels)
    logp = log_softmax(z)
    picked = logp[np.arange(m), labels]
    dz = np.exp(logp)
    dz[np.arange(m), labels] -= 1.0
    if reduction == "mean":
        return float(-picked.mean()), dz / m
    return float(-picked.sum()), dz


def confidence_ratio(probs: np.ndarray) -> np.ndarray:
    """最大確率 / 2番目の確率 (2番目が 0 なら inf)"""
    probs = np.atleast_2d(probs)
    if probs.shape[1] < 2:
        return np.full(len(probs), np.inf)
    top2 = np.sort(probs, axis=1)[:, -2:]
    with np.errstate(divide="ignore"):
        return np.where(top2[:, 0] > 0, top2[:, 1] / np.where(top2[:, 0] > 0, top2[:, 0], 1.0), np.inf)


def accept_mask(probs: np.ndarray, labels: np.ndarray, ratio_threshold: float) -> np.ndarray:
    """argmax が一意に正解ラベル かつ 比率 > R の行"""
    probs = np.atleast_2d(probs)
    labels = np.asarray(labels)
    top = probs.max(axis=1)
    unique = (probs == top[:, None]).sum(axis=1) == 1
    correct = probs.argmax(axis=1) == labels
    return unique & correct & (labels >= 0) & (confidence_ratio(probs) > ratio_threshold)


def classify_with_confidence(row: Sequence[float], true_label: int, ratio_threshold: float) -> bool:
    return bool(accept_mask(np.asarray(row, dtype=np.float64), np.array([true_label]), ratio_threshold)[0])


def mean_adjacency(n: int, dst_rows: np.ndarray, src_rows: np.ndarray) -> sp.csr_matrix:
    """A[i, j] = 1/|N(i)| (j は i の入隣接ノード、重複なし)"""
    ones = np.ones(len(dst_rows), dtype=np.float64)
    adjacency = sp.csr_matrix((ones, (dst_rows, src_rows)), shape=(n, n))
    adjacency.sum_duplicates()
    adjacency.data[:] = 1.0
    degree = np.asarray(adjacency.sum(axis=1)).ravel()
    inverse = np.divide(1.0, degree, out=np.zeros_like(degree), where=degree > 0)
    return sp.csr_matrix(sp.diags(inverse) @ adjacency)


# ===== 入力ビュー =====

@dataclass
class GraphView:
    """GNN への入力 (行 = ノード、ordinal 昇順)"""
    nodes: np.ndarray
    adjacency: sp.csr_matrix
    features: np.ndarray
    labels: np.ndarray

    def rows_of(self, ordinals) -> np.ndarray:
        ordinals = np.asarray(list(ordinals), dtype=np.int64)
        rows = np.searchsorted(self.nodes, ordinals)
        if len(rows) and (rows.max() >= len(self.nodes) or not np.array_equal(self.nodes[rows], ordinals)):
            raise KeyError("ordinal not in view")
        return rows

    def with_features(self, features: np.ndarray) -> "GraphView":
        return GraphView(self.nodes, self.adjacency, features, self.labels)


@dataclass
class LocalProblem:
    """ミニバッチの受容野 (K-hop 入近傍) に絞った部分問題"""
    adjacency: sp.csr_matrix
    features: np.ndarray
    rows: np.ndarray        # 局所行番号でのターゲット
    members: np.ndarray     # 元ビューでの行番号


@dataclass
class ForwardCache:
    inputs: List[np.ndarray] = field(default_factory=list)
    concats: List[np.ndarray] = field(default_factory=list)
    pre: List[np.ndarray] = field(default_factory=list)
    norms: List[np.ndarray] = field(default_factory=list)


@dataclass
class Gradients:
    weights: List[np.ndarray]
    biases: List[np.ndarray]


class AdamOptimizer:
    """適応モーメント勾配降下"""

    def __init__(self, submodel: Submodel, learning_rate: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        params = submodel.weights + submodel.biases
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, submodel: Submodel, grads: Gradients, update_bias: bool = True) -> None:
        self.t += 1
        params = submodel.weights + submodel.biases
        deltas = grads.weights + grads.biases
        n_weights = len(submodel.weights)
        for i, (param, grad) in enumerate(zip(params, deltas)):
            if i >= n_weights and not update_bias:
                continue
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * grad
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * grad * grad
            m_hat = self.m[i] / (1 - self.beta1 ** self.t)
            v_hat = self.v[i] / (1 - self.beta2 ** self.t)
            param -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


# ===== エンジン =====

class GraphSAGEEngine:
    """GraphSAGE-mean 分類器の順伝播・学習・勾配"""

    # --- 準備 ---

    def prepare(self, graph: ProvenanceGraph, subgraph: Subgraph, table: FeatureTable) -> GraphView:
        """サブグラフと特徴量表から入力ビューを作る"""
        nodes = np.asarray(table.nodes, dtype=np.int64)
        edge_ids = subgraph.edge_ids
        src = np.asarray(graph.edge_src, dtype=np.int64)[edge_ids] if len(edge_ids) else np.zeros(0, np.int64)
        dst = np.asarray(graph.edge_dst, dtype=np.int64)[edge_ids] if len(edge_ids) else np.zeros(0, np.int64)
        adjacency = mean_adjacency(len(nodes), np.searchsorted(nodes, dst), np.searchsorted(nodes, src))
        return GraphView(nodes, adjacency, table.as_float(), table.labels.copy())

    def init_submodel(self, widths: List[int], seed, maps_fingerprint: str = "") -> Submodel:
        """Glorot 一様初期化 (バイアスは 0)"""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for k in range(len(widths) - 1):
            fan_in, fan_out = 2 * widths[k], widths[k + 1]
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return Submodel(weights, biases, maps_fingerprint)

    # --- 順伝播 ---

    def _forward(self, adjacency: sp.csr_matrix, features: np.ndarray, submodel: Submodel) -> Tuple[np.ndarray, ForwardCache]:
        n = features.shape[0]
        if adjacency.shape != (n, n):
            raise ShapeMismatch(f"adjacency {adjacency.shape} does not match {n} nodes")
        if features.ndim != 2 or features.shape[1] != submodel.widths[0]:
            raise ShapeMismatch(f"features {features.shape} do not match input width {submodel.widths[0]}")

        cache = ForwardCache()
        hidden = features
        last = submodel.hops - 1
        for k, (weight, bias) in enumerate(zip(submodel.weights, submodel.biases)):
            concat = np.hstack([hidden, adjacency @ hidden])
            if concat.shape[1] != weight.shape[1]:
                raise ShapeMismatch(f"layer {k + 1}: input width {concat.shape[1]} vs weight {weight.shape}")
            pre = concat @ weight.T + bias
            cache.inputs.append(hidden)
            cache.concats.append(concat)
            cache.pre.append(pre)
            if k == last:
                return pre, cache
            activated = np.maximum(pre, 0.0)
            norms = np.linalg.norm(activated, axis=1)
            cache.norms.append(norms)
            hidden = activated / np.where(norms > 0, norms, 1.0)[:, None]
        raise ShapeMismatch("submodel has no layers")

    def _backward(self, adjacency: sp.csr_matrix, submodel: Submodel, cache: ForwardCache,
                  dz: np.ndarray) -> Tuple[Gradients, np.ndarray]:
        d_weights: List[np.ndarray] = [None] * submodel.hops
        d_biases: List[np.ndarray] = [None] * submodel.hops
        d_pre = dz
        for k in reversed(range(submodel.hops)):
            d_weights[k] = d_pre.T @ cache.concats[k]
            d_biases[k] = d_pre.sum(axis=0)
            d_concat = d_pre @ submodel.weights[k]
            width = cache.inputs[k].shape[1]
            d_hidden = d_concat[:, :width] + adjacency.T @ d_concat[:, width:]
            if k == 0:
                return Gradients(d_weights, d_biases), d_hidden
            # 正規化と ReLU を通して前の層へ
            hidden = cache.inputs[k]
            norms = cache.norms[k - 1]
            radial = np.sum(hidden * d_hidden, axis=1, keepdims=True)
            d_act = (d_hidden - hidden * radial) / np.where(norms > 0, norms, 1.0)[:, None]
            d_act[norms == 0] = 0.0
            d_pre = d_act * (cache.pre[k - 1] > 0)
        raise ShapeMismatch("submodel has no layers")

    def forward_propagate(self, view: GraphView, submodel: Submodel) -> np.ndarray:
        """全ノードの表現 z (行 = ビューの行)"""
        z, _ = self._forward(view.adjacency, view.features, submodel)
        return z

    # --- 受容野 ---

    def receptive_rows(self, adjacency: sp.csr_matrix, rows: np.ndarray, hops: int) -> np.ndarray:
        """rows から hops 段の入近傍を含めた行 (昇順)"""
        mask = np.zeros(adjacency.shape[0], dtype=bool)
        mask[rows] = True
        for _ in range(hops):
            reach = adjacency.T @ mask.astype(np.float64)
            grown = mask | (reach > 0)
            if np.array_equal(grown, mask):
                break
            mask = grown
        return np.flatnonzero(mask)

    def local_problem(self, view: GraphView, rows: np.ndarray, hops: int) -> LocalProblem:
        members = self.receptive_rows(view.adjacency, rows, hops)
        if len(members) == len(view.nodes):
            return LocalProblem(view.adjacency, view.features, np.asarray(rows), members)
        adjacency = view.adjacency[members][:, members]
        return LocalProblem(sp.csr_matrix(adjacency), view.features[members],
                            np.searchsorted(members, rows), members)

    def predict_proba(self, view: GraphView, submodel: Submodel, rows: Optional[np.ndarray] = None) -> np.ndarray:
        """rows のクラス確率 (受容野だけを順伝播)"""
        if rows is None:
            return class_probabilities(self.forward_propagate(view, submodel))
        rows = np.asarray(rows, dtype=np.int64)
        if len(rows) == 0:
            return np.zeros((0, submodel.n_classes))
        local = self.local_problem(view, rows, submodel.hops)
        z, _ = self._forward(local.adjacency, local.features, submodel)
        return class_probabilities(z[local.rows])

    # --- 勾配 ---

    def loss_and_gradients(self, adjacency: sp.csr_matrix, features: np.ndarray, submodel: Submodel,
                           rows: np.ndarray, labels: np.ndarray, reduction: str = "mean") -> Tuple[float, Gradients]:
        """rows の交差エントロピーと重み勾配"""
        z, cache = self._forward(adjacency, features, submodel)
        loss, dz_rows = cross_entropy(z[rows], labels, reduction)
        dz = np.zeros_like(z)
        np.add.at(dz, rows, dz_rows)
        grads, _ = self._backward(adjacency, submodel, cache, dz)
        return loss, grads

    def input_gradient(self, adjacency: sp.csr_matrix, features: np.ndarray, submodel: Submodel,
                       rows: np.ndarray, labels: np.ndarray, reduction: str = "sum") -> Tuple[float, np.ndarray]:
        """rows の損失と ∂loss/∂features"""
        z, cache = self._forward(adjacency, features, submodel)
        loss, dz_rows = cross_entropy(z[rows], labels, reduction)
        dz = np.zeros_like(z)
        np.add.at(dz, rows, dz_rows)
        _, d_features = self._backward(adjacency, submodel, cache, dz)
        return loss, d_features

    def loss(self, adjacency: sp.csr_matrix, features: np.ndarray, submodel: Submodel,
             rows: np.ndarray, labels: np.ndarray, reduction: str = "mean") -> float:
        z, _ = self._forward(adjacency, features, submodel)
        value, _ = cross_entropy(z[rows], labels, reduction)
        return value

    # --- 学習 ---

    def train_submodel(
        self,
        view: GraphView,
        targets: np.ndarray,
        n_classes: int,
        config: DetectorConfig = default_config,
        seed=0,
        maps_fingerprint: str = "",
    ) -> Tuple[Submodel, List[float]]:
        """targets (ビュー行) のラベルに向けて1サブモデルを学習し、エポック毎の平均損失も返す"""
        targets = np.asarray(targets, dtype=np.int64)
        labels = view.labels[targets]
        if len(targets) == 0:
            raise ValueError("no target nodes to train on")
        if (labels < 0).any():
            raise ValueError("target nodes must carry known labels")

        widths = config.layer_widths(view.features.shape[1], n_classes)
        rng = np.random.default_rng(seed)
        submodel = self.init_submodel(widths, rng, maps_fingerprint)
        optimizer = AdamOptimizer(submodel, config.learning_rate)

        batch_size = config.batch_size
        single_batch = len(targets) <= batch_size
        fixed = self.local_problem(view, targets, config.hops) if single_batch else None

        history: List[float] = []
        epochs = tqdm(range(config.epoch), desc="submodel", leave=False, disable=progress_disabled())
        for epoch in epochs:
            order = np.arange(len(targets)) if single_batch else rng.permutation(len(targets))
            total = 0.0
            for start in range(0, len(targets), batch_size):
                picked = order[start:start + batch_size]
                local = fixed if single_batch else self.local_problem(view, targets[picked], config.hops)
                loss, grads = self.loss_and_gradients(local.adjacency, local.features, submodel,
                                                      local.rows, labels[picked])
                if not math.isfinite(loss):
                    raise Divergence(f"loss became {loss} at epoch {epoch + 1}; lower the learning rate")
                optimizer.step(submodel, grads, update_bias=config.use_bias)
                total += loss * len(picked)
            history.append(total / len(targets))
            logger.debug("epoch %d loss %.6f", epoch + 1, history[-1])
            if not submodel.is_finite():
                raise Divergence(f"weights became non-finite at epoch {epoch + 1}")
        return submodel, history


# グローバルインスタンス
graphsage_engine = GraphSAGEEngine()
