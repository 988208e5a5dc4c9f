import itertools
import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import ConvexHull, HalfspaceIntersection

from module.chain_module import TorusChain, dense_matrix
from module.defaults import EXPERIMENT, FEASIBILITY, THETA
from module.errors import FeasibilityError, ValidationError
from module.special_module import skellam_tables, stable_density, theta_alpha

logger = logging.getLogger(__name__)

CATALOG_DIR = Path(__file__).resolve().parent.parent / 'catalog'
CATALOG = ('single_vertex', 'self_loop', 'theta', 'dumbbell', 'two_face_bridge')
REGIMES = ('super', 'sub', 'crit', 'deformed', 'skellam')


@dataclass
class Vertex:
    id: int
    marked: bool = False
    boundary: bool = False


@dataclass
class Edge:
    id: int
    u: int
    v: int
    boundary: bool = False


@dataclass
class Face:
    marked_vertex: int
    multiplicities: Dict[int, int] = field(default_factory=dict)


@dataclass
class Diagram:
    """带面重数的带状图骨架"""
    vertices: List[Vertex]
    edges: List[Edge]
    faces: List[Face]
    name: str = ''

    @property
    def s(self) -> int:
        return len(self.faces)

    @property
    def ell(self) -> int:
        return len(self.edges) - len(self.vertices)

    @property
    def has_boundary(self) -> bool:
        return any(e.boundary for e in self.edges)

    def vertex_position(self) -> Dict[int, int]:
        return {v.id: i for i, v in enumerate(self.vertices)}

    def degree(self, vertex_id: int) -> int:
        return sum((e.u == vertex_id) + (e.v == vertex_id) for e in self.edges)

    def multiplicity_matrix(self) -> np.ndarray:
        """c_j(e)，形状 (s, |E|)"""
        column = {e.id: k for k, e in enumerate(self.edges)}
        c = np.zeros((self.s, len(self.edges)), dtype=int)
        for j, face in enumerate(self.faces):
            for edge_id, mult in face.multiplicities.items():
                c[j, column[edge_id]] = mult
        return c

    def interior_vertices(self) -> List[Vertex]:
        return [v for v in self.vertices if not v.boundary]

    def boundary_vertices(self) -> List[Vertex]:
        return [v for v in self.vertices if v.boundary]


@dataclass
class DiagramReport:
    valid: bool
    typical: bool
    ell: int
    s: int
    has_boundary: bool
    violations: List[str] = field(default_factory=list)


@dataclass(eq=False)
class SpikeOperator:
    """有限秩形变 A = Σ a_i q_i q_iᵀ，q_i 支撑在尖峰位置上"""
    strengths: Optional[Tuple[float, ...]] = None
    taus: Optional[Tuple[float, ...]] = None
    vectors: Optional[np.ndarray] = None
    positions: Optional[Tuple[int, ...]] = None
    z: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.strengths is None and self.taus is None:
            raise ValidationError("尖峰需要给出 strengths 或 taus")
        if self.vectors is None:
            self.vectors = np.eye(self.rank)
        self.vectors = np.asarray(self.vectors, dtype=float)
        if self.vectors.shape != (self.rank, self.rank):
            raise ValidationError(f"特征向量表应为 {self.rank}×{self.rank}")
        if np.max(np.abs(self.vectors.T @ self.vectors - np.eye(self.rank))) > 1e-12:
            raise ValidationError("尖峰特征向量不正交")

    @property
    def rank(self) -> int:
        values = self.strengths if self.strengths is not None else self.taus
        return len(values)

    def to_json(self) -> dict:
        def plain(values):
            return None if values is None else [float(v) for v in values]
        return {
            'strengths': plain(self.strengths),
            'taus': plain(self.taus),
            'vectors': self.vectors.tolist(),
            'positions': None if self.positions is None else [int(p) for p in self.positions],
            'z': plain(self.z),
        }

    @classmethod
    def from_json(cls, data: dict) -> 'SpikeOperator':
        unknown = set(data) - {'strengths', 'taus', 'vectors', 'positions', 'z'}
        if unknown:
            raise ValidationError(f"尖峰描述含未知字段: {sorted(unknown)}")

        def as_tuple(key):
            return None if data.get(key) is None else tuple(data[key])
        vectors = data.get('vectors')
        return cls(strengths=as_tuple('strengths'), taus=as_tuple('taus'),
                   vectors=None if vectors is None else np.asarray(vectors, dtype=float),
                   positions=as_tuple('positions'), z=as_tuple('z'))

    def eigenvalues(self, W: Optional[float] = None, alpha: float = 2.0) -> np.ndarray:
        if self.strengths is not None:
            return np.asarray(self.strengths, dtype=float)
        if W is None:
            raise ValidationError("由 τ 给出的尖峰需要带宽 W")
        return np.array([critical_spike_strength(tau, W, alpha) for tau in self.taus])

    def sites(self, N: int) -> np.ndarray:
        if self.positions is not None:
            sites = np.asarray(self.positions, dtype=int) % N
        elif self.z is not None:
            sites = np.floor(np.asarray(self.z, dtype=float) % 1.0 * N).astype(int) % N
        else:
            sites = np.arange(self.rank) * (N // self.rank)
        if len(set(sites.tolist())) != self.rank:
            raise ValidationError(f"尖峰位置重复: {sites.tolist()}")
        return sites

    def basis(self, N: int) -> np.ndarray:
        Q = np.zeros((N, self.rank))
        Q[self.sites(N), :] = self.vectors
        return Q

    def full_matrix(self, N: int, W: Optional[float] = None, alpha: float = 2.0) -> np.ndarray:
        Q = self.basis(N)
        A = (Q * self.eigenvalues(W, alpha)) @ Q.T
        return 0.5 * (A + A.T)

    def power_stack(self, N: int, wmax: int, W: Optional[float] = None, alpha: float = 2.0) -> np.ndarray:
        """A^1 … A^wmax"""
        Q = self.basis(N)
        a = self.eigenvalues(W, alpha)
        return np.stack([(Q * a ** w) @ Q.T for w in range(1, wmax + 1)])

    def flow(self, t: np.ndarray) -> np.ndarray:
        """𝔄(t) = Σ_k e^{τ_k t} v_k v_kᵀ，对 t 向量化，形状 (..., r, r)"""
        if self.taus is None:
            raise ValidationError("𝔄(t) 需要临界参数 τ")
        growth = np.exp(np.multiply.outer(np.asarray(t, dtype=float), np.asarray(self.taus)))
        return np.einsum('...k,ik,jk->...ij', growth, self.vectors, self.vectors)


def critical_spike_strength(tau: float, W: float, alpha: float = 2.0) -> float:
    """a = 1 + τW^{−α/(3α−1)}"""
    return 1.0 + tau * W ** (-alpha / (3.0 * alpha - 1.0))


def diagram_from_json(data: dict) -> Diagram:
    try:
        vertices = [Vertex(int(v['id']), bool(v.get('marked', False)), bool(v.get('boundary', False)))
                    for v in data['vertices']]
        edges = [Edge(int(e['id']), int(e['u']), int(e['v']), bool(e.get('boundary', False)))
                 for e in data['edges']]
        faces = [Face(int(f['marked_vertex']), {int(x['id']): int(x['multiplicity']) for x in f['edges']})
                 for f in data['faces']]
    except (KeyError, TypeError, ValueError) as e:
        raise ValidationError(f"图描述格式错误: {e}") from None
    return Diagram(vertices, edges, faces, name=str(data.get('name', '')))


def diagram_to_json(diagram: Diagram) -> dict:
    return {
        'name': diagram.name,
        'vertices': [{'id': v.id, 'marked': v.marked, 'boundary': v.boundary} for v in diagram.vertices],
        'edges': [{'id': e.id, 'u': e.u, 'v': e.v, 'boundary': e.boundary} for e in diagram.edges],
        'faces': [{'marked_vertex': f.marked_vertex,
                   'edges': [{'id': k, 'multiplicity': m} for k, m in sorted(f.multiplicities.items())]}
                  for f in diagram.faces],
    }


def load_diagram(path) -> Diagram:
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        logger.error(f"读取图文件 {path} 失败: {e}")
        raise ValidationError(f"无法读取图文件 {path}: {e}") from None
    diagram = diagram_from_json(data)
    if not diagram.name:
        diagram.name = path.stem
    return diagram


def load_catalog(name: str) -> Diagram:
    if name not in CATALOG:
        raise ValidationError(f"目录中没有图 {name}，可选: {', '.join(CATALOG)}")
    return load_diagram(CATALOG_DIR / f"{name}.json")


def _is_connected(diagram: Diagram) -> bool:
    if not diagram.vertices:
        return False
    neighbours = {v.id: set() for v in diagram.vertices}
    for e in diagram.edges:
        neighbours[e.u].add(e.v)
        neighbours[e.v].add(e.u)
    seen = {diagram.vertices[0].id}
    queue = deque(seen)
    while queue:
        for w in neighbours[queue.popleft()] - seen:
            seen.add(w)
            queue.append(w)
    return len(seen) == len(diagram.vertices)


def validate_diagram(diagram: Diagram) -> DiagramReport:
    """检查度数、边界和面重数约束，并判定是否典型"""
    violations = []
    ids = {v.id for v in diagram.vertices}
    edge_ids = {e.id for e in diagram.edges}
    marked = {f.marked_vertex for f in diagram.faces}
    for e in diagram.edges:
        if e.u not in ids or e.v not in ids:
            violations.append(f"边 {e.id} 的端点不存在")
    for j, face in enumerate(diagram.faces):
        if face.marked_vertex not in ids:
            violations.append(f"面 {j} 的标记顶点 {face.marked_vertex} 不存在")
        for edge_id, mult in face.multiplicities.items():
            if edge_id not in edge_ids:
                violations.append(f"面 {j} 引用了不存在的边 {edge_id}")
            elif mult not in (0, 1, 2):
                violations.append(f"面 {j} 中边 {edge_id} 的重数 {mult} 不在 {{0,1,2}}")
    if violations:
        return DiagramReport(False, False, diagram.ell, diagram.s, diagram.has_boundary, violations)

    single_vertex = len(diagram.vertices) == 1 and not diagram.edges
    for v in diagram.vertices:
        degree = diagram.degree(v.id)
        is_marked = v.marked or v.id in marked
        if single_vertex:
            continue
        if is_marked and degree < 2:
            violations.append(f"标记顶点 {v.id} 的度数 {degree} < 2")
        if not is_marked and degree < 3:
            violations.append(f"未标记顶点 {v.id} 的度数 {degree} < 3")
    totals = diagram.multiplicity_matrix().sum(axis=0)
    for e, total in zip(diagram.edges, totals):
        allowed = (1, 2) if e.boundary else (2,)
        if total not in allowed:
            violations.append(f"边 {e.id} 的面重数之和为 {total}，应为 {allowed[-1]}")
    if diagram.has_boundary:
        n_edges = sum(e.boundary for e in diagram.edges)
        n_vertices = len(diagram.boundary_vertices())
        if n_edges != n_vertices:
            violations.append(f"边界边数 {n_edges} 与边界顶点数 {n_vertices} 不等")

    valid = not violations
    typical = False
    if valid and _is_connected(diagram):
        if single_vertex:
            typical = diagram.s == 1
        else:
            degrees_ok = all(diagram.degree(v.id) == (2 if (v.marked or v.id in marked) else 3)
                             for v in diagram.vertices)
            ell, s = diagram.ell, diagram.s
            typical = (degrees_ok and len(marked) == s and ell >= 0
                       and len(diagram.edges) == 3 * ell + s and len(diagram.vertices) == 2 * ell + s)
    return DiagramReport(valid, typical, diagram.ell, diagram.s, diagram.has_boundary, violations)


def _require_valid(diagram: Diagram) -> DiagramReport:
    report = validate_diagram(diagram)
    if not report.valid:
        raise ValidationError(f"图 {diagram.name or '?'} 不合法: {'; '.join(report.violations)}")
    return report


def _max_weights(c: np.ndarray, orders: Sequence[int]) -> np.ndarray:
    caps = []
    for e in range(c.shape[1]):
        caps.append(min(orders[j] // c[j, e] for j in range(c.shape[0]) if c[j, e] > 0))
    return np.asarray(caps, dtype=int)


def _contract(diagram: Diagram, orders: Sequence[int], N: int, edge_stack) -> float:
    """对所有标号 η 和权重 w_e 求和：一次 einsum 收缩"""
    c = diagram.multiplicity_matrix()
    wmax = _max_weights(c, orders) if diagram.edges else np.zeros(0, dtype=int)
    if np.any(wmax < 1):
        return 0.0
    needed = len(diagram.vertices) + len(diagram.edges) + len(orders) + int(np.count_nonzero(c))
    if needed > 52:
        raise FeasibilityError('einsum 指标数', needed, 52)
    labels = itertools.count()
    vertex_label = {v.id: next(labels) for v in diagram.vertices}
    edge_label = [next(labels) for _ in diagram.edges]
    operands = []
    for v in diagram.vertices:
        operands += [np.ones(N), [vertex_label[v.id]]]
    for k, e in enumerate(diagram.edges):
        stack = edge_stack(e, int(wmax[k]))
        if e.u == e.v:
            # 自环只取对角线
            diagonal = np.arange(stack.shape[1])
            operands += [stack[:, diagonal, diagonal], [edge_label[k], vertex_label[e.u]]]
        else:
            operands += [stack, [edge_label[k], vertex_label[e.u], vertex_label[e.v]]]
    for j, n_j in enumerate(orders):
        current = next(labels)
        start = np.zeros(n_j + 1)
        start[0] = 1.0
        operands += [start, [current]]
        for k in np.flatnonzero(c[j]):
            step = int(c[j, k])
            delta = np.zeros((n_j + 1, int(wmax[k]), n_j + 1))
            for w in range(1, int(wmax[k]) + 1):
                s_prev = np.arange(0, n_j + 1 - step * w)
                delta[s_prev, w - 1, s_prev + step * w] = 1.0
            following = next(labels)
            operands += [delta, [current, edge_label[k], following]]
            current = following
        # 2t_j + Σ c·w = n_j 要求剩余为非负偶数
        slack = np.zeros(n_j + 1)
        slack[n_j % 2::2] = 1.0
        operands += [slack, [current]]
    return float(np.einsum(*operands, [], optimize='greedy'))


def _check_cost(diagram: Diagram, N: int, orders: Sequence[int], cap: Optional[float]) -> None:
    cap = FEASIBILITY['diagram_terms'] if cap is None else cap
    cost = float(N) ** len(diagram.vertices) * math.prod(max(n, 1) for n in orders)
    if cost > cap:
        raise FeasibilityError(f"图函数 {diagram.name}", cost, cap)


def diagram_function(diagram: Diagram, chain: TorusChain, orders: Sequence[int],
                     spikes: Optional[SpikeOperator] = None, cap: Optional[float] = None,
                     W: Optional[float] = None, alpha: float = 2.0) -> float:
    """F_Γ({n_j}) 的精确值"""
    _require_valid(diagram)
    orders = [int(n) for n in orders]
    if len(orders) != diagram.s:
        raise ValidationError(f"阶数个数 {len(orders)} 与面数 {diagram.s} 不符")
    if any(n < 0 for n in orders):
        raise ValidationError(f"阶数必须非负: {orders}")
    if diagram.has_boundary and spikes is None:
        raise ValidationError("含边界边的图需要尖峰算子")
    N = chain.N
    _check_cost(diagram, N, orders, cap)
    P = dense_matrix(chain)
    cache: Dict[Tuple[bool, int], np.ndarray] = {}

    def edge_stack(edge: Edge, wmax: int) -> np.ndarray:
        key = (edge.boundary, wmax)
        if key not in cache:
            if edge.boundary:
                cache[key] = spikes.power_stack(N, wmax, W, alpha)
            else:
                powers = [P]
                for _ in range(wmax - 1):
                    powers.append(powers[-1] @ P)
                cache[key] = np.stack(powers)
        return cache[key]

    value = _contract(diagram, orders, N, edge_stack)
    logger.debug(f"F_Γ({diagram.name}, n={orders}) = {value:.6g}")
    return value


def diagram_upper_bound(diagram: Diagram, b_n: float, n: int, N: int, a: float = 1.0, r: int = 1) -> float:
    """G_Γ：无边界 N·b^{|E|−|V|+1}·n^{|V|−1}/(|V|−1)!；有边界带 (1+aⁿ)r^{|V_b|} 因子"""
    if b_n <= 0:
        raise ValidationError(f"b_n 必须为正: {b_n}")
    V, E = len(diagram.vertices), len(diagram.edges)
    if not diagram.has_boundary:
        return N * b_n ** (E - V + 1) * n ** (V - 1) / math.factorial(V - 1)
    e_int = sum(not e.boundary for e in diagram.edges)
    v_int = len(diagram.interior_vertices())
    v_b = len(diagram.boundary_vertices())
    return (1 + a ** n) * r ** v_b * b_n ** (e_int - v_int) * n ** V / math.factorial(V)


def diagram_difference_bound(diagram: Diagram, b_n: float, delta_n: float, error_n: float,
                             n: int, N: int) -> float:
    """逐边替换的差分上界：每条边取 ℓ∞ 边与 ℓ¹ 边两种估计中较大者"""
    V, E = len(diagram.vertices), len(diagram.edges)
    if E == 0:
        return 0.0
    case_sup = N * b_n ** (E - V) * delta_n * n ** (V - 1) / math.factorial(V - 1)
    case_l1 = 0.0
    if V >= 2:
        case_l1 = N * b_n ** (E - V + 1) * n ** (V - 2) / math.factorial(V - 2) * error_n
    return E * max(case_sup, case_l1)


def _gf2_rank(matrix: np.ndarray) -> int:
    rows = [row.copy() for row in (matrix % 2).astype(np.uint8)]
    rank = 0
    for col in range(matrix.shape[1] if matrix.ndim == 2 else 0):
        pivot = next((i for i in range(rank, len(rows)) if rows[i][col]), None)
        if pivot is None:
            continue
        rows[rank], rows[pivot] = rows[pivot], rows[rank]
        for i in range(len(rows)):
            if i != rank and rows[i][col]:
                rows[i] ^= rows[rank]
        rank += 1
    return rank


def parity_constant(diagram: Diagram, parities: Optional[Sequence[int]] = None) -> float:
    """C_Γ = 2^{−rank_GF(2)(c mod 2)}；奇偶不相容时为 0"""
    c = diagram.multiplicity_matrix() % 2
    if parities is not None:
        augmented = np.column_stack([c, np.asarray(parities, dtype=int) % 2])
        if _gf2_rank(augmented) > _gf2_rank(c):
            return 0.0
    return 2.0 ** (-_gf2_rank(c))


def _bounds(c: np.ndarray, t: np.ndarray) -> np.ndarray:
    return np.array([min(t[j] / c[j, e] for j in range(c.shape[0]) if c[j, e] > 0)
                     for e in range(c.shape[1])])


def constraint_volume(diagram: Diagram, t: Sequence[float], method: str = 'exact',
                      samples: int = 100000, seed: int = 0) -> Tuple[float, float]:
    """{α_e ≥ 0 : Σ_e c_i(e)α_e ≤ t_i} 的体积及标准误"""
    t = np.asarray(t, dtype=float)
    c = diagram.multiplicity_matrix()
    if t.size != diagram.s:
        raise ValidationError(f"t 的个数 {t.size} 与面数 {diagram.s} 不符")
    if np.any(t < 0):
        raise ValidationError(f"t 必须非负: {t}")
    n_edges = c.shape[1]
    if n_edges == 0:
        return 1.0, 0.0
    if np.any(t == 0):
        return 0.0, 0.0
    if method == 'montecarlo':
        box = _bounds(c, t)
        rng = np.random.default_rng(seed)
        points = rng.random((samples, n_edges)) * box
        inside = np.all(points @ c.T <= t, axis=1)
        p = float(inside.mean())
        volume = float(np.prod(box))
        return volume * p, volume * math.sqrt(p * (1 - p) / samples)
    if method != 'exact':
        raise ValidationError(f"未知的体积计算方式: {method}")
    if n_edges == 1:
        return float(_bounds(c, t)[0]), 0.0
    active = c.sum(axis=1) > 0
    c, t = c[active], t[active]
    # A·α + b ≤ 0 形式的半空间
    halfspaces = np.unique(np.vstack([
        np.hstack([-np.eye(n_edges), np.zeros((n_edges, 1))]),
        np.hstack([c.astype(float), -t[:, None]]),
    ]), axis=0)
    interior = np.full(n_edges, float(np.min(t / (2.0 * c.sum(axis=1)))))
    vertices = HalfspaceIntersection(halfspaces, interior).intersections
    return float(ConvexHull(vertices).volume), 0.0


@dataclass
class LatticeConstant:
    orders: List[Tuple[int, ...]]
    counts: List[float]
    volumes: List[float]
    ratios: List[float]
    drift: float
    extrapolated: float
    limit: float
    subsequence: str


def lattice_count(diagram: Diagram, orders: Sequence[int]) -> float:
    """#{(m_j, w_e) : w_e ≥ 1, 2m_j + Σ c_j(e)w_e = n_j}"""
    return _contract(diagram, [int(n) for n in orders], 1,
                     lambda edge, wmax: np.ones((wmax, 1, 1)))


def lattice_constant_C(diagram: Diagram, parities: Optional[Sequence[int]] = None,
                       n_max: int = 64, n_min: int = 2) -> LatticeConstant:
    """沿 n_j = n + parity_j（n 为偶数）计算计数/体积之比及其漂移"""
    if len(diagram.edges) > FEASIBILITY['lattice_edges']:
        raise FeasibilityError('格点计数', len(diagram.edges), FEASIBILITY['lattice_edges'])
    parities = tuple(int(p) % 2 for p in (parities or [0] * diagram.s))
    start = n_min + (n_min % 2)
    orders, counts, volumes, ratios = [], [], [], []
    for n in range(start, n_max + 1, 2):
        n_j = tuple(n + p for p in parities)
        count = lattice_count(diagram, n_j)
        volume, _ = constraint_volume(diagram, n_j)
        orders.append(n_j)
        counts.append(count)
        volumes.append(volume)
        ratios.append(count / volume if volume > 0 else 0.0)
    tail = ratios[-max(1, len(ratios) // 4):]
    drift = float(max(tail) - min(tail))
    half = len(ratios) // 2
    if len(ratios) - half >= 2:
        inverse = 1.0 / np.array([sum(o) for o in orders[half:]], dtype=float)
        extrapolated = float(np.polyfit(inverse, ratios[half:], 1)[1])
    else:
        extrapolated = float(ratios[-1])
    subsequence = f"n_j = n + {list(parities)}, n 为偶数"
    logger.debug(f"C_Γ({diagram.name}) 比值序列末值 {ratios[-1]:.6g}，漂移 {drift:.3g}")
    return LatticeConstant(orders, counts, volumes, ratios, drift, extrapolated,
                           parity_constant(diagram, parities), subsequence)


@dataclass
class LimitEstimate:
    estimate: float
    stderr: float
    samples: int
    regime: str
    C: float
    resample_recommended: bool = False


def _spanning_tree(diagram: Diagram, root: int) -> List[Tuple[int, int, int]]:
    index = diagram.vertex_position()
    adjacency = {v.id: [] for v in diagram.vertices}
    for k, e in enumerate(diagram.edges):
        if e.u != e.v:
            adjacency[e.u].append((e.v, k))
            adjacency[e.v].append((e.u, k))
    order, seen, queue = [], {root}, deque([root])
    while queue:
        parent = queue.popleft()
        for child, k in adjacency[parent]:
            if child not in seen:
                seen.add(child)
                order.append((index[child], index[parent], k))
                queue.append(child)
    if len(seen) != len(diagram.vertices):
        raise ValidationError(f"图 {diagram.name} 不连通")
    return order


def _sample_alphas(c: np.ndarray, t: np.ndarray, size: int, rng: np.random.Generator):
    # α_e = B_e·u²，抵消 α^{−1/2} 奇点
    bounds = _bounds(c, t)
    u = 1.0 - rng.random((size, c.shape[1]))
    alphas = bounds * u ** 2
    weight = np.prod(2.0 * bounds * u, axis=1) * np.all(alphas @ c.T <= t, axis=1)
    return alphas, weight


def _stable_scale(alpha: float, time: np.ndarray, c: float, sigma: float) -> np.ndarray:
    if alpha == 2.0:
        return sigma * np.sqrt(time)
    return (c * time) ** (1.0 / alpha)


def _wrap(x: np.ndarray) -> np.ndarray:
    return x - np.floor(x + 0.5)


def _sub_integrand(diagram, alphas, rng, alpha, c, sigma):
    size = alphas.shape[0]
    index = diagram.vertex_position()
    x = np.zeros((size, len(diagram.vertices)))
    proposal = np.ones(size)
    for child, parent, k in _spanning_tree(diagram, diagram.faces[0].marked_vertex):
        scale = _stable_scale(alpha, alphas[:, k], c, sigma)
        step = scale * rng.standard_cauchy(size)
        x[:, child] = x[:, parent] + step
        proposal *= scale / (np.pi * (scale ** 2 + step ** 2))
    value = np.ones(size)
    for k, e in enumerate(diagram.edges):
        diff = x[:, index[e.u]] - x[:, index[e.v]]
        value *= stable_density(alpha, diff, alphas[:, k], c=c, sigma=sigma, method='table')
    return value / proposal


def _theta_edges(diagram, x, alphas, edges, alpha, time, c, sigma):
    index = diagram.vertex_position()
    value = np.ones(x.shape[0])
    for k in edges:
        e = diagram.edges[k]
        diff = _wrap(x[:, index[e.u]] - x[:, index[e.v]])
        value *= theta_alpha(alpha, diff, alphas[:, k] * time, c=c, sigma=sigma, density_method='table')
    return value


def _crit_integrand(diagram, alphas, rng, alpha, time, c, sigma):
    size = alphas.shape[0]
    x = np.zeros((size, len(diagram.vertices)))
    proposal = np.ones(size)
    for child, parent, k in _spanning_tree(diagram, diagram.faces[0].marked_vertex):
        # 一半包裹柯西，一半均匀
        scale = np.minimum(_stable_scale(alpha, alphas[:, k] * time, c, sigma), 5.0)
        cauchy = x[:, parent] + scale * np.tan(np.pi * (rng.random(size) - 0.5))
        uniform = rng.random(size) - 0.5
        x[:, child] = _wrap(np.where(rng.random(size) < 0.5, cauchy, uniform))
        d = _wrap(x[:, child] - x[:, parent])
        wrapped = np.sinh(2 * np.pi * scale) / (np.cosh(2 * np.pi * scale) - np.cos(2 * np.pi * d))
        proposal *= 0.5 * wrapped + 0.5
    value = _theta_edges(diagram, x, alphas, range(len(diagram.edges)), alpha, time, c, sigma)
    return value / proposal


def _deformed_integrand(diagram, alphas, rng, alpha, time, c, sigma, spikes):
    if spikes.z is None:
        raise ValidationError("形变极限函数需要尖峰的重标位置 z")
    size = alphas.shape[0]
    index = diagram.vertex_position()
    z = np.asarray(spikes.z, dtype=float)
    x = np.zeros((size, len(diagram.vertices)))
    for v in diagram.interior_vertices():
        x[:, index[v.id]] = rng.random(size) - 0.5
    boundary = [index[v.id] for v in diagram.boundary_vertices()]
    interior_edges = [k for k, e in enumerate(diagram.edges) if not e.boundary]
    boundary_edges = [k for k, e in enumerate(diagram.edges) if e.boundary]
    flows = {k: spikes.flow(alphas[:, k]) for k in boundary_edges}
    total = np.zeros(size)
    # 边界顶点遍历所有尖峰指派
    for assignment in itertools.product(range(spikes.rank), repeat=len(boundary)):
        slot = dict(zip(boundary, assignment))
        for position, i in slot.items():
            x[:, position] = z[i]
        value = _theta_edges(diagram, x, alphas, interior_edges, alpha, time, c, sigma)
        for k in boundary_edges:
            e = diagram.edges[k]
            value = value * flows[k][:, slot[index[e.u]], slot[index[e.v]]]
        total += value
    return total


def _skellam_integrand(diagram, alphas, D, d):
    # 块游走在时间 λ_e 的核方差为 λ_e，对应 Skellam τ = λ_e/2
    size = alphas.shape[0]
    index = diagram.vertex_position()
    kernels = skellam_tables(d, D, alphas / 2.0)
    sites = list(itertools.product(range(D), repeat=d))
    root = index[diagram.faces[0].marked_vertex]
    others = [i for i in range(len(diagram.vertices)) if i != root]
    total = np.zeros(size)
    # 平移不变：根顶点固定在原点，再乘 D^d
    for labels in itertools.product(sites, repeat=len(others)):
        position = {root: (0,) * d}
        position.update(zip(others, labels))
        value = np.ones(size)
        for k, e in enumerate(diagram.edges):
            shift = tuple((a - b) % D for a, b in zip(position[index[e.u]], position[index[e.v]]))
            value = value * kernels[(slice(None), k) + shift]
        total += value
    return D ** d * total


def limiting_diagram_function(diagram: Diagram, regime: str, t: Sequence[float], alpha: float = 2.0,
                              gamma: Optional[float] = None, tau: Optional[float] = None,
                              spikes: Optional[SpikeOperator] = None,
                              mu: Optional[float] = None, D: Optional[int] = None, d: int = 1,
                              samples: int = EXPERIMENT['mc_samples'], seed: int = 0,
                              C: Optional[float] = None, c: float = THETA['c_alpha'],
                              sigma: float = THETA['sigma'],
                              tolerance: float = EXPERIMENT['mc_tolerance']) -> LimitEstimate:
    """超临界/次临界/临界/形变/Skellam 极限图函数

    Skellam 区间对应 Wegner 块模型 M^{1/3}λ → μ、n_jλ → t_j 的极限，
    μ^{s−|E|}·Σ_{α_v ∈ T_D^d} ∫ Π_e p^Skellam(α_u − α_v, λ_e) dλ_e。
    """
    regime = regime.lower()
    if regime not in REGIMES:
        raise ValidationError(f"未知区间: {regime}")
    _require_valid(diagram)
    t = np.asarray(t, dtype=float)
    if t.size != diagram.s or np.any(t <= 0):
        raise ValidationError(f"需要 {diagram.s} 个正的 t: {t}")
    constant = parity_constant(diagram) if C is None else C
    prefactor = constant / float(np.prod(t))
    if regime == 'super':
        exact = len(diagram.edges) <= 8
        volume, error = constraint_volume(diagram, t, 'exact' if exact else 'montecarlo', samples, seed)
        return LimitEstimate(prefactor * volume, prefactor * error, 0 if exact else samples, regime, constant)
    if regime == 'skellam':
        if mu is None or mu <= 0 or D is None or D < 2 or d < 1:
            raise ValidationError(f"Skellam 区间需要 μ > 0、D ≥ 2 和 d ≥ 1: μ={mu}, D={D}, d={d}")
        if diagram.has_boundary:
            raise ValidationError("Skellam 极限图函数不支持边界边")
        cost = float(D) ** (d * (len(diagram.vertices) - 1)) * samples
        if cost > FEASIBILITY['diagram_terms']:
            raise FeasibilityError(f"Skellam 极限 {diagram.name}", cost, FEASIBILITY['diagram_terms'])
        prefactor *= mu ** (diagram.s - len(diagram.edges))
    elif not 1.0 < alpha <= 2.0:
        raise ValidationError(f"次临界/临界极限函数要求 α ∈ (1,2]: {alpha}")
    if regime in ('crit', 'deformed'):
        if tau is None:
            if gamma is None:
                raise ValidationError("临界区间需要 γ 或 τ")
            tau = gamma ** alpha
    if regime == 'deformed' and spikes is None:
        raise ValidationError("形变极限函数需要尖峰算子")
    if not diagram.edges:
        volume = D ** d if regime == 'skellam' else 1
        return LimitEstimate(prefactor * volume, 0.0, 0, regime, constant)

    rng = np.random.default_rng(seed)
    alphas, weight = _sample_alphas(diagram.multiplicity_matrix(), t, samples, rng)
    if regime == 'sub':
        values = _sub_integrand(diagram, alphas, rng, alpha, c, sigma)
    elif regime == 'crit':
        values = _crit_integrand(diagram, alphas, rng, alpha, tau, c, sigma)
    elif regime == 'skellam':
        values = _skellam_integrand(diagram, alphas, D, d)
    else:
        values = _deformed_integrand(diagram, alphas, rng, alpha, tau, c, sigma, spikes)
    terms = prefactor * weight * values
    estimate = float(terms.mean())
    stderr = float(terms.std(ddof=1) / math.sqrt(samples))
    resample = stderr > tolerance * abs(estimate)
    if resample:
        logger.warning(f"{diagram.name} 的 {regime} 极限估计相对误差 {stderr / max(abs(estimate), 1e-300):.3g}"
                       f" 超过 {tolerance}，建议增加样本")
    return LimitEstimate(estimate, stderr, samples, regime, constant, resample)
