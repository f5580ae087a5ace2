"""Dataset generation, function-level splits, batching, and the binary file format.

File layout (all little-endian)::

    7 bytes   magic "EDONDS1"
    u8        problem id (0 = diffusion, 1 = advdiff)
    u32       m (sensor count)
    u32       n_functions
    u32       P (queries per function)
    u64       master seed
    u32       length of the JSON blob that follows
    bytes     JSON generation parameters (sorted keys, compact)
    f64[...]  n_functions * P records of [u (m), v (m), x, t, s]
"""

import hashlib
import io
import json
import logging
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .exceptions import OperonError, ParameterError
from .functions import (
    FourierSpec,
    GrfSpec,
    SensorGrid,
    diffusion_coefficient,
    sample_grf,
    sample_periodic_fourier,
)
from .solvers import SolverGrid, sample_query, solve_advection_diffusion, solve_diffusion

log = logging.getLogger(__name__)

MAGIC = b"EDONDS1"
PROBLEMS = ("diffusion", "advdiff")
_HEADER = struct.Struct("<7sBIIIQI")
_COEFFICIENT_BASE = {"diffusion": 0.1, "advdiff": 1.0}
MAX_ATTEMPTS = 10


@dataclass
class GenerationParams:
    """Everything besides the seed that determines a dataset's content."""

    m: int = 101
    grf: GrfSpec = field(default_factory=GrfSpec)
    fourier: FourierSpec = field(default_factory=FourierSpec)
    grid: SolverGrid = field(default_factory=SolverGrid)
    coefficient_base: float = None
    coefficient_scale: float = 0.1
    coefficient_floor: float = 0.02

    def base_for(self, problem):
        if self.coefficient_base is not None:
            return self.coefficient_base
        return _COEFFICIENT_BASE[problem]

    @property
    def sensors(self):
        return SensorGrid(self.m)

    @property
    def dense(self):
        return SensorGrid(self.grid.nx)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParameterError(f"unknown generation parameters: {sorted(unknown)}")
        for key, typ in (("grf", GrfSpec), ("fourier", FourierSpec), ("grid", SolverGrid)):
            if key in d and isinstance(d[key], dict):
                d[key] = typ(**d[key])
        return cls(**d)


def _check_problem(problem):
    if problem not in PROBLEMS:
        raise ParameterError(f"unknown problem {problem!r}; expected one of {PROBLEMS}")


def draw_inputs(problem, params, seed):
    """Draw ``(u, v, a)`` for one function pair from a seed (int or SeedSequence)."""
    _check_problem(problem)
    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    u_seed, v_seed = seq.spawn(2)
    u = sample_grf(params.grf, params.sensors, u_seed, dense=params.dense)
    v = sample_periodic_fourier(params.fourier, params.sensors, v_seed, dense=params.dense)
    a = diffusion_coefficient(u, params.base_for(problem), params.coefficient_scale,
                              params.coefficient_floor)
    return u, v, a


def solve(problem, a, v, grid):
    """Ground-truth field for ``problem`` given coefficient and initial values on the solver grid."""
    _check_problem(problem)
    solver = solve_diffusion if problem == "diffusion" else solve_advection_diffusion
    return solver(a, v, grid)


def _function_records(problem, index, master_seed, params, queries):
    for attempt in range(MAX_ATTEMPTS):
        seq = np.random.SeedSequence(master_seed, spawn_key=(index, attempt))
        inputs_seed, query_seed = seq.spawn(2)
        u, v, a = draw_inputs(problem, params, inputs_seed)
        try:
            solution = solve(problem, a.dense_values, v.dense_values, params.grid)
        except OperonError as exc:
            log.warning("function %d attempt %d: solver failed (%s); redrawing", index, attempt, exc)
            continue
        yq = np.random.default_rng(query_seed).uniform(0.0, 1.0, size=(queries, 2))
        s = sample_query(solution, yq[:, 0], yq[:, 1])
        block = np.empty((queries, 2 * params.m + 3))
        block[:, :params.m] = u.values
        block[:, params.m:2 * params.m] = v.values
        block[:, 2 * params.m:2 * params.m + 2] = yq
        block[:, -1] = s
        return block
    raise OperonError(f"function {index}: solver failed {MAX_ATTEMPTS} times")


def _records_chunk(args):
    problem, indices, master_seed, params, queries = args
    return [_function_records(problem, i, master_seed, params, queries) for i in indices]


class Dataset:
    """An in-memory dataset: header fields plus an ``(n_functions * P, 2m + 3)`` record matrix."""

    def __init__(self, problem, m, n_functions, queries, master_seed, params, records):
        _check_problem(problem)
        self.problem = problem
        self.m = m
        self.n_functions = n_functions
        self.queries = queries
        self.master_seed = master_seed
        self.params = params
        self.records = records
        if records.shape != (n_functions * queries, 2 * m + 3):
            raise ParameterError(
                f"record matrix shape {records.shape} does not match header "
                f"({n_functions} functions x {queries} queries, m={m})"
            )

    def __len__(self):
        return self.records.shape[0]

    @property
    def u(self):
        return self.records[:, :self.m]

    @property
    def v(self):
        return self.records[:, self.m:2 * self.m]

    @property
    def y(self):
        return self.records[:, 2 * self.m:2 * self.m + 2]

    @property
    def s(self):
        return self.records[:, -1]

    def to_bytes(self):
        blob = json.dumps(self.params.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        buf = io.BytesIO()
        buf.write(_HEADER.pack(MAGIC, PROBLEMS.index(self.problem), self.m, self.n_functions,
                               self.queries, self.master_seed, len(blob)))
        buf.write(blob)
        buf.write(np.ascontiguousarray(self.records, dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data):
        if len(data) < _HEADER.size or data[:7] != MAGIC:
            raise ParameterError("not an operon dataset (bad magic)")
        _, problem_id, m, n_functions, queries, seed, n_blob = _HEADER.unpack_from(data)
        if problem_id >= len(PROBLEMS):
            raise ParameterError(f"unknown problem id {problem_id}")
        offset = _HEADER.size
        params = GenerationParams.from_dict(json.loads(data[offset:offset + n_blob].decode()))
        offset += n_blob
        n_values = n_functions * queries * (2 * m + 3)
        if len(data) != offset + 8 * n_values:
            raise ParameterError(
                f"dataset body has {len(data) - offset} bytes, header implies {8 * n_values}"
            )
        records = np.frombuffer(data, dtype="<f8", count=n_values, offset=offset)
        records = records.astype(np.float64).reshape(n_functions * queries, 2 * m + 3)
        return cls(PROBLEMS[problem_id], m, n_functions, queries, seed, params, records)

    def write(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def read(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def digest(self):
        return hashlib.sha256(self.to_bytes()).hexdigest()


def generate(problem, n_functions, queries, master_seed, params=None, jobs=1):
    """Sample functions, solve the PDE, and draw ``queries`` uniform query points per function.

    Function ``i`` draws from a stream derived from ``(master_seed, i)``, so
    the result does not depend on ``jobs``.
    """
    _check_problem(problem)
    if params is None:
        params = GenerationParams()
    if n_functions < 1 or queries < 1:
        raise ParameterError(f"need n_functions >= 1 and queries >= 1, got {n_functions}, {queries}")
    if master_seed < 0:
        raise ParameterError(f"master seed must be non-negative, got {master_seed}")
    indices = list(range(n_functions))
    if jobs > 1 and n_functions > 1:
        chunks = [indices[k::jobs] for k in range(jobs)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_records_chunk,
                                  [(problem, c, master_seed, params, queries) for c in chunks]))
        blocks = [None] * n_functions
        for chunk, part in zip(chunks, parts):
            for i, block in zip(chunk, part):
                blocks[i] = block
    else:
        blocks = _records_chunk((problem, indices, master_seed, params, queries))
    records = np.concatenate(blocks, axis=0)
    return Dataset(problem, params.m, n_functions, queries, master_seed, params, records)


@dataclass
class DatasetSplit:
    """Function-level partition; every query of a function lands on the same side."""

    train_functions: np.ndarray
    test_functions: np.ndarray
    queries: int

    def records(self, side):
        functions = self.train_functions if side == "train" else self.test_functions
        if side not in ("train", "test"):
            raise ParameterError(f"side must be 'train' or 'test', got {side!r}")
        return (functions[:, None] * self.queries + np.arange(self.queries)).ravel()


def split(dataset, train_fraction=0.9, seed=0):
    if not 0.0 < train_fraction < 1.0:
        raise ParameterError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = dataset.n_functions
    n_train = int(round(train_fraction * n))
    if n_train == 0 or n_train == n:
        raise ParameterError(
            f"train_fraction {train_fraction} of {n} functions leaves one side empty"
        )
    order = np.random.default_rng(seed).permutation(n)
    return DatasetSplit(np.sort(order[:n_train]), np.sort(order[n_train:]), dataset.queries)


class Batch(NamedTuple):
    functions: list
    y: np.ndarray
    s: np.ndarray
    index: np.ndarray


def take(dataset, index):
    rows = dataset.records[index]
    m = dataset.m
    return Batch([rows[:, :m], rows[:, m:2 * m]], rows[:, 2 * m:2 * m + 2], rows[:, -1], index)


def batch_iter(dataset, record_index, batch_size, epoch_seed):
    """Yield shuffled batches covering ``record_index`` once; the last batch may be short.

    ``Batch.s`` is a flat ``(b,)`` target vector.
    """
    record_index = np.asarray(record_index)
    if batch_size < 1:
        raise ParameterError(f"batch_size must be >= 1, got {batch_size}")
    if record_index.size == 0:
        raise ParameterError("cannot batch an empty split side")
    order = record_index[np.random.default_rng(epoch_seed).permutation(record_index.size)]
    for start in range(0, order.size, batch_size):
        yield take(dataset, order[start:start + batch_size])
