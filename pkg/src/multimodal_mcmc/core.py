"""Target interface, seeded streams, chain execution and ergodic averages."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Protocol, Sequence

import numpy as np


class SamplerError(Exception):
    """Base class for sampler failures."""


class NumericalError(SamplerError):
    """A kernel produced a non-finite quantity it cannot recover from."""


class ChainAborted(SamplerError):
    """Raised by :func:`run_chain` when a kernel fails mid-run.

    The partial trace (with ``failure`` set) is attached as ``.trace``.
    """

    def __init__(self, message: str, trace: "Trace"):
        super().__init__(message)
        self.trace = trace


class Space(str, enum.Enum):
    CONTINUOUS = "continuous"
    BINARY_LATTICE = "binary-lattice"
    TABULAR = "tabular"


@dataclass(frozen=True)
class TargetModel:
    """An unnormalized log-density on a continuous, binary or tabular space.

    ``log_density`` returns ``-inf`` for out-of-support states and must not
    return NaN. Tabular targets carry ``exact_table``, the normalized
    probabilities, which tests use as an exact oracle.
    """

    dimension: int
    space: Space
    log_density: Callable[[object], float]
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    exact_table: Optional[np.ndarray] = None
    name: str = ""
    params: object = None

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        object.__setattr__(self, "space", Space(self.space))
        if self.space is Space.TABULAR:
            if self.exact_table is None:
                raise ValueError("tabular targets need exact_table")
            table = np.asarray(self.exact_table, dtype=float)
            if abs(table.sum() - 1.0) > 1e-12:
                raise ValueError("exact_table must sum to 1 within 1e-12")
            object.__setattr__(self, "exact_table", table)
        elif self.exact_table is not None:
            raise ValueError("exact_table is only meaningful for tabular targets")

    @property
    def n_states(self) -> int:
        if self.exact_table is None:
            raise AttributeError("not a tabular target")
        return len(self.exact_table)

    def log_table(self) -> np.ndarray:
        """Unnormalized log-density evaluated on every tabular state."""
        return np.array([self.log_density(i) for i in range(self.n_states)])


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id)``.

    Streams are PCG64 generators seeded through ``SeedSequence`` with
    ``spawn_key=(stream_id,)``; numpy documents distinct spawn keys as
    producing statistically independent sequences.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.PCG64(seq))


def make_rng(seed: int, stream_id: int = 0) -> np.random.Generator:
    return RngStream(seed, stream_id).generator()


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    raise TypeError(f"expected Generator or RngStream, got {type(rng).__name__}")


@dataclass(slots=True)
class ChainState:
    position: object
    log_density: float
    iteration: int = 0

    @classmethod
    def initial(cls, target: TargetModel, position) -> "ChainState":
        if target.space is Space.TABULAR:
            position = int(position)
        else:
            position = np.array(position, dtype=float if target.space is Space.CONTINUOUS else np.int8)
        lp = float(target.log_density(position))
        if not lp > -math.inf:
            raise ValueError("initial state lies outside the target's support")
        return cls(position, lp, 0)


class StepInfo(NamedTuple):
    accepted: bool
    kernel_tag: str
    aux_index: int = -1


class Kernel(Protocol):
    def __call__(self, state: ChainState, target: TargetModel,
                 rng: np.random.Generator) -> tuple[ChainState, StepInfo]: ...


@dataclass
class Trace:
    """Chain states plus per-transition metadata.

    ``states`` has one row per stored state (initial included), ``accepted``,
    ``kernel_tag`` and ``aux_index`` one entry per transition. ``aux_index``
    uses -1 for "not applicable".
    """

    states: np.ndarray
    accepted: np.ndarray
    kernel_tag: list
    aux_index: np.ndarray
    space: Space = Space.CONTINUOUS
    failure: Optional[str] = None

    def __post_init__(self):
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        if len(self.accepted) != len(self.states) - 1:
            raise ValueError("meta length must equal states length minus one")

    def __len__(self) -> int:
        return len(self.states)

    @property
    def dimension(self) -> int:
        return self.states.shape[1]

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted)) if len(self.accepted) else float("nan")

    def truncated(self, n_states: int) -> "Trace":
        return Trace(self.states[:n_states].copy(), self.accepted[: n_states - 1].copy(),
                     list(self.kernel_tag[: n_states - 1]), self.aux_index[: n_states - 1].copy(),
                     self.space, self.failure)

    def to_csv(self, path, extra_columns: Optional[dict] = None) -> None:
        write_trace_csv(path, self, extra_columns)

    @classmethod
    def from_csv(cls, path) -> "Trace":
        return read_trace_csv(path)


def _state_row(state, space: Space) -> np.ndarray:
    if space is Space.TABULAR:
        return np.array([state])
    return np.asarray(state)


def run_chain(target: TargetModel, kernel: Kernel, init, n_iter: int, rng) -> Trace:
    """Run ``n_iter`` transitions of ``kernel`` from ``init``.

    The output depends only on the target, kernel configuration, ``init``,
    ``n_iter`` and the stream. On a :class:`SamplerError` the run stops and
    :class:`ChainAborted` carries the partial trace.
    """
    if n_iter < 0:
        raise ValueError("n_iter must be non-negative")
    gen = as_generator(rng)
    state = init if isinstance(init, ChainState) else ChainState.initial(target, init)
    first = _state_row(state.position, target.space)
    dtype = float if target.space is Space.CONTINUOUS else np.int64
    states = np.empty((n_iter + 1, first.size), dtype=dtype)
    states[0] = first
    accepted = np.zeros(n_iter, dtype=bool)
    aux = np.full(n_iter, -1, dtype=np.int64)
    tags: list = [""] * n_iter
    for n in range(n_iter):
        try:
            state, info = kernel(state, target, gen)
        except SamplerError as exc:
            trace = Trace(states[: n + 1].copy(), accepted[:n].copy(), tags[:n], aux[:n].copy(),
                          target.space, failure=f"iteration {n + 1}: {exc}")
            raise ChainAborted(str(exc), trace) from exc
        states[n + 1] = _state_row(state.position, target.space)
        accepted[n] = info.accepted
        tags[n] = info.kernel_tag
        aux[n] = info.aux_index
    return Trace(states, accepted, tags, aux, target.space)


def mh_step(state: ChainState, propose, target: TargetModel, rng: np.random.Generator,
            kernel_tag: str = "mh", inverse_temperature: float = 1.0) -> tuple[ChainState, StepInfo]:
    """One Metropolis-Hastings transition.

    ``propose(x, rng)`` returns ``(y, log q(y,x) - log q(x,y))``; symmetric
    proposals return 0. Out-of-support proposals are rejected. The target may
    be tempered by ``inverse_temperature``.
    """
    y, log_q_ratio = propose(state.position, rng)
    if not math.isfinite(log_q_ratio):
        raise NumericalError(f"non-finite proposal density ratio {log_q_ratio!r}")
    log_py = float(target.log_density(y))
    u = rng.random()
    if math.isnan(log_py):
        raise NumericalError("target log-density returned NaN")
    if log_py == -math.inf:
        return ChainState(state.position, state.log_density, state.iteration + 1), StepInfo(False, kernel_tag)
    log_alpha = inverse_temperature * (log_py - state.log_density) + log_q_ratio
    if u == 0.0 or math.log(u) < log_alpha:
        return ChainState(y, log_py, state.iteration + 1), StepInfo(True, kernel_tag)
    return ChainState(state.position, state.log_density, state.iteration + 1), StepInfo(False, kernel_tag)


def acceptance_probability(log_target_ratio: float, log_q_ratio: float = 0.0) -> float:
    """min(1, pi(y) q(y,x) / (pi(x) q(x,y))) from log ratios."""
    s = log_target_ratio + log_q_ratio
    if math.isnan(s):
        raise NumericalError("acceptance ratio is NaN")
    return 1.0 if s >= 0 else math.exp(s)


def ergodic_average(trace: Trace, f: Optional[Callable] = None) -> np.ndarray:
    """Mean of ``f`` over every stored state, initial state included."""
    if len(trace) == 0:
        raise ValueError("empty trace")
    states = trace.states if trace.space is not Space.TABULAR else trace.states[:, 0]
    if f is None:
        values = np.asarray(states, dtype=float)
        if not np.all(np.isfinite(values)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(values.reshape(len(values), -1)), axis=1))[0])
            raise NumericalError(f"non-finite value at iteration {bad}")
        return np.atleast_1d(values.mean(axis=0))
    total = None
    for n, x in enumerate(states):
        v = np.atleast_1d(np.asarray(f(x), dtype=float))
        if not np.all(np.isfinite(v)):
            raise NumericalError(f"f returned a non-finite value at iteration {n}")
        total = v.copy() if total is None else total + v
    return total / len(states)


# -- trace CSV --------------------------------------------------------------

def _fmt(v, integer: bool) -> str:
    return str(int(v)) if integer else repr(float(v))


def write_trace_csv(path, trace: Trace, extra_columns: Optional[dict] = None) -> None:
    """Write ``iter, accepted, kernel_tag, aux_index, x_0..x_{d-1}`` rows.

    Row 0 holds the initial state with empty metadata. ``extra_columns`` maps
    a column name to one value per stored state (e.g. importance weights).
    """
    integer = trace.space is not Space.CONTINUOUS
    d = trace.dimension
    extra_columns = extra_columns or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "accepted", "kernel_tag", "aux_index"]
                   + [f"x_{j}" for j in range(d)] + list(extra_columns))
        for n in range(len(trace)):
            if n == 0:
                meta = ["0", "", "init", ""]
            else:
                a = trace.aux_index[n - 1]
                meta = [str(n), str(int(trace.accepted[n - 1])), trace.kernel_tag[n - 1],
                        "" if a < 0 else str(int(a))]
            row = meta + [_fmt(v, integer) for v in trace.states[n]]
            row += [repr(float(col[n])) for col in extra_columns.values()]
            w.writerow(row)
        if trace.failure:
            w.writerow([f"# failed: {trace.failure}"])


def read_trace_csv(path, space: Optional[Space] = None) -> Trace:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    failure = None
    if body and body[-1] and body[-1][0].startswith("# failed: "):
        failure = body.pop()[0][len("# failed: "):]
    xcols = [i for i, h in enumerate(header) if h.startswith("x_")]
    raw = [[r[i] for i in xcols] for r in body]
    integer = all("." not in v and "e" not in v and "inf" not in v and "nan" not in v
                  for row in raw for v in row)
    if space is None:
        space = Space.BINARY_LATTICE if integer else Space.CONTINUOUS
    states = np.array(raw, dtype=np.int64 if integer else float)
    accepted = np.array([r[1] == "1" for r in body[1:]], dtype=bool)
    tags = [r[2] for r in body[1:]]
    aux = np.array([int(r[3]) if r[3] else -1 for r in body[1:]], dtype=np.int64)
    return Trace(states, accepted, tags, aux, space, failure)
