"""Deterministic multi-turn tool environments with exactly enumerable state spaces.

Two environments are shipped:

``calc_chain``
    An accumulator starts at 0 and must be driven to a seed-dependent target in
    ``[5, 15]`` using ``ADD1``, ``ADD2``, ``MUL2`` and ``RESET``, then ``SUBMIT``-ted.
    Every action also has a malformed twin that leaves the state untouched and
    is flagged ``well_formed=False``.  An operation that would push the
    accumulator above 20 is a valid call that reports an error and leaves the
    accumulator unchanged, and so is a wrong ``SUBMIT``; episodes only fail by
    running out of turns.

``key_door``
    A 5x5 grid.  The agent starts in the top-left corner, picks up a key in the
    bottom-left corner with ``INTERACT`` and opens the door in the bottom-right
    corner with a second ``INTERACT``.  Moves into the border leave the agent
    in place.  Malformed twins of all five actions are no-ops.

Each environment is an immutable definition.  Episode state is the small
:class:`EnvState` value passed in and out of :meth:`ToolEnv.step`, so any
number of episodes can run side by side.  After construction the reachable
state space is enumerated breadth-first, which gives a stable state index for
the tabular policy and dense transition tables for vectorised rollouts.
"""
from __future__ import annotations

import functools
from collections import deque
from dataclasses import dataclass
from typing import Hashable

import numpy as np

from .errors import ConfigError, ContractViolation

__all__ = [
    "EnvState",
    "StepOutcome",
    "EpisodeSpec",
    "ToolEnv",
    "CalcChain",
    "KeyDoor",
    "ENV_REGISTRY",
    "make_env",
    "reset",
    "enumerate_states",
    "shortest_solution",
]


@dataclass(frozen=True)
class EnvState:
    state_index: int
    turn: int


@dataclass(frozen=True)
class StepOutcome:
    next_state: EnvState
    done: bool
    success: bool
    tool_call_valid: bool
    well_formed: bool


@dataclass(frozen=True)
class EpisodeSpec:
    env_name: str
    task_seed: int
    max_turns: int | None = None

    def __post_init__(self):
        if self.max_turns is not None and self.max_turns < 1:
            raise ConfigError(f"max_turns must be >= 1, got {self.max_turns}")


class ToolEnv:
    """Base class: subclasses describe raw states and transitions.

    Subclasses implement ``_initial(task_seed)`` returning a hashable raw state
    and ``_transition(raw, action)`` returning
    ``(next_raw, success, failed, well_formed, tool_call_valid)``.  The base
    class adds the turn counter, the timeout rule and the state indexing.
    """

    name: str = ""
    action_names: tuple[str, ...] = ()
    default_max_turns: int = 1

    def __init__(self, max_turns: int | None = None):
        self.max_turns = int(max_turns if max_turns is not None else self.default_max_turns)
        if self.max_turns < 1:
            raise ConfigError(f"env.max_turns must be >= 1, got {self.max_turns}")
        self._states: list[Hashable] = []
        self._index: dict[Hashable, int] = {}
        self._enumerate()
        self._build_tables()

    # -- subclass hooks ---------------------------------------------------
    def _initial(self, task_seed: int) -> Hashable:
        raise NotImplementedError

    def _transition(self, raw, action: int):
        raise NotImplementedError

    def _initial_seeds(self) -> range:
        """Seeds whose initial states cover every distinct start state."""
        raise NotImplementedError

    # -- enumeration --------------------------------------------------------
    @property
    def action_count(self) -> int:
        return len(self.action_names)

    @property
    def state_count(self) -> int:
        return len(self._states)

    def _enumerate(self):
        starts = []
        for seed in self._initial_seeds():
            raw = self._initial(seed)
            if raw not in starts:
                starts.append(raw)
        # breadth-first over (raw, turn); raw states are indexed in discovery order
        seen_pairs = set()
        queue = deque()
        for raw in starts:
            self._register(raw)
            seen_pairs.add((raw, 0))
            queue.append((raw, 0))
        while queue:
            raw, turn = queue.popleft()
            if turn >= self.max_turns:
                continue
            for a in range(self.action_count):
                nxt, success, failed, _, _ = self._transition(raw, a)
                self._register(nxt)
                if success or failed:
                    continue
                key = (nxt, turn + 1)
                if key not in seen_pairs:
                    seen_pairs.add(key)
                    queue.append(key)

    def _register(self, raw):
        if raw not in self._index:
            self._index[raw] = len(self._states)
            self._states.append(raw)

    def _build_tables(self):
        S, A = self.state_count, self.action_count
        self.next_index = np.zeros((S, A), dtype=np.int64)
        self.success_table = np.zeros((S, A), dtype=bool)
        self.failed_table = np.zeros((S, A), dtype=bool)
        self.well_formed_table = np.zeros((S, A), dtype=bool)
        self.tool_valid_table = np.zeros((S, A), dtype=bool)
        for s, raw in enumerate(self._states):
            for a in range(A):
                nxt, success, failed, wf, tv = self._transition(raw, a)
                # terminal raw states may have successors outside the table; they are never stepped
                self.next_index[s, a] = self._index.get(nxt, s)
                self.success_table[s, a] = success
                self.failed_table[s, a] = failed
                self.well_formed_table[s, a] = wf
                self.tool_valid_table[s, a] = tv
        for table in (self.next_index, self.success_table, self.failed_table,
                      self.well_formed_table, self.tool_valid_table):
            table.setflags(write=False)

    def raw_state(self, state: EnvState | int):
        idx = state.state_index if isinstance(state, EnvState) else int(state)
        return self._states[idx]

    def index_of(self, raw) -> int:
        return self._index[raw]

    # -- episode interface ----------------------------------------------------
    def reset(self, task_seed: int) -> EnvState:
        return EnvState(self._index[self._initial(int(task_seed))], 0)

    def step(self, state: EnvState, action: int) -> StepOutcome:
        a = int(action)
        if not 0 <= a < self.action_count:
            raise ContractViolation(
                f"action {action} out of range for {self.name} ({self.action_count} actions)")
        if not 0 <= state.state_index < self.state_count:
            raise ContractViolation(f"state index {state.state_index} out of range")
        if not 0 <= state.turn < self.max_turns:
            raise ContractViolation(
                f"cannot step at turn {state.turn}; episode limit is {self.max_turns}")
        nxt, success, failed, wf, tv = self._transition(self._states[state.state_index], a)
        turn = state.turn + 1
        done = success or failed or turn >= self.max_turns
        return StepOutcome(EnvState(self._index[nxt], turn), done, success, tv, wf)

    def __repr__(self):
        return f"{type(self).__name__}(max_turns={self.max_turns}, states={self.state_count})"


class CalcChain(ToolEnv):
    name = "calc_chain"
    OPS = ("ADD1", "ADD2", "MUL2", "RESET", "SUBMIT")
    action_names = OPS + tuple(op + "_MALFORMED" for op in OPS)
    default_max_turns = 10
    ACC_MAX = 20
    TARGET_LO = 5
    TARGET_HI = 15

    ADD1, ADD2, MUL2, RESET, SUBMIT = range(5)

    def _initial_seeds(self):
        return range(self.TARGET_HI - self.TARGET_LO + 1)

    def target_for(self, task_seed: int) -> int:
        return self.TARGET_LO + int(task_seed) % (self.TARGET_HI - self.TARGET_LO + 1)

    def _initial(self, task_seed):
        # (accumulator, target, turn)
        return (0, self.target_for(task_seed), 0)

    def _transition(self, raw, action):
        acc, target, turn = raw
        turn += 1
        if action >= len(self.OPS):
            return (acc, target, turn), False, False, False, False
        if action == self.SUBMIT:
            # a wrong answer is reported back and the episode goes on
            return (acc, target, turn), acc == target, False, True, True
        if action == self.RESET:
            return (0, target, turn), False, False, True, True
        new = {self.ADD1: acc + 1, self.ADD2: acc + 2, self.MUL2: acc * 2}[action]
        if new > self.ACC_MAX:
            return (acc, target, turn), False, False, True, True
        return (new, target, turn), False, False, True, True


class KeyDoor(ToolEnv):
    name = "key_door"
    MOVES = ("UP", "DOWN", "LEFT", "RIGHT", "INTERACT")
    action_names = MOVES + tuple(m + "_MALFORMED" for m in MOVES)
    default_max_turns = 30
    SIZE = 5
    START = (0, 0)
    KEY = (4, 0)
    DOOR = (4, 4)

    UP, DOWN, LEFT, RIGHT, INTERACT = range(5)
    _DELTAS = {0: (-1, 0), 1: (1, 0), 2: (0, -1), 3: (0, 1)}

    def _initial_seeds(self):
        return range(1)

    def _initial(self, task_seed):
        # (row, col, has_key, door_open); the layout does not depend on the seed
        return (*self.START, False, False)

    def _transition(self, raw, action):
        row, col, key, door = raw
        if action >= len(self.MOVES):
            return raw, False, False, False, False
        if action == self.INTERACT:
            if (row, col) == self.KEY and not key:
                return (row, col, True, door), False, False, True, True
            if (row, col) == self.DOOR and key:
                return (row, col, key, True), True, False, True, True
            return raw, False, False, True, True
        dr, dc = self._DELTAS[action]
        r = min(max(row + dr, 0), self.SIZE - 1)
        c = min(max(col + dc, 0), self.SIZE - 1)
        return (r, c, key, door), False, False, True, True


ENV_REGISTRY: dict[str, type[ToolEnv]] = {cls.name: cls for cls in (CalcChain, KeyDoor)}


@functools.lru_cache(maxsize=None)
def make_env(name: str, max_turns: int | None = None) -> ToolEnv:
    try:
        cls = ENV_REGISTRY[name]
    except KeyError:
        raise ConfigError(
            f"unknown environment {name!r}; registered: {', '.join(sorted(ENV_REGISTRY))}"
        ) from None
    return cls(max_turns)


def reset(spec: EpisodeSpec) -> EnvState:
    return make_env(spec.env_name, spec.max_turns).reset(spec.task_seed)


def enumerate_states(env_name: str, max_turns: int | None = None) -> tuple[int, list]:
    """State count and the canonical index -> raw state list."""
    env = make_env(env_name, max_turns)
    return env.state_count, list(env._states)


def shortest_solution(env: ToolEnv, task_seed: int) -> list[int] | None:
    """Breadth-first search for a shortest successful action sequence."""
    start = env.reset(task_seed)
    parents = {start: None}
    queue = deque([start])
    while queue:
        state = queue.popleft()
        if state.turn >= env.max_turns:
            continue
        for a in range(env.action_count):
            out = env.step(state, a)
            if out.success:
                path = [a]
                while parents[state] is not None:
                    state, prev_a = parents[state]
                    path.append(prev_a)
                return path[::-1]
            if not out.done and out.next_state not in parents:
                parents[out.next_state] = (state, a)
                queue.append(out.next_state)
    return None
