"""Plain-text instance format.

::

    causal-mdp-instance 1
    n 3
    k 2

    [state 0]
    q 0.0 0.5 0.5

    [state 1]
    q 0.0 0.5 0.5
    reward_base 0.5
    override 1 1 0.8

    [transitions]
    0.5 0.5
    ...

Each ``override var value prob`` line adds one rule in priority order.
Transition rows follow the canonical intervention order.  Floats are
written with ``repr`` so a round trip is exact.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .env import Instance, InvalidArgument, RewardModel, StateModel, num_interventions

MAGIC = "causal-mdp-instance 1"


def _floats(xs) -> str:
    return " ".join(repr(float(x)) for x in xs)


def dumps(inst: Instance) -> str:
    lines = [MAGIC, f"n {inst.n}", f"k {inst.k}", "", "[state 0]", f"q {_floats(inst.start.q)}"]
    for i, s in enumerate(inst.intermediates, start=1):
        lines += ["", f"[state {i}]", f"q {_floats(s.q)}", f"reward_base {float(s.reward.base)!r}"]
        lines += [f"override {var} {value} {float(p)!r}" for var, value, p in s.reward.overrides]
    lines += ["", "[transitions]"]
    lines += [_floats(row) for row in inst.transitions]
    return "\n".join(lines) + "\n"


def loads(text: str) -> Instance:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or lines[0] != MAGIC:
        raise InvalidArgument("not a causal-mdp instance (bad header)")
    header = dict(ln.split(None, 1) for ln in lines[1:3])
    try:
        n, k = int(header["n"]), int(header["k"])
    except (KeyError, ValueError):
        raise InvalidArgument("header must give n and k")

    states: dict[int, dict] = {}
    rows: list[list[float]] = []
    section = None
    for ln in lines[3:]:
        if ln.startswith("["):
            name = ln.strip("[]").split()
            if name[0] == "state":
                section = int(name[1])
                states[section] = {"q": None, "base": 0.5, "overrides": []}
            elif name[0] == "transitions":
                section = "transitions"
            else:
                raise InvalidArgument(f"unknown section {ln}")
            continue
        if section == "transitions":
            rows.append([float(x) for x in ln.split()])
        elif isinstance(section, int):
            key, *vals = ln.split()
            st = states[section]
            if key == "q":
                st["q"] = [float(x) for x in vals]
            elif key == "reward_base":
                st["base"] = float(vals[0])
            elif key == "override":
                st["overrides"].append((int(vals[0]), int(vals[1]), float(vals[2])))
            else:
                raise InvalidArgument(f"unknown key {key!r} in state {section}")
        else:
            raise InvalidArgument(f"line outside any section: {ln!r}")

    if sorted(states) != list(range(k + 1)):
        raise InvalidArgument(f"expected sections for states 0..{k}")
    if len(rows) != num_interventions(n):
        raise InvalidArgument(f"expected {num_interventions(n)} transition rows, got {len(rows)}")
    start = StateModel(states[0]["q"])
    mids = tuple(
        StateModel(states[i]["q"], RewardModel(states[i]["base"], tuple(states[i]["overrides"])))
        for i in range(1, k + 1)
    )
    return Instance(start, mids, np.array(rows))


def save(inst: Instance, path: str | Path) -> None:
    Path(path).write_text(dumps(inst))


def load(path: str | Path) -> Instance:
    return loads(Path(path).read_text())
