"""JSON files holding an MDP and, optionally, a behavior policy.

The layout is documented by ``schemas/mdp.schema.json``. Floats are written
with ``repr`` precision, so load(save(x)) reproduces every probability bit for bit.
"""
from __future__ import annotations

import hashlib
import json
from importlib import resources
from pathlib import Path

import jsonschema

from .errors import InputError, SpecParseError
from .mdp_core import Mdp, Policy, check_policy, check_stochastic

FORMAT = "sc-lab-mdp"
VERSION = 1


def schema() -> dict:
    text = resources.files("sc_lab").joinpath("schemas/mdp.schema.json").read_text()
    return json.loads(text)


def to_document(mdp: Mdp, behavior: Policy | None = None, name: str | None = None) -> dict:
    doc = {"format": FORMAT, "version": VERSION}
    if name:
        doc["name"] = name
    names = mdp.action_names
    doc |= {
        "n_states": mdp.n_states,
        "initial_dist": mdp.initial_dist.tolist(),
        "terminal_success": sorted(mdp.terminal_success),
        "terminal_failure": sorted(mdp.terminal_failure),
        "states": [
            {"actions": [{"name": names[s][a] if names else str(a), "next": row.tolist()}
                         for a, row in enumerate(block)]}
            for s, block in enumerate(mdp.transitions)
        ],
    }
    if behavior is not None:
        doc["behavior"] = [row.tolist() for row in behavior]
    return doc


def dumps(mdp: Mdp, behavior: Policy | None = None, name: str | None = None) -> str:
    return json.dumps(to_document(mdp, behavior, name), indent=1) + "\n"


def save(path, mdp: Mdp, behavior: Policy | None = None, name: str | None = None) -> None:
    Path(path).write_text(dumps(mdp, behavior, name), encoding="utf-8", newline="\n")


def _where(err: jsonschema.ValidationError) -> str:
    return "/".join(str(p) for p in err.absolute_path) or "<root>"


def from_document(doc) -> tuple[Mdp, Policy | None]:
    try:
        jsonschema.validate(doc, schema())
    except jsonschema.ValidationError as err:
        raise SpecParseError(f"{_where(err)}: {err.message}") from None
    n = doc["n_states"]
    if len(doc["initial_dist"]) != n or len(doc["states"]) != n:
        raise SpecParseError(f"initial_dist and states must both have n_states={n} entries")
    for s, st in enumerate(doc["states"]):
        for a, act in enumerate(st["actions"]):
            if len(act["next"]) != n:
                raise SpecParseError(f"states/{s}/actions/{a}/next: expected {n} entries")
    try:
        mdp = Mdp(
            transitions=tuple([act["next"] for act in st["actions"]] for st in doc["states"]),
            initial_dist=doc["initial_dist"],
            terminal_success=doc["terminal_success"],
            terminal_failure=doc["terminal_failure"],
            action_names=tuple(tuple(act["name"] for act in st["actions"]) for st in doc["states"]),
        )
        check_stochastic(mdp)
        behavior = None
        if "behavior" in doc:
            behavior = Policy(tuple(doc["behavior"]), name="behavior")
            check_policy(mdp, behavior, "behavior")
    except InputError as err:
        raise SpecParseError(str(err)) from None
    return mdp, behavior


def loads(text: str) -> tuple[Mdp, Policy | None]:
    if not text.strip():
        raise SpecParseError("empty MDP file", line=1)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise SpecParseError(f"column {err.colno}: {err.msg}", line=err.lineno) from None
    return from_document(doc)


def load(path) -> tuple[Mdp, Policy | None]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise InputError(f"cannot read {path}: {err.strerror}") from None
    return loads(text)


def digest(path) -> str:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError as err:
        raise InputError(f"cannot read {path}: {err.strerror}") from None
