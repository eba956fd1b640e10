"""JSON spec files for tabular and linear MDPs.

Linear specs carry ``d``, ``phi`` (SA x d), ``mu`` (d x S), ``theta`` (d) and ``gamma``.

Floats are written with ``repr`` precision, so ``loads(dumps(m)) == m`` holds
bit for bit.
"""

import json

import numpy as np

from .errors import ValidationError
from .mdp import TabularMdp


def _noise_entry(var, bern):
    if bern:
        return {"kind": "bernoulli"}
    return {"kind": "gaussian", "var": float(var)}


def mdp_to_dict(mdp):
    S, A = mdp.shape
    entries = [[_noise_entry(mdp.reward_var[s, a], mdp.bernoulli[s, a]) for a in range(A)]
               for s in range(S)]
    flat = [e for row in entries for e in row]
    noise = flat[0] if all(e == flat[0] for e in flat) else entries
    out = {
        "gamma": mdp.gamma,
        "num_states": S,
        "num_actions": A,
        "transitions": mdp.transitions.tolist(),
        "reward_means": mdp.reward_means.tolist(),
        "reward_noise": noise,
    }
    if not mdp.admissible.all():
        out["admissible"] = mdp.admissible.tolist()
    if mdp.name:
        out["name"] = mdp.name
    return out


def _parse_noise(spec, S, A):
    var = np.zeros((S, A))
    bern = np.zeros((S, A), dtype=bool)

    def one(entry, s, a):
        kind = entry.get("kind") if isinstance(entry, dict) else None
        if kind == "bernoulli":
            bern[s, a] = True
        elif kind == "gaussian":
            if "var" not in entry:
                raise ValidationError(f"gaussian reward_noise at ({s}, {a}) lacks 'var'")
            var[s, a] = float(entry["var"])
        else:
            raise ValidationError(f"unknown reward_noise entry at ({s}, {a}): {entry!r}")

    if isinstance(spec, dict):
        for s in range(S):
            for a in range(A):
                one(spec, s, a)
    else:
        if len(spec) != S or any(len(row) != A for row in spec):
            raise ValidationError(f"reward_noise must be a single entry or {S} x {A} nested list")
        for s in range(S):
            for a in range(A):
                one(spec[s][a], s, a)
    return var, bern


def mdp_from_dict(d):
    for key in ("gamma", "num_states", "num_actions", "transitions", "reward_means", "reward_noise"):
        if key not in d:
            raise ValidationError(f"MDP spec missing key {key!r}")
    S, A = int(d["num_states"]), int(d["num_actions"])
    P = np.array(d["transitions"], dtype=float)
    if P.shape != (S, A, S):
        raise ValidationError(f"transitions shape {P.shape} does not match ({S}, {A}, {S})")
    var, bern = _parse_noise(d["reward_noise"], S, A)
    return TabularMdp(transitions=P, reward_means=np.array(d["reward_means"], dtype=float),
                      reward_var=var, bernoulli=bern, gamma=float(d["gamma"]),
                      admissible=d.get("admissible"), name=d.get("name", ""))


def linear_to_dict(lin):
    return {"d": lin.dim, "phi": lin.phi.tolist(), "mu": lin.mu.tolist(),
            "theta": lin.theta.tolist(), "gamma": lin.gamma, "reward_var": lin.reward_var.tolist()}


def linear_from_dict(d):
    from .linear import LinearMdp

    for key in ("d", "phi", "mu", "theta", "gamma"):
        if key not in d:
            raise ValidationError(f"linear MDP spec missing key {key!r}")
    lin = LinearMdp(phi=d["phi"], mu=d["mu"], theta=d["theta"], gamma=float(d["gamma"]),
                    reward_var=d.get("reward_var", 0.0))
    if lin.dim != int(d["d"]):
        raise ValidationError(f"declared d={d['d']} but phi has {lin.dim} columns")
    return lin


def is_linear_spec(d):
    return "phi" in d and "mu" in d


def dumps(mdp):
    return json.dumps(mdp_to_dict(mdp), indent=1)


def loads(text):
    return mdp_from_dict(json.loads(text))


def save_mdp(mdp, path):
    with open(path, "w") as fh:
        fh.write(dumps(mdp))
        fh.write("\n")


def load_mdp(path):
    with open(path) as fh:
        return loads(fh.read())


def save_linear(lin, path):
    with open(path, "w") as fh:
        json.dump(linear_to_dict(lin), fh, indent=1)
        fh.write("\n")


def load_linear(path):
    with open(path) as fh:
        return linear_from_dict(json.load(fh))
