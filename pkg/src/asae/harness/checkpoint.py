"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    b"ASAE"                      magic
    u32 version                  currently 1
    u32 n, n bytes               UTF-8 JSON metadata
    u32 count                    number of arrays
    count times:
        u32 n, n bytes           UTF-8 array name
        u32 ndim, ndim * u64     shape
        prod(shape) * f64        values, C order
"""

import json
import struct

import numpy as np

from ..critic import JointQCritic
from ..diffmath import MlpParams
from ..exceptions import DataError

MAGIC = b"ASAE"
VERSION = 1


def _pack_bytes(data):
    return struct.pack("<I", len(data)) + data


def write_checkpoint(path, arrays, metadata):
    """Write named float arrays plus JSON metadata to ``path``."""
    parts = [MAGIC, struct.pack("<I", VERSION), _pack_bytes(json.dumps(metadata, sort_keys=True).encode())]
    parts.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        parts.append(_pack_bytes(name.encode()))
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, data, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n):
        if self.pos + n > len(self.data):
            raise DataError(f"{self.path}: truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def blob(self):
        return self.take(self.u32())


def read_checkpoint(path):
    """Return ``(arrays, metadata)`` from a checkpoint file."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), path)
    if r.take(4) != MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic bytes)")
    version = r.u32()
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}, expected {VERSION}")
    metadata = json.loads(r.blob().decode())
    arrays = {}
    for _ in range(r.u32()):
        name = r.blob().decode()
        ndim = r.u32()
        shape = struct.unpack(f"<{ndim}Q", r.take(8 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(r.data):
        raise DataError(f"{path}: {len(r.data) - r.pos} trailing bytes after the last array")
    return arrays, metadata


def _params_from(arrays, prefix, activation):
    n_layers = sum(1 for k in arrays if k.startswith(prefix) and k.endswith(".weight"))
    if n_layers == 0:
        raise DataError(f"checkpoint has no arrays under {prefix!r}")
    flat = []
    for i in range(n_layers):
        flat += [arrays[f"{prefix}layers.{i}.weight"], arrays[f"{prefix}layers.{i}.bias"]]
    return MlpParams.from_arrays(flat, activation)


def learner_arrays(state):
    """Named arrays of every actor and the critic (online and target)."""
    out = {}
    for a, params in enumerate(state.actors):
        for name, arr in params.named_arrays().items():
            out[f"actor.{a}.{name}"] = arr
    for name, arr in state.critic.params.named_arrays().items():
        out[f"critic.{name}"] = arr
    for name, arr in state.critic.target.named_arrays().items():
        out[f"critic_target.{name}"] = arr
    return out


def save_learner(path, estimator, game, seed, config=None):
    state = estimator.state_
    metadata = {
        "format": "asae-checkpoint",
        "seed": int(seed),
        "iteration": int(state.iteration),
        "env_steps": int(state.env_steps),
        "algorithm": estimator.algorithm,
        "activation": estimator.activation,
        "env_id": game.env_id,
        "env_params": game.params(),
        "n_agents": game.n_agents,
        "n_actions": game.n_actions,
        "obs_dim": game.obs_dim,
        "state_dim": game.state_dim,
        "snapshot_digest": state.snapshot.digest,
    }
    if config is not None:
        metadata["config"] = config.to_dict()
    write_checkpoint(path, learner_arrays(state), metadata)


def load_actors(path):
    """Actor parameters and metadata of a checkpoint."""
    arrays, meta = read_checkpoint(path)
    actors = [_params_from(arrays, f"actor.{a}.", meta["activation"]) for a in range(meta["n_agents"])]
    return actors, meta


def load_critic(path):
    arrays, meta = read_checkpoint(path)
    params = _params_from(arrays, "critic.", meta["activation"])
    critic = JointQCritic(meta["state_dim"], meta["n_agents"], meta["n_actions"], params=params)
    critic.target = _params_from(arrays, "critic_target.", meta["activation"])
    return critic, meta
