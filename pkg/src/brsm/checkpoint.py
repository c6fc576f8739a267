"""Versioned binary checkpoints (a numpy ``.npz`` archive plus a JSON header)."""

import json

import numpy as np

FORMAT = "brsm-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, *, header, arrays):
    """Write ``arrays`` (name -> ndarray) with a JSON-serializable ``header``.

    The stored header always carries the format name, version and element type.
    """
    dtypes = {str(a.dtype) for a in arrays.values() if np.issubdtype(a.dtype, np.floating)}
    meta = dict(header, format=FORMAT, version=VERSION, dtype=",".join(sorted(dtypes)))
    payload = {f"a/{name}": np.asarray(value) for name, value in arrays.items()}
    payload["header"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path):
    """Return (header dict, arrays dict)."""
    try:
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(bytes(data["header"]).decode())
            arrays = {k[2:]: data[k] for k in data.files if k.startswith("a/")}
    except (OSError, KeyError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if header.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a {FORMAT} file")
    if header.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
    return header, arrays


def pack_optimizer(prefix, optimizer):
    arrays, scalars = {}, {}
    for key, value in optimizer.state_dict().items():
        if isinstance(value, np.ndarray):
            arrays[f"{prefix}/{key}"] = value
        else:
            scalars[key] = value
    return arrays, scalars


def unpack_optimizer(prefix, optimizer, arrays, scalars):
    state = dict(scalars)
    plen = len(prefix) + 1
    for key, value in arrays.items():
        if key.startswith(prefix + "/"):
            state[key[plen:]] = value
    optimizer.load_state_dict(state)
