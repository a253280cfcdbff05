"""Binary checkpoint container.

Layout: magic "UGPC", format version u32 LE, then for each tensor in
lexicographic name order: name length u16 LE + UTF-8 name, rank u8, dims as
u32 LE each, payload as little-endian f64. The params version counter rides
along as tensor "_meta/version" of shape [1]; network structure, optimizer
state ("opt/...") and consolidation anchors ("ewc/<i>/...") use the same
tensor encoding.
"""

import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .losses import EwcAnchor
from .net import CONV, DENSE, RELU, LayerSpec, NetworkParams
from .optim import RmsPropState

MAGIC = b"UGPC"
FORMAT_VERSION = 1

_KIND_CODES = {CONV: 0.0, DENSE: 1.0, RELU: 2.0}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}


def write_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        for name in sorted(tensors):
            arr = np.asarray(tensors[name], dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.astype("<f8").tobytes(order="C"))


def read_tensors(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    offset = 8
    tensors: dict[str, np.ndarray] = {}
    while offset < len(data):
        try:
            (name_len,) = struct.unpack_from("<H", data, offset)
            offset += 2
            name = data[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", data, offset)
            offset += 1
            dims = struct.unpack_from(f"<{rank}I", data, offset) if rank else ()
            offset += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            payload = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
            offset += 8 * count
        except (struct.error, ValueError) as exc:
            raise CheckpointError(f"{path}: truncated at byte {offset}") from exc
        tensors[name] = payload.reshape(dims).copy()
    return tensors


def _encode_arch(params: NetworkParams) -> np.ndarray:
    rows = []
    for spec in params.trunk:
        rows.append(
            [_KIND_CODES[spec.kind], float(spec.filters or spec.width), float(spec.size),
             float(spec.stride)]
        )
    if not rows:
        return np.zeros((0, 4))
    return np.array(rows, dtype=np.float64)


def _decode_arch(arr: np.ndarray) -> tuple[LayerSpec, ...]:
    specs = []
    for row in np.asarray(arr).reshape(-1, 4):
        kind = _CODE_KINDS.get(row[0])
        if kind is None:
            raise CheckpointError(f"unknown layer kind code {row[0]}")
        if kind == CONV:
            specs.append(LayerSpec.conv(int(row[1]), int(row[2]), int(row[3])))
        elif kind == DENSE:
            specs.append(LayerSpec.dense(int(row[1])))
        else:
            specs.append(LayerSpec.relu())
    return tuple(specs)


def params_to_tensors(params: NetworkParams) -> dict[str, np.ndarray]:
    out = dict(params.tensors)
    out["_meta/version"] = np.array([float(params.version)])
    out["_meta/arch"] = _encode_arch(params)
    out["_meta/input_shape"] = np.array([float(d) for d in params.input_shape])
    return out


def params_from_tensors(tensors: dict[str, np.ndarray]) -> NetworkParams:
    try:
        version = int(tensors["_meta/version"][0])
        trunk = _decode_arch(tensors["_meta/arch"])
        input_shape = tuple(int(d) for d in tensors["_meta/input_shape"])
    except KeyError as exc:
        raise CheckpointError(f"missing metadata tensor {exc}") from exc

    weights = {k: v for k, v in tensors.items() if k.startswith(("trunk/", "head/"))}
    tasks: dict[str, int] = {}
    for name, arr in weights.items():
        if name.startswith("head/") and name.endswith("/policy/w"):
            task = name[len("head/") : -len("/policy/w")]
            tasks[task] = arr.shape[1]
    if not tasks:
        raise CheckpointError("checkpoint contains no policy heads")
    return NetworkParams(
        tensors=weights, trunk=trunk, input_shape=input_shape, tasks=tasks, version=version
    )


def opt_to_tensors(state: RmsPropState) -> dict[str, np.ndarray]:
    out = {f"opt/acc/{name}": acc for name, acc in state.acc.items()}
    out["opt/rho"] = np.array([state.rho])
    out["opt/lr"] = np.array([state.lr])
    out["opt/epsilon"] = np.array([state.epsilon])
    out["opt/clip_norm"] = np.array([state.clip_norm if state.clip_norm is not None else -1.0])
    return out


def opt_from_tensors(tensors: dict[str, np.ndarray]) -> RmsPropState | None:
    if "opt/rho" not in tensors:
        return None
    clip = float(tensors["opt/clip_norm"][0])
    return RmsPropState(
        acc={k[len("opt/acc/"):]: v for k, v in tensors.items() if k.startswith("opt/acc/")},
        rho=float(tensors["opt/rho"][0]),
        lr=float(tensors["opt/lr"][0]),
        epsilon=float(tensors["opt/epsilon"][0]),
        clip_norm=None if clip < 0 else clip,
    )


def anchors_to_tensors(anchors) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for i, anchor in enumerate(anchors):
        for name, t in anchor.theta_star.items():
            out[f"ewc/{i}/theta_star/{name}"] = t
        for name, f in anchor.fisher_diag.items():
            out[f"ewc/{i}/fisher/{name}"] = f
        out[f"ewc/{i}/lambda"] = np.array([anchor.lam])
    return out


def anchors_from_tensors(tensors: dict[str, np.ndarray]) -> list[EwcAnchor]:
    indices = sorted(
        {int(k.split("/")[1]) for k in tensors if k.startswith("ewc/")}
    )
    anchors = []
    for i in indices:
        star_prefix = f"ewc/{i}/theta_star/"
        fisher_prefix = f"ewc/{i}/fisher/"
        theta_star = {k[len(star_prefix):]: v for k, v in tensors.items()
                      if k.startswith(star_prefix)}
        fisher = {k[len(fisher_prefix):]: v for k, v in tensors.items()
                  if k.startswith(fisher_prefix)}
        lam = float(tensors[f"ewc/{i}/lambda"][0])
        anchors.append(EwcAnchor(theta_star=theta_star, fisher_diag=fisher, lam=lam))
    return anchors


def save_checkpoint(path, params: NetworkParams, opt_state: RmsPropState | None = None,
                    anchors=()) -> None:
    tensors = params_to_tensors(params)
    if opt_state is not None:
        tensors.update(opt_to_tensors(opt_state))
    tensors.update(anchors_to_tensors(anchors))
    write_tensors(path, tensors)


def load_checkpoint(path):
    """Returns (params, optimizer state or None, list of anchors)."""
    tensors = read_tensors(path)
    return (
        params_from_tensors(tensors),
        opt_from_tensors(tensors),
        anchors_from_tensors(tensors),
    )
