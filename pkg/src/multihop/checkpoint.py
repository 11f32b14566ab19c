"""Checkpoint archive: one uncompressed zip file holding

* ``metadata.json``: format version, network specs, hop count, loss weights,
  counters, RNG state, optimizer-state flag and a sha256 per array;
* ``arrays/<name>.npy``: one entry per named parameter / optimizer array.

Array names are ``<network>/<state_dict key>`` for parameters, e.g.
``gen_G/model.1.weight``, and ``optim/<network>/<param key>/<slot>`` for Adam
state (slots ``exp_avg``, ``exp_avg_sq``, ``step``).
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from .errors import IntegrityError, UnsupportedVersionError
from .networks import (
    NETWORK_NAMES,
    DiscriminatorSpec,
    GeneratorSpec,
    ModelBundle,
    build_bundle,
)

FORMAT_VERSION = 1
METADATA = "metadata.json"
_EPOCH = (1980, 1, 1, 0, 0, 0)  # fixed entry timestamps keep bytes reproducible


def _npy_bytes(array):
    buf = io.BytesIO()
    np.save(buf, np.array(array, order="C"), allow_pickle=False)  # keeps 0-d arrays 0-d
    return buf.getvalue()


def _entry(name):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    return info


def write_archive(path, metadata, arrays):
    """Write ``arrays`` (name -> ndarray) and ``metadata`` atomically to ``path``."""
    path = Path(path)
    blobs = {name: _npy_bytes(a) for name, a in arrays.items()}
    metadata = dict(metadata, format_version=FORMAT_VERSION)
    metadata["arrays"] = {
        name: {"sha256": hashlib.sha256(b).hexdigest()} for name, b in sorted(blobs.items())
    }
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w") as zf:
        zf.writestr(_entry(METADATA), json.dumps(metadata, indent=1, sort_keys=True))
        for name in sorted(blobs):
            zf.writestr(_entry(f"arrays/{name}.npy"), blobs[name])
    tmp.replace(path)
    return path


def read_metadata(path):
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read(METADATA))
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError, OSError) as exc:
        raise IntegrityError(f"{path}: unreadable checkpoint ({exc})") from exc
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"{path}: checkpoint format version {version!r} is not supported "
            f"(expected {FORMAT_VERSION})"
        )
    return meta


def read_archive(path):
    """Return (metadata, arrays), verifying the version and every checksum."""
    meta = read_metadata(path)
    arrays = {}
    try:
        with zipfile.ZipFile(path) as zf:
            for name, info in meta["arrays"].items():
                blob = zf.read(f"arrays/{name}.npy")
                if hashlib.sha256(blob).hexdigest() != info["sha256"]:
                    raise IntegrityError(f"{path}: checksum mismatch for {name}")
                arrays[name] = np.load(io.BytesIO(blob), allow_pickle=False)
    except (zipfile.BadZipFile, KeyError, ValueError, OSError) as exc:
        raise IntegrityError(f"{path}: corrupt checkpoint ({exc})") from exc
    return meta, arrays


# ------------------------------------------------------------ bundle <-> arrays


def bundle_arrays(bundle: ModelBundle):
    arrays = {}
    for net_name, net in bundle.networks().items():
        for key, tensor in net.state_dict().items():
            arrays[f"{net_name}/{key}"] = tensor.detach().cpu().numpy()
    return arrays


def bundle_metadata(bundle: ModelBundle):
    meta = bundle.spec_dict()
    meta["bundle_metadata"] = dict(bundle.metadata)
    return meta


def bundle_from_archive(meta, arrays):
    gspec = GeneratorSpec(**meta["generator"])
    dspec = DiscriminatorSpec(**meta["discriminator"])
    bundle = build_bundle(gspec, dspec, meta["trained_hop_count"], seed=0)
    bundle.metadata = dict(meta.get("bundle_metadata", {}))
    for net_name in NETWORK_NAMES:
        net = getattr(bundle, net_name)
        prefix = net_name + "/"
        state = {
            k[len(prefix) :]: torch.from_numpy(np.array(v))
            for k, v in arrays.items()
            if k.startswith(prefix)
        }
        if not state:
            raise IntegrityError(f"checkpoint holds no arrays for {net_name}")
        net.to(next(iter(state.values())).dtype)
        try:
            net.load_state_dict(state, strict=True)
        except RuntimeError as exc:
            raise IntegrityError(f"parameter arrays do not match the recorded specs: {exc}") from exc
    return bundle


def save_bundle(bundle, path, extra_metadata=None):
    meta = bundle_metadata(bundle)
    meta["has_optimizer_state"] = False
    meta.update(extra_metadata or {})
    return write_archive(path, meta, bundle_arrays(bundle))


def load_bundle(path):
    """Load only the networks from any checkpoint archive."""
    meta, arrays = read_archive(path)
    params = {k: v for k, v in arrays.items() if not k.startswith("optim/")}
    return bundle_from_archive(meta, params)
