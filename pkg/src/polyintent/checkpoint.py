"""Versioned encoder+vocab checkpoint persistence.

Layout: canonical JSON header, a ``\\n\\0`` separator, the little-endian
float64 parameter payload in canonical parameter order, and a trailing
8-byte truncated SHA-256 of the payload. The header carries the format
version, encoder config, inline vocab, a tensor index (name/shape/byte
offset), and the checksum algorithm id, so the file is self-describing and
inspectable without reading the payload.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json

import numpy as np

from . import autodiff as ad
from .encoder import EncoderConfig, EncoderModel, parameter_spec
from .errors import CorruptCheckpointError, UnsupportedVersionError
from .tokenizer import Vocab

FORMAT_VERSION = 1
CHECKSUM_ALGORITHM = "sha256-8"
_SEPARATOR = b"\n\x00"
_CHECKSUM_BYTES = 8


def _payload(model: EncoderModel) -> bytes:
    return b"".join(
        p.data.astype("<f8").tobytes(order="C") for p in model.params.values()
    )


def model_digest(model: EncoderModel) -> str:
    """Full SHA-256 hex digest of the parameter payload (for tests/manifests)."""
    return hashlib.sha256(_payload(model)).hexdigest()


def save_checkpoint(model: EncoderModel, vocab: Vocab, path):
    payload = _payload(model)
    index = []
    offset = 0
    for name, tensor in model.params.items():
        index.append({"name": name, "shape": list(tensor.data.shape), "offset": offset})
        offset += tensor.data.size * 8
    header = {
        "version": FORMAT_VERSION,
        "config": dataclasses.asdict(model.config),
        "vocab": vocab.tokens,
        "max_vocab": vocab.max_vocab,
        "tensors": index,
        "checksum_algorithm": CHECKSUM_ALGORITHM,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(blob)
        fh.write(_SEPARATOR)
        fh.write(payload)
        fh.write(hashlib.sha256(payload).digest()[:_CHECKSUM_BYTES])


def _read_header_bytes(fh) -> bytes:
    buffer = b""
    while True:
        chunk = fh.read(65536)
        if not chunk:
            raise CorruptCheckpointError("no header separator found; file is not a checkpoint")
        buffer += chunk
        cut = buffer.find(_SEPARATOR)
        if cut >= 0:
            fh.seek(cut + len(_SEPARATOR))
            return buffer[:cut]


def _parse_header(raw: bytes) -> dict:
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"unreadable checkpoint header: {exc}") from exc
    version = header.get("version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"checkpoint version {version!r} not supported (expected {FORMAT_VERSION})"
        )
    return header


def inspect_checkpoint(path) -> dict:
    """Return the parsed header without reading the parameter payload."""
    with open(path, "rb") as fh:
        return _parse_header(_read_header_bytes(fh))


def load_checkpoint(path) -> tuple[EncoderModel, Vocab]:
    """Reconstruct the model and vocab; round trips are bit-exact."""
    with open(path, "rb") as fh:
        header = _parse_header(_read_header_bytes(fh))
        rest = fh.read()
    if len(rest) < _CHECKSUM_BYTES:
        raise CorruptCheckpointError("checkpoint truncated: payload shorter than its checksum")
    payload, stored = rest[:-_CHECKSUM_BYTES], rest[-_CHECKSUM_BYTES:]
    if hashlib.sha256(payload).digest()[:_CHECKSUM_BYTES] != stored:
        raise CorruptCheckpointError("checkpoint payload failed its integrity checksum")

    config = EncoderConfig(**header["config"])
    expected = parameter_spec(config)
    index = header.get("tensors", [])
    if [(e["name"], tuple(e["shape"])) for e in index] != [(n, s) for n, s in expected]:
        raise CorruptCheckpointError("tensor index does not match the declared config")
    total = sum(int(np.prod(e["shape"])) for e in index) * 8
    if len(payload) != total:
        raise CorruptCheckpointError(
            f"payload length {len(payload)} does not match tensor index total {total}"
        )
    params: dict[str, ad.Tensor] = {}
    for entry in index:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        start = entry["offset"]
        array = np.frombuffer(payload, dtype="<f8", count=count, offset=start)
        params[entry["name"]] = ad.Tensor(
            array.astype(np.float64).reshape(shape), requires_grad=True
        )
    vocab = Vocab(header["vocab"], max_vocab=header.get("max_vocab", len(header["vocab"])))
    return EncoderModel(config, params), vocab
