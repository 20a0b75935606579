"""Serialized compressed models (``.eprc`` files).

The byte layout is documented in ``docs/format.md``. All integers are
little-endian; decoder parameters are float32. Sections appear in this order:
header, then per group its descriptor, decoder parameters, frequency tables,
and coded segments (or raw float32 values for uncoded groups).
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .coder import Bitstream, CorruptStreamError, decode, encode, self_information
from .decoders import MODES, DecoderParameters, basis_from_name, decode_rows, weight_from_rows
from .density import PmfTable
from .models import KINDS, ModelSpec, build_model

MAGIC = b"EPRC"
VERSION = 1
EMPTY_CONTAINER_BYTES = 13   # magic, version, flags, empty name, empty options, zero groups


class ContainerError(ValueError):
    """The bytes are not a valid container for this reader."""


class BadMagicError(ContainerError):
    pass


class VersionError(ContainerError):
    pass


class TruncatedError(ContainerError):
    pass


class ChecksumError(ContainerError):
    pass


class MismatchError(ContainerError):
    """Container contents disagree with the architecture they name."""


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

@dataclass
class ModelArtifacts:
    """Everything a container holds: integer latents, decoders, tables, raw groups."""

    spec: ModelSpec
    integers: dict = field(default_factory=dict)   # slot -> (d, ell) int64, coded groups
    psi: dict = field(default_factory=dict)        # group -> DecoderParameters
    tables: dict = field(default_factory=dict)     # group -> [PmfTable per column]
    raw: dict = field(default_factory=dict)        # slot -> float32 array, uncoded groups

    def group_symbols(self, group: str) -> np.ndarray:
        """Rows of every slot in ``group`` stacked in slot order, shape (d, ell)."""
        g = self.spec.group(group)
        return np.concatenate([self.integers[s] for s in g.slots], axis=0)

    def parameters(self) -> dict[str, np.ndarray]:
        """Decoded float32 parameter tensors keyed by slot."""
        out = {}
        with ad.precision("float32"):
            for g in self.spec.groups:
                for s in g.slots:
                    if not g.coded:
                        out[s] = np.asarray(self.raw[s], np.float32)
                        continue
                    slot = self.spec.slot(s)
                    rows = decode_rows(ad.constant(self.integers[s]), self.psi[g.name])
                    out[s] = weight_from_rows(rows, slot.kind, slot.shape.dims).data
        return out

    def logits(self, x) -> np.ndarray:
        from .models import predict
        with ad.precision("float32"):
            return predict(self.spec, self.parameters(), x).data

    def self_information_bits(self) -> float:
        total = 0.0
        for g in self.spec.groups:
            if g.coded:
                sym = self.group_symbols(g.name)
                total += sum(self_information(sym[:, c], t) for c, t in enumerate(self.tables[g.name]))
        return total


@dataclass(frozen=True)
class SizeReport:
    header_bytes: int
    psi_bytes: int
    table_bytes: int
    payload_bytes: int
    extra_bytes: int
    total_bytes: int
    baseline_bytes: int

    @property
    def ratio(self) -> float:
        return self.baseline_bytes / self.total_bytes

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["ratio"] = self.ratio
        return d


# ---------------------------------------------------------------------------
# writing
# ---------------------------------------------------------------------------

class _Writer:
    def __init__(self):
        self.parts: list[bytes] = []
        self.counts = {"header": 0, "psi": 0, "table": 0, "payload": 0, "extra": 0}

    def put(self, category: str, data: bytes):
        self.parts.append(data)
        self.counts[category] += len(data)

    def pack(self, category: str, fmt: str, *values):
        self.put(category, struct.pack("<" + fmt, *values))

    def string(self, category: str, s: str, width: str = "B"):
        raw = s.encode("utf-8")
        if len(raw) >= 1 << (8 * struct.calcsize(width)):
            raise ContainerError(f"string too long: {s[:20]!r}...")
        self.pack(category, width, len(raw))
        self.put(category, raw)


def _options_json(spec: ModelSpec) -> str:
    if not spec.options:
        return ""
    return json.dumps({k: list(v) if isinstance(v, tuple) else v for k, v in spec.options},
                      sort_keys=True, separators=(",", ":"))


def _varint(n: int) -> bytes:
    """Unsigned LEB128."""
    out = bytearray()
    while True:
        byte, n = n & 0x7F, n >> 7
        out.append(byte | (0x80 if n else 0))
        if not n:
            return bytes(out)


def _zigzag(n: int) -> int:
    return 2 * n if n >= 0 else -2 * n - 1


def _unzigzag(z: int) -> int:
    return z >> 1 if not z & 1 else -((z + 1) >> 1)


def _table_bytes(t: PmfTable) -> bytes:
    return (_varint(_zigzag(t.symbol_min)) + _varint(t.symbol_max - t.symbol_min)
            + np.asarray(t.freqs, "<u2").tobytes())


def _psi_arrays(psi: DecoderParameters) -> list[np.ndarray]:
    return [p.data for p in psi.parameters()]


def _check(artifacts: ModelArtifacts):
    spec = artifacts.spec
    for g in spec.groups:
        if not g.coded:
            for s in g.slots:
                if np.asarray(artifacts.raw[s]).shape != spec.slot(s).shape.dims:
                    raise ContainerError(f"raw values for {s} have the wrong shape")
            continue
        psi = artifacts.psi[g.name]
        if psi.mode != g.decoder or psi.ell != g.ell:
            raise ContainerError(f"group {g.name}: decoder does not match the model spec")
        tables = artifacts.tables[g.name]
        if len(tables) != g.ell:
            raise ContainerError(f"group {g.name}: expected {g.ell} tables, got {len(tables)}")
        for s in g.slots:
            ints = np.asarray(artifacts.integers[s])
            want = (spec.slot(s).shape.size // g.ell, g.ell)
            if ints.shape != want:
                raise ContainerError(f"latents for {s} have shape {ints.shape}, expected {want}")
        for p in _psi_arrays(psi):
            if not np.all(np.isfinite(p)):
                raise ContainerError(f"group {g.name}: non-finite decoder parameters")


def _serialize(artifacts: ModelArtifacts) -> _Writer:
    _check(artifacts)
    spec = artifacts.spec
    w = _Writer()
    w.put("header", MAGIC)
    w.pack("header", "HH", VERSION, 0)
    w.string("header", spec.name)
    w.string("header", _options_json(spec), "H")
    w.pack("header", "H", len(spec.groups))
    for g in spec.groups:
        w.string("header", g.name)
        w.pack("header", "BBH", MODES.index(g.decoder), int(g.coded), g.ell)
        psi = artifacts.psi.get(g.name)
        w.string("header", psi.basis_name if (g.coded and psi.basis is not None) else "")
        w.pack("header", "H", len(g.slots))
        for s in g.slots:
            slot = spec.slot(s)
            w.string("header", s)
            w.pack("header", "BB", KINDS.index(slot.kind), len(slot.shape.dims))
            w.pack("header", f"{len(slot.shape.dims)}I", *slot.shape.dims)
        if not g.coded:
            for s in g.slots:
                w.put("extra", np.asarray(artifacts.raw[s], "<f4").tobytes())
            continue
        for p in _psi_arrays(psi):
            w.put("psi", np.asarray(p, "<f4").tobytes())
        tables = artifacts.tables[g.name]
        block = b"".join(_table_bytes(t) for t in tables)
        w.put("table", block)
        w.pack("table", "I", zlib.crc32(block))
        symbols = artifacts.group_symbols(g.name)
        for c, t in enumerate(tables):
            stream = encode(symbols[:, c], t)
            w.put("payload", _varint(stream.bit_length))
            w.put("payload", stream.data)
    return w


def serialize(artifacts: ModelArtifacts) -> bytes:
    """Deterministic byte encoding of ``artifacts``."""
    return b"".join(_serialize(artifacts).parts)


# ---------------------------------------------------------------------------
# reading
# ---------------------------------------------------------------------------

class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0
        self.counts = {"header": 0, "psi": 0, "table": 0, "payload": 0, "extra": 0}

    def take(self, n: int, section: str, category: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedError(f"container truncated in section '{section}' "
                                 f"(need {n} bytes at offset {self.pos}, file has {len(self.data)})")
        out = bytes(self.data[self.pos:self.pos + n])
        self.pos += n
        self.counts[category] += n
        return out

    def unpack(self, fmt: str, section: str, category: str = "header"):
        fmt = "<" + fmt
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), section, category))

    def varint(self, section: str, category: str) -> int:
        value, shift = 0, 0
        while True:
            (byte,) = self.take(1, section, category)
            value |= (byte & 0x7F) << shift
            if not byte & 0x80:
                return value
            shift += 7
            if shift > 63:
                raise ContainerError(f"{section}: varint too long")

    def string(self, section: str, width: str = "B") -> str:
        (n,) = self.unpack(width, section)
        return self.take(n, section, "header").decode("utf-8")


def _read(data: bytes) -> tuple[ModelArtifacts, _Reader]:
    r = _Reader(bytes(data))
    if len(r.data) < 4 or r.take(4, "magic", "header") != MAGIC:
        raise BadMagicError("not an EPRC container (bad magic)")
    version, _flags = r.unpack("HH", "header")
    if version != VERSION:
        raise VersionError(f"container version {version} is not supported by this reader (version {VERSION})")
    arch = r.string("header")
    options = r.string("header", "H")
    (ngroups,) = r.unpack("H", "header")
    groups = []
    for gi in range(ngroups):
        sec = f"group {gi} descriptor"
        gname = r.string(sec)
        mode, coded, ell = r.unpack("BBH", sec)
        basis_name = r.string(sec)
        (nslots,) = r.unpack("H", sec)
        slots = []
        for _ in range(nslots):
            sname = r.string(sec)
            kind, ndim = r.unpack("BB", sec)
            dims = r.unpack(f"{ndim}I", sec)
            slots.append((sname, KINDS[kind], tuple(dims)))
        if mode >= len(MODES):
            raise ContainerError(f"group {gname}: unknown decoder mode {mode}")
        groups.append((gname, MODES[mode], bool(coded), ell, basis_name, slots))
        # body sections follow each descriptor
        groups[-1] += (_read_body(r, gname, MODES[mode], bool(coded), ell, basis_name, slots),)
    if r.pos != len(r.data):
        raise ContainerError(f"{len(r.data) - r.pos} trailing bytes after the last section")
    return _assemble(arch, options, groups), r


def _read_body(r: _Reader, gname, mode, coded, ell, basis_name, slots):
    if not coded:
        raw = {}
        for sname, _kind, dims in slots:
            n = int(np.prod(dims))
            raw[sname] = np.frombuffer(r.take(4 * n, f"group {gname} raw values", "extra"), "<f4").reshape(dims)
        return raw
    nparam = [ell, ell * ell if mode == "affine" else ell]
    arrays = [np.frombuffer(r.take(4 * n, f"group {gname} decoder", "psi"), "<f4").astype(np.float32)
              for n in nparam]
    fields = []
    start = r.pos
    for c in range(ell):
        sec = f"group {gname} table {c}"
        lo = _unzigzag(r.varint(sec, "table"))
        span = r.varint(sec, "table")
        if span > 1 << 24:
            raise ContainerError(f"{sec}: implausible symbol range {span}")
        fields.append((sec, lo, span, r.take(2 * (span + 3), sec, "table")))
    block = bytes(r.data[start:r.pos])
    (crc,) = r.unpack("I", f"group {gname} table checksum", "table")
    if zlib.crc32(block) != crc:
        raise ChecksumError(f"group {gname}: table checksum mismatch")
    tables = []
    for sec, lo, span, freqs in fields:
        try:
            tables.append(PmfTable(lo, lo + span, tuple(int(v) for v in np.frombuffer(freqs, "<u2"))))
        except ValueError as exc:
            raise ContainerError(f"{sec}: {exc}") from None
    count = sum(int(np.prod(dims)) // ell for _n, _k, dims in slots)
    columns = []
    for c, t in enumerate(tables):
        sec = f"group {gname} segment {c}"
        bits = r.varint(sec, "payload")
        stream = Bitstream(r.take((bits + 7) // 8, sec, "payload"), bits)
        try:
            columns.append(decode(stream, t, count))
        except CorruptStreamError as exc:
            raise ContainerError(f"{sec}: {exc}") from None
    symbols = np.stack(columns, axis=1) if columns else np.zeros((count, 0), np.int64)
    return arrays, tables, symbols


def _assemble(arch: str, options: str, groups) -> ModelArtifacts:
    if not arch and not groups:
        return ModelArtifacts(ModelSpec("", (), (), (), ()))
    try:
        opts = json.loads(options) if options else {}
        spec = build_model(arch, **opts)
    except (ValueError, TypeError) as exc:
        raise MismatchError(f"cannot rebuild architecture {arch!r}: {exc}") from None
    if [g[0] for g in groups] != [g.name for g in spec.groups]:
        raise MismatchError(f"groups {[g[0] for g in groups]} do not match {arch}")
    for gname, mode, coded, ell, _b, _s, _body in groups:
        spec = spec.configure(gname, decoder=mode, coded=coded, ell=ell)
    art = ModelArtifacts(spec)
    dtype = np.float32
    for gname, mode, coded, ell, basis_name, slots, body in groups:
        g = spec.group(gname)
        if [s[0] for s in slots] != list(g.slots):
            raise MismatchError(f"group {gname}: slots {[s[0] for s in slots]} do not match {arch}")
        for sname, kind, dims in slots:
            want = spec.slot(sname).shape
            if (kind, dims) != (want.kind, want.dims):
                raise MismatchError(f"{sname}: stored {kind}{dims} but {arch} has {want.kind}{want.dims}")
        if not coded:
            art.raw.update(body)
            continue
        arrays, tables, symbols = body
        shift = ad.Tensor(arrays[0])
        basis = basis_from_name(basis_name).astype(dtype) if basis_name else None
        if mode == "affine":
            psi = DecoderParameters(mode, shift, transform=ad.Tensor(arrays[1].reshape(ell, ell)))
        else:
            psi = DecoderParameters(mode, shift, scale=ad.Tensor(arrays[1]), basis=basis, basis_name=basis_name)
        art.psi[gname] = psi
        art.tables[gname] = tables
        start = 0
        for sname, _kind, dims in slots:
            rows = int(np.prod(dims)) // ell
            art.integers[sname] = symbols[start:start + rows]
            start += rows
    return art


def deserialize(data: bytes) -> ModelArtifacts:
    """Rebuild artifacts from :func:`serialize` output."""
    return _read(data)[0]


def report_size(container) -> SizeReport:
    """Byte breakdown of a container (bytes) or of artifacts (serialized on the fly)."""
    if isinstance(container, ModelArtifacts):
        w = _serialize(container)
        counts, spec = w.counts, container.spec
    else:
        art, r = _read(container)
        counts, spec = r.counts, art.spec
    total = sum(counts.values())
    return SizeReport(counts["header"], counts["psi"], counts["table"], counts["payload"], counts["extra"],
                      total, spec.baseline_bytes if spec.slots else 0)
