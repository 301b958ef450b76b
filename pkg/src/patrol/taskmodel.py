"""Agent class model: service types, declarative task programs, versioned bundles.

An agent's "code" is a small declarative program interpreted by the runtime,
not compiled code.  Three generic service types cover the monitoring tasks
the platform supports; the generator instantiates one of the three skeletons
with operator-supplied slots, signs it, and the result is distributed once to
all agent servers as a versioned bundle.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

from cryptography.hazmat.primitives.asymmetric import rsa

from . import proto
from .proto import Reader, Writer
from .security import AuthPolicy, SignatureBlock, sign, verify_trusted


class ServiceType(IntEnum):
    SCALAR_POLL = 1
    TABLE_FILTER = 2
    THRESHOLD_MONITOR = 3


class Comparator(IntEnum):
    EQ = 1
    NE = 2
    LT = 3
    LE = 4
    GT = 5
    GE = 6


class ThresholdExpr(IntEnum):
    VALUE = 1
    DELTA_PER_SECOND = 2


class PollMode(IntEnum):
    ONE_SHOT = 1
    PERIODIC = 2


class BundleError(Exception):
    pass


class InvalidForm(BundleError):
    def __init__(self, fields: list[str]) -> None:
        super().__init__(f"invalid form fields: {', '.join(fields)}")
        self.fields = fields


class BadSignature(BundleError):
    pass


class StaleVersion(BundleError):
    pass


class InvalidProgram(BundleError):
    pass


def compare(comparator: Comparator, left, right) -> bool:
    """Predicate semantics shared by table filters and thresholds.

    Numbers compare numerically, strings lexicographically.  A type mismatch
    satisfies only NE.
    """
    left_num = isinstance(left, (int, float)) and not isinstance(left, bool)
    right_num = isinstance(right, (int, float)) and not isinstance(right, bool)
    if left_num != right_num or isinstance(left, str) != isinstance(right, str):
        return comparator == Comparator.NE
    if comparator == Comparator.EQ:
        return left == right
    if comparator == Comparator.NE:
        return left != right
    if comparator == Comparator.LT:
        return left < right
    if comparator == Comparator.LE:
        return left <= right
    if comparator == Comparator.GT:
        return left > right
    return left >= right


@dataclass(frozen=True)
class AgentClassId:
    name: str
    version: int

    def encode(self, w: Writer) -> None:
        w.str(self.name)
        w.u32(self.version)

    @classmethod
    def decode(cls, r: Reader) -> "AgentClassId":
        return cls(r.str(), r.u32())


def _encode_constant(w: Writer, value) -> None:
    if isinstance(value, str):
        w.u8(1)
        w.str(value)
    else:
        w.u8(0)
        w.i64(value)


def _decode_constant(r: Reader):
    tag = r.u8()
    if tag == 1:
        return r.str()
    if tag == 0:
        return r.i64()
    raise proto.Corrupt(f"bad constant tag: {tag}")


@dataclass(frozen=True)
class FilterPredicate:
    column: int
    comparator: Comparator
    constant: int | str

    def encode(self, w: Writer) -> None:
        w.u16(self.column)
        w.u8(self.comparator)
        _encode_constant(w, self.constant)

    @classmethod
    def decode(cls, r: Reader) -> "FilterPredicate":
        return cls(r.u16(), Comparator(r.u8()), _decode_constant(r))

    def matches(self, row: list) -> bool:
        if self.column >= len(row):
            return False
        return compare(self.comparator, row[self.column], self.constant)


@dataclass(frozen=True)
class ThresholdSpec:
    expression: ThresholdExpr
    comparator: Comparator
    limit: float

    def encode(self, w: Writer) -> None:
        w.u8(self.expression)
        w.u8(self.comparator)
        w.f64(self.limit)

    @classmethod
    def decode(cls, r: Reader) -> "ThresholdSpec":
        return cls(ThresholdExpr(r.u8()), Comparator(r.u8()), r.f64())


@dataclass(frozen=True)
class TaskProgram:
    service_type: ServiceType
    oids: tuple[str, ...]
    filter: FilterPredicate | None = None
    threshold: ThresholdSpec | None = None
    poll_mode: PollMode = PollMode.PERIODIC
    frequency_s: int | None = None
    encrypt: bool = False
    device_class: str = ""

    def invalid_fields(self) -> list[str]:
        bad = []
        if not self.oids:
            bad.append("oids")
        if self.service_type == ServiceType.TABLE_FILTER and self.filter is None:
            bad.append("filter")
        if self.service_type == ServiceType.THRESHOLD_MONITOR and self.threshold is None:
            bad.append("threshold")
        if self.poll_mode == PollMode.PERIODIC:
            if self.frequency_s is None or self.frequency_s < 1:
                bad.append("frequency_s")
        return bad

    def encode(self, w: Writer) -> None:
        w.u8(self.service_type)
        w.list(self.oids, Writer.str)
        w.opt(self.filter, lambda w, f: f.encode(w))
        w.opt(self.threshold, lambda w, t: t.encode(w))
        w.u8(self.poll_mode)
        w.opt(self.frequency_s, Writer.u32)
        w.bool(self.encrypt)
        w.str(self.device_class)

    @classmethod
    def decode(cls, r: Reader) -> "TaskProgram":
        return cls(
            service_type=ServiceType(r.u8()),
            oids=tuple(r.list(Reader.str)),
            filter=r.opt(FilterPredicate.decode),
            threshold=r.opt(ThresholdSpec.decode),
            poll_mode=PollMode(r.u8()),
            frequency_s=r.opt(Reader.u32),
            encrypt=r.bool(),
            device_class=r.str(),
        )


@dataclass(frozen=True)
class CodeBundle:
    class_id: AgentClassId
    program: TaskProgram
    created_at: int
    policy: AuthPolicy
    signature: SignatureBlock

    def signed_bytes(self) -> bytes:
        w = Writer()
        self.class_id.encode(w)
        self.program.encode(w)
        w.u64(self.created_at)
        self.policy.encode(w)
        return w.getvalue()

    def encode(self, w: Writer) -> None:
        self.class_id.encode(w)
        self.program.encode(w)
        w.u64(self.created_at)
        self.policy.encode(w)
        self.signature.encode(w)

    @classmethod
    def decode(cls, r: Reader) -> "CodeBundle":
        return cls(
            class_id=AgentClassId.decode(r),
            program=TaskProgram.decode(r),
            created_at=r.u64(),
            policy=AuthPolicy.decode(r),
            signature=SignatureBlock.decode(r),
        )


def now_ms() -> int:
    return int(time.time() * 1000)


def generate_bundle(
    name: str,
    program: TaskProgram,
    next_version: int,
    manager_private_key: rsa.RSAPrivateKey,
    policy: AuthPolicy | None = None,
    created_at: int | None = None,
) -> CodeBundle:
    """Instantiate the service-type skeleton with the form's slots and sign it."""
    bad = program.invalid_fields()
    if not name:
        bad.insert(0, "name")
    if next_version < 1:
        bad.append("version")
    if bad:
        raise InvalidForm(bad)
    policy = policy or AuthPolicy()
    unsigned = CodeBundle(
        class_id=AgentClassId(name, next_version),
        program=program,
        created_at=now_ms() if created_at is None else created_at,
        policy=policy,
        signature=SignatureBlock(b"", b""),
    )
    signature = sign(unsigned.signed_bytes(), manager_private_key)
    return CodeBundle(unsigned.class_id, program, unsigned.created_at, policy, signature)


def validate_bundle(
    bundle: CodeBundle,
    trusted_keys: dict[bytes, rsa.RSAPublicKey],
    latest_version: int | None = None,
) -> None:
    """Raise BadSignature / InvalidProgram / StaleVersion; return silently when ok.

    latest_version is the highest version already cached for this class name;
    equal or lower incoming versions are stale.
    """
    if not verify_trusted(bundle.signed_bytes(), bundle.signature, trusted_keys):
        raise BadSignature(f"bundle {bundle.class_id.name} v{bundle.class_id.version}")
    bad = bundle.program.invalid_fields()
    if bad or bundle.class_id.version < 1:
        raise InvalidProgram(f"invalid fields: {', '.join(bad) or 'version'}")
    if latest_version is not None and bundle.class_id.version <= latest_version:
        raise StaleVersion(
            f"{bundle.class_id.name} v{bundle.class_id.version} <= cached v{latest_version}"
        )


def bundle_digest(bundle: CodeBundle) -> bytes:
    return hashlib.sha256(proto.canonical_encode(bundle)).digest()


class BundleStore:
    """The manager's Mobile Code Repository: one file per (name, version)."""

    def __init__(self, directory: str | Path) -> None:
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, name: str, version: int) -> Path:
        return self.directory / f"{name}.{version}.bundle"

    def store(self, bundle: CodeBundle) -> Path:
        path = self._path(bundle.class_id.name, bundle.class_id.version)
        path.write_bytes(proto.canonical_encode(bundle))
        return path

    def versions(self, name: str) -> list[int]:
        found = []
        for path in self.directory.glob(f"{name}.*.bundle"):
            suffix = path.name[len(name) + 1 : -len(".bundle")]
            if suffix.isdigit():
                found.append(int(suffix))
        return sorted(found)

    def latest_version(self, name: str) -> int | None:
        versions = self.versions(name)
        return versions[-1] if versions else None

    def next_version(self, name: str) -> int:
        latest = self.latest_version(name)
        return 1 if latest is None else latest + 1

    def load(self, name: str, version: int) -> CodeBundle:
        data = self._path(name, version).read_bytes()
        return proto.canonical_decode(CodeBundle, data)

    def load_latest(self, name: str) -> CodeBundle | None:
        latest = self.latest_version(name)
        return None if latest is None else self.load(name, latest)

    def names(self) -> list[str]:
        seen = set()
        for path in self.directory.glob("*.bundle"):
            stem = path.name[: -len(".bundle")]
            name, _, version = stem.rpartition(".")
            if name and version.isdigit():
                seen.add(name)
        return sorted(seen)
