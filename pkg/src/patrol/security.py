"""Authentication, data sealing and authorization policy.

RSA-2048 signs agent headers, code bundles and control requests; collected
data is sealed to the manager with a hybrid envelope (RSA-wrapped AES-256-GCM
key) because raw RSA cannot encrypt arbitrary-length payloads.  Signatures
use PKCS#1 v1.5, which is deterministic: the same bytes and key always yield
the same signature, so re-encoding a signed value never changes its bytes.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .proto import Oversize, Reader, Writer

OP_GET_SCALAR = "get_scalar"
OP_GET_TABLE = "get_table"

DEFAULT_MAX_OIDS = 64
DEFAULT_MAX_EXEC_MILLIS = 2000
DEFAULT_MAX_FOLDER_BYTES = 1024 * 1024

KEY_ID_LEN = 8
_NONCE_LEN = 12


class SecurityError(Exception):
    pass


class OpenFailed(SecurityError):
    """Sealed entry could not be opened: wrong key or tampered ciphertext."""


class AuthorizationViolation(SecurityError):
    def __init__(self, rule: str, detail: str) -> None:
        super().__init__(f"{rule}: {detail}")
        self.rule = rule
        self.detail = detail


def key_id(public_key: rsa.RSAPublicKey) -> bytes:
    """8-byte digest prefix of the DER-encoded public key."""
    der = public_key.public_bytes(
        serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo
    )
    return hashlib.sha256(der).digest()[:KEY_ID_LEN]


@dataclass(frozen=True)
class KeyPair:
    private_key: rsa.RSAPrivateKey
    public_key: rsa.RSAPublicKey
    key_id: bytes


def generate_keypair() -> KeyPair:
    private = rsa.generate_private_key(public_exponent=65537, key_size=2048)
    public = private.public_key()
    return KeyPair(private, public, key_id(public))


def save_keypair(pair: KeyPair, directory: str | Path, name: str) -> tuple[Path, Path]:
    """Write <name>.pem (private) and <name>.pub.pem to directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    priv_path = directory / f"{name}.pem"
    pub_path = directory / f"{name}.pub.pem"
    priv_path.write_bytes(
        pair.private_key.private_bytes(
            serialization.Encoding.PEM,
            serialization.PrivateFormat.PKCS8,
            serialization.NoEncryption(),
        )
    )
    pub_path.write_bytes(
        pair.public_key.public_bytes(
            serialization.Encoding.PEM, serialization.PublicFormat.SubjectPublicKeyInfo
        )
    )
    return priv_path, pub_path


def load_private_key(path: str | Path) -> rsa.RSAPrivateKey:
    return serialization.load_pem_private_key(Path(path).read_bytes(), password=None)


def load_public_key(path: str | Path) -> rsa.RSAPublicKey:
    return serialization.load_pem_public_key(Path(path).read_bytes())


def load_keypair(directory: str | Path, name: str) -> KeyPair:
    directory = Path(directory)
    private = load_private_key(directory / f"{name}.pem")
    public = load_public_key(directory / f"{name}.pub.pem")
    return KeyPair(private, public, key_id(public))


@dataclass(frozen=True)
class SignatureBlock:
    signer_key_id: bytes
    signature: bytes

    def encode(self, w: Writer) -> None:
        w.bytes(self.signer_key_id)
        w.bytes(self.signature)

    @classmethod
    def decode(cls, r: Reader) -> "SignatureBlock":
        return cls(r.bytes(), r.bytes())


def sign(data: bytes, private_key: rsa.RSAPrivateKey) -> SignatureBlock:
    signature = private_key.sign(data, padding.PKCS1v15(), hashes.SHA256())
    return SignatureBlock(key_id(private_key.public_key()), signature)


def verify(data: bytes, block: SignatureBlock, public_key: rsa.RSAPublicKey) -> bool:
    if block.signer_key_id != key_id(public_key):
        return False
    try:
        public_key.verify(block.signature, data, padding.PKCS1v15(), hashes.SHA256())
        return True
    except InvalidSignature:
        return False
    except Exception:
        return False


def verify_trusted(
    data: bytes, block: SignatureBlock, trusted_keys: dict[bytes, rsa.RSAPublicKey]
) -> bool:
    """True iff block verifies against a key in the trusted set.

    An empty trusted set rejects everything.
    """
    public = trusted_keys.get(block.signer_key_id)
    return public is not None and verify(data, block, public)


@dataclass(frozen=True)
class SealedEntry:
    wrapped_key: bytes
    nonce: bytes
    ciphertext: bytes

    def encode(self, w: Writer) -> None:
        w.bytes(self.wrapped_key)
        w.bytes(self.nonce)
        w.bytes(self.ciphertext)

    @classmethod
    def decode(cls, r: Reader) -> "SealedEntry":
        return cls(r.bytes(), r.bytes(), r.bytes())


def seal(
    payload: bytes,
    recipient_public_key: rsa.RSAPublicKey,
    max_bytes: int = DEFAULT_MAX_FOLDER_BYTES,
) -> SealedEntry:
    if len(payload) > max_bytes:
        raise Oversize(f"payload {len(payload)} exceeds seal limit {max_bytes}")
    sym_key = os.urandom(32)
    nonce = os.urandom(_NONCE_LEN)
    ciphertext = AESGCM(sym_key).encrypt(nonce, payload, None)
    wrapped = recipient_public_key.encrypt(
        sym_key,
        padding.OAEP(padding.MGF1(hashes.SHA256()), hashes.SHA256(), None),
    )
    return SealedEntry(wrapped, nonce, ciphertext)


def open_sealed(entry: SealedEntry, private_key: rsa.RSAPrivateKey) -> bytes:
    try:
        sym_key = private_key.decrypt(
            entry.wrapped_key,
            padding.OAEP(padding.MGF1(hashes.SHA256()), hashes.SHA256(), None),
        )
        return AESGCM(sym_key).decrypt(entry.nonce, entry.ciphertext, None)
    except Exception:
        raise OpenFailed("sealed entry does not open with this key") from None


_OP_CODES = {OP_GET_SCALAR: 1, OP_GET_TABLE: 2}
_OP_NAMES = {code: name for name, code in _OP_CODES.items()}


@dataclass(frozen=True)
class AuthPolicy:
    """Limits on what a visiting agent may do on a host."""

    allowed_ops: frozenset[str] = frozenset({OP_GET_SCALAR, OP_GET_TABLE})
    max_oids_per_query: int = DEFAULT_MAX_OIDS
    max_exec_millis_per_host: int = DEFAULT_MAX_EXEC_MILLIS
    max_data_folder_bytes: int = DEFAULT_MAX_FOLDER_BYTES
    trusted_signer_key_ids: frozenset[bytes] = frozenset()

    def encode(self, w: Writer) -> None:
        w.list(sorted(_OP_CODES[op] for op in self.allowed_ops), Writer.u8)
        w.u16(self.max_oids_per_query)
        w.u32(self.max_exec_millis_per_host)
        w.u32(self.max_data_folder_bytes)
        w.list(sorted(self.trusted_signer_key_ids), Writer.bytes)

    @classmethod
    def decode(cls, r: Reader) -> "AuthPolicy":
        ops = frozenset(_OP_NAMES[code] for code in r.list(Reader.u8))
        return cls(
            allowed_ops=ops,
            max_oids_per_query=r.u16(),
            max_exec_millis_per_host=r.u32(),
            max_data_folder_bytes=r.u32(),
            trusted_signer_key_ids=frozenset(r.list(Reader.bytes)),
        )

    @classmethod
    def from_overrides(cls, overrides: dict | None) -> "AuthPolicy":
        policy = cls()
        if not overrides:
            return policy
        fields = {}
        if "allowed_ops" in overrides:
            fields["allowed_ops"] = frozenset(overrides["allowed_ops"])
        for key in ("max_oids_per_query", "max_exec_millis_per_host", "max_data_folder_bytes"):
            if key in overrides:
                fields[key] = int(overrides[key])
        return replace(policy, **fields)


def authorize(requested_op: str, query_size: int, policy: AuthPolicy) -> None:
    """Permit the operation or raise AuthorizationViolation naming the rule."""
    if requested_op not in _OP_CODES:
        raise AuthorizationViolation("op", f"unknown operation {requested_op!r}")
    if requested_op not in policy.allowed_ops:
        raise AuthorizationViolation("op", f"{requested_op} not in allowed_ops")
    if query_size > policy.max_oids_per_query:
        raise AuthorizationViolation(
            "max_oids", f"query size {query_size} exceeds {policy.max_oids_per_query}"
        )
