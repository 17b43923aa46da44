"""A1 policy plane: versioned policy store, REST endpoint, client.

Policies are JSON documents validated against per-type schemas
(PRIORITIZATION, ENERGY_SAVING, SF_BOUNDS). The store is the single
source of truth; the HTTP/1.1 endpoint (no TLS) exposes it REST-style:

    PUT    /a1-p/policytypes/{type}/policies/{id}
    GET    /a1-p/policytypes/{type}/policies/{id}
    DELETE /a1-p/policytypes/{type}/policies/{id}
    GET    /a1-p/policytypes/{type}/policies
    GET    /a1-p/policytypes

Writes are serialized by a lock; versions increase monotonically across
the whole store so a read after an acknowledged write returns that
write's document or a later one.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Optional

from .constants import validate_schemas

__all__ = [
    "POLICY_TYPES",
    "A1Policy",
    "PolicyStore",
    "PolicyValidationError",
    "PolicyNotFoundError",
    "A1Server",
    "A1Client",
]

POLICY_TYPES = ("PRIORITIZATION", "ENERGY_SAVING", "SF_BOUNDS")


class PolicyValidationError(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


class PolicyNotFoundError(KeyError):
    pass


@dataclass(frozen=True)
class A1Policy:
    policy_id: str
    policy_type: str
    body: dict
    version: int

    def to_dict(self) -> dict:
        return {
            "policy_id": self.policy_id,
            "policy_type": self.policy_type,
            "body": self.body,
            "version": self.version,
        }


def _semantic_violations(policy_type: str, body: dict) -> list[str]:
    if policy_type == "SF_BOUNDS" and isinstance(body, dict):
        lo, hi = body.get("min_sf"), body.get("max_sf")
        if isinstance(lo, int) and isinstance(hi, int) and lo > hi:
            return [f"min_sf: {lo} exceeds max_sf {hi}"]
    return []


def validate_policy_body(policy_type: str, body) -> list[str]:
    if policy_type not in POLICY_TYPES:
        return [f"policy_type: unknown type {policy_type!r}"]
    violations = validate_schemas(body, f"a1/{policy_type}")
    return violations + _semantic_violations(policy_type, body)


@dataclass
class PolicyStore:
    """In-memory versioned store; optionally file-backed for offline use."""

    path: Optional[str] = None
    _policies: dict[str, dict[str, A1Policy]] = field(default_factory=dict)
    _version: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    _subscribers: list[Callable[[str, Optional[A1Policy]], None]] = field(default_factory=list)

    def subscribe(self, fn: Callable[[str, Optional[A1Policy]], None]) -> None:
        """``fn(event, policy)`` with event in {'put', 'delete'}."""
        self._subscribers.append(fn)

    def put(self, policy_type: str, policy_id: str, body: dict) -> tuple[A1Policy, bool]:
        violations = validate_policy_body(policy_type, body)
        if violations:
            raise PolicyValidationError(violations)
        with self._lock:
            created = policy_id not in self._policies.get(policy_type, {})
            self._version += 1
            policy = A1Policy(policy_id, policy_type, body, self._version)
            self._policies.setdefault(policy_type, {})[policy_id] = policy
            self._save_locked()
        for fn in self._subscribers:
            fn("put", policy)
        return policy, created

    def get(self, policy_type: str, policy_id: str) -> A1Policy:
        try:
            return self._policies[policy_type][policy_id]
        except KeyError:
            raise PolicyNotFoundError(f"{policy_type}/{policy_id}") from None

    def delete(self, policy_type: str, policy_id: str) -> None:
        with self._lock:
            try:
                policy = self._policies[policy_type].pop(policy_id)
            except KeyError:
                raise PolicyNotFoundError(f"{policy_type}/{policy_id}") from None
            self._version += 1
            self._save_locked()
        for fn in self._subscribers:
            fn("delete", policy)

    def list_ids(self, policy_type: str) -> list[str]:
        return sorted(self._policies.get(policy_type, {}))

    def active(self, policy_type: str) -> list[A1Policy]:
        return [self._policies[policy_type][pid] for pid in self.list_ids(policy_type)]

    # -- persistence -------------------------------------------------------

    def _save_locked(self) -> None:
        if self.path is None:
            return
        doc = {
            "version": self._version,
            "policies": {
                ptype: {pid: pol.to_dict() for pid, pol in sorted(group.items())}
                for ptype, group in sorted(self._policies.items())
            },
        }
        with open(self.path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "PolicyStore":
        store = cls(path=path)
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            return store
        store._version = doc.get("version", 0)
        for ptype, group in doc.get("policies", {}).items():
            for pid, pol in group.items():
                store._policies.setdefault(ptype, {})[pid] = A1Policy(
                    pol["policy_id"], pol["policy_type"], pol["body"], pol["version"]
                )
        return store


# ---------------------------------------------------------------------------
# HTTP endpoint
# ---------------------------------------------------------------------------

_POLICY_RE = re.compile(r"^/a1-p/policytypes/([A-Z_]+)/policies/([^/]+)$")
_LIST_RE = re.compile(r"^/a1-p/policytypes/([A-Z_]+)/policies$")


class _A1Handler(BaseHTTPRequestHandler):
    store: PolicyStore  # set by A1Server

    def log_message(self, fmt, *args):  # keep test output quiet
        pass

    def _send(self, status: int, payload=None):
        body = b"" if payload is None else json.dumps(payload).encode()
        self.send_response(status)
        if body:
            self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        if self.path == "/a1-p/policytypes":
            self._send(200, list(POLICY_TYPES))
            return
        m = _LIST_RE.match(self.path)
        if m:
            if m.group(1) not in POLICY_TYPES:
                self._send(404, {"detail": f"unknown policy type {m.group(1)}"})
                return
            self._send(200, self.store.list_ids(m.group(1)))
            return
        m = _POLICY_RE.match(self.path)
        if not m:
            self._send(404, {"detail": "unknown path"})
            return
        try:
            self._send(200, self.store.get(m.group(1), m.group(2)).to_dict())
        except PolicyNotFoundError:
            self._send(404, {"detail": f"no policy {m.group(2)} of type {m.group(1)}"})

    def do_PUT(self):
        m = _POLICY_RE.match(self.path)
        if not m:
            self._send(404, {"detail": "unknown path"})
            return
        length = int(self.headers.get("Content-Length", 0))
        try:
            body = json.loads(self.rfile.read(length) or b"null")
        except json.JSONDecodeError as exc:
            self._send(400, {"detail": f"body is not JSON: {exc}"})
            return
        try:
            policy, created = self.store.put(m.group(1), m.group(2), body)
        except PolicyValidationError as exc:
            self._send(400, {"detail": "validation failed", "violations": exc.violations})
            return
        self._send(201 if created else 200, policy.to_dict())

    def do_DELETE(self):
        m = _POLICY_RE.match(self.path)
        if not m:
            self._send(404, {"detail": "unknown path"})
            return
        try:
            self.store.delete(m.group(1), m.group(2))
        except PolicyNotFoundError:
            self._send(404, {"detail": f"no policy {m.group(2)} of type {m.group(1)}"})
            return
        self._send(204)


class A1Server:
    """Threaded HTTP server wrapping a policy store."""

    def __init__(self, store: PolicyStore, host: str = "127.0.0.1", port: int = 0):
        handler = type("BoundA1Handler", (_A1Handler,), {"store": store})
        self._httpd = ThreadingHTTPServer((host, port), handler)
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "A1Server":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()


class A1Client:
    """Minimal REST client used by the CLI and tests."""

    def __init__(self, base_url: str, session=None):
        import requests

        self.base = base_url.rstrip("/")
        self._http = session or requests.Session()

    def _policy_url(self, policy_type: str, policy_id: str) -> str:
        return f"{self.base}/a1-p/policytypes/{policy_type}/policies/{policy_id}"

    def put(self, policy_type: str, policy_id: str, body: dict):
        return self._http.put(self._policy_url(policy_type, policy_id), json=body)

    def get(self, policy_type: str, policy_id: str):
        return self._http.get(self._policy_url(policy_type, policy_id))

    def delete(self, policy_type: str, policy_id: str):
        return self._http.delete(self._policy_url(policy_type, policy_id))

    def list_ids(self, policy_type: str):
        return self._http.get(f"{self.base}/a1-p/policytypes/{policy_type}/policies")
