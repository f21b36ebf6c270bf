"""Loading, instrumenting and executing bundled MSL services."""

from __future__ import annotations

import json
import logging
import math
import re
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, HTTPServer
from pathlib import Path
from typing import Any
from urllib.parse import parse_qs, quote, unquote, urlencode, urlsplit

import httpx

from .interp import Compiler, Context, MslRuntimeError, Recorder, evaluate_constants
from .model import (
    CoverageSnapshot,
    ExecutionResult,
    INT64_MAX,
    INT64_MIN,
    PLACEHOLDER_RE,
    RestCallAction,
    Target,
    TargetKind,
    TestCase,
    Verb,
    parse_target_id,
)
from .msl import DuplicateDeclaration, MslProgram, ast as A, parse_msl

log = logging.getLogger(__name__)

SCALAR_TYPES = ("string", "int", "float", "bool")


class SpecError(ValueError):
    pass


class HarnessFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Service spec
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EndpointSpec:
    verb: Verb
    path: str
    entry: str
    path_params: dict = field(default_factory=dict)
    query: dict = field(default_factory=dict)
    headers: dict = field(default_factory=dict)
    body: Any = None  # object schema or None

    @property
    def label(self) -> str:
        return f"{self.verb.value} {self.path}"

    def schema(self, kind: str):
        return {"path": self.path_params, "query": self.query, "header": self.headers, "body": self.body}[kind]

    @property
    def route(self) -> re.Pattern:
        pattern = ""
        last = 0
        for m in PLACEHOLDER_RE.finditer(self.path):
            pattern += re.escape(self.path[last : m.start()]) + f"(?P<{m.group(1)}>[^/]+)"
            last = m.end()
        pattern += re.escape(self.path[last:])
        return re.compile(pattern)


@dataclass
class ServiceSpec:
    name: str
    sources: dict  # unit name -> file name
    endpoints: list
    root: Path | None = None

    @classmethod
    def from_dict(cls, d: dict, root: Path | None = None) -> ServiceSpec:
        try:
            endpoints = [
                EndpointSpec(
                    verb=Verb(e["verb"]),
                    path=e["path"],
                    entry=e["entry"],
                    path_params=dict(e.get("path_params") or {}),
                    query=dict(e.get("query") or {}),
                    headers={k.lower(): v for k, v in (e.get("headers") or {}).items()},
                    body=e.get("body"),
                )
                for e in d["endpoints"]
            ]
            return cls(d["name"], dict(d["sources"]), endpoints, root)
        except (KeyError, TypeError, ValueError) as e:
            raise SpecError(f"malformed service spec: {e}") from e


def _check_schema(schema, where: str, scalar_only: bool = False):
    if isinstance(schema, str):
        if schema not in SCALAR_TYPES:
            raise SpecError(f"{where}: unknown type {schema!r}")
        return
    if scalar_only:
        raise SpecError(f"{where}: only scalar types are allowed here")
    if isinstance(schema, dict):
        for k, v in schema.items():
            _check_schema(v, f"{where}.{k}")
    elif isinstance(schema, list) and len(schema) == 1:
        _check_schema(schema[0], f"{where}[]")
    else:
        raise SpecError(f"{where}: schema must be a type name, object or one-element list")


def _schema_has(schema, path: tuple) -> bool:
    node = schema
    for p in path:
        if not isinstance(node, dict) or p not in node:
            return False
        node = node[p]
    return True


# ---------------------------------------------------------------------------
# Wire format shared by the in-process and HTTP paths
# ---------------------------------------------------------------------------

# spaces are encoded too: HTTP parsers strip them at the edges of header values
_HEADER_SAFE = "".join(chr(c) for c in range(0x21, 0x7F) if chr(c) != "%")


def wire_text(v) -> str:
    if isinstance(v, str):
        return v
    if v is True:
        return "true"
    if v is False:
        return "false"
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, int):
        return str(v)
    return json.dumps(v, separators=(",", ":"))


@dataclass(frozen=True)
class WireRequest:
    verb: str
    path: str  # percent-encoded
    query: dict  # name -> text
    headers: dict  # lowercase name -> percent-encoded text
    body: bytes


def to_wire(action: RestCallAction) -> WireRequest:
    def fill(m):
        return quote(wire_text(action.path_params[m.group(1)]), safe="")

    path = PLACEHOLDER_RE.sub(fill, action.path_template)
    query = {k: wire_text(v) for k, v in action.query_params.items()}
    headers = {k.lower(): quote(wire_text(v), safe=_HEADER_SAFE) for k, v in action.headers.items()}
    body = b"" if action.body is None else json.dumps(action.body, separators=(",", ":")).encode()
    return WireRequest(action.verb.value, path, query, headers, body)


class BadRequest(Exception):
    pass


_INT_TEXT = re.compile(r"-?(?:0|[1-9][0-9]*)")


def coerce_text(text: str, type_: str, where: str):
    if type_ == "string":
        return text
    if type_ == "int":
        if not _INT_TEXT.fullmatch(text):
            raise BadRequest(f"{where}: {text!r} is not an int")
        v = int(text)
        if not INT64_MIN <= v <= INT64_MAX:
            raise BadRequest(f"{where}: {text!r} out of range")
        return v
    if type_ == "float":
        try:
            v = float(text)
        except ValueError:
            raise BadRequest(f"{where}: {text!r} is not a float") from None
        if not math.isfinite(v):
            raise BadRequest(f"{where}: {text!r} is not finite")
        return v
    if type_ == "bool":
        if text not in ("true", "false"):
            raise BadRequest(f"{where}: {text!r} is not a bool")
        return text == "true"
    raise BadRequest(f"{where}: unsupported type {type_}")


def coerce_json(value, schema, where: str):
    if isinstance(schema, dict):
        if not isinstance(value, dict):
            raise BadRequest(f"{where}: expected an object")
        out = {}
        for k, sub in schema.items():
            if k not in value:
                raise BadRequest(f"{where}.{k}: missing required field")
            out[k] = coerce_json(value[k], sub, f"{where}.{k}")
        return out
    if isinstance(schema, list):
        if not isinstance(value, list):
            raise BadRequest(f"{where}: expected an array")
        return [coerce_json(v, schema[0], f"{where}[{i}]") for i, v in enumerate(value)]
    if schema == "string" and isinstance(value, str):
        return value
    if schema == "bool" and isinstance(value, bool):
        return value
    if schema == "int" and type(value) is int:
        return value
    if schema == "float" and type(value) in (int, float):
        return float(value)
    raise BadRequest(f"{where}: expected {schema}")


def to_json_safe(v):
    if isinstance(v, dict):
        return {str(k): to_json_safe(x) for k, x in v.items()}
    if isinstance(v, list):
        return [to_json_safe(x) for x in v]
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    if v is None or isinstance(v, (str, int, float, bool)):
        return v
    return repr(v)


# ---------------------------------------------------------------------------
# Service instance
# ---------------------------------------------------------------------------


def decision_targets(program: MslProgram) -> list:
    targets = []
    for unit in program.units.values():
        for stmt in unit.statements():
            if isinstance(stmt, A.If):
                t = Target.for_outcome(TargetKind.BRANCH, unit.name, stmt.line, stmt.position, True)
                targets += [t, t.sibling()]
            for e in A.stmt_exprs(stmt):
                for node in A.iter_expr(e):
                    if isinstance(node, A.MethodCall) and node.position is not None:
                        t = Target.for_outcome(
                            TargetKind.METHOD_REPLACEMENT, unit.name, node.name_line, node.position, True
                        )
                        targets += [t, t.sibling()]
    return sorted(targets, key=lambda t: t.sort_key)


class ServiceInstance:
    """A loaded service: parsed program, dispatch table, coverage counters."""

    def __init__(self, spec: ServiceSpec, program: MslProgram):
        self.spec = spec
        self.program = program
        self.compiler = Compiler(program)
        try:
            self.globals = evaluate_constants(self.compiler)
        except MslRuntimeError as e:
            raise SpecError(f"constant evaluation failed: {e}") from e
        self.routes = [(ep, ep.route) for ep in spec.endpoints]
        self.targets = decision_targets(program)
        self.executable_lines = program.executable_lines()
        self.coverage = Recorder()
        self._validate()

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def endpoints(self) -> list:
        return list(self.spec.endpoints)

    def _validate(self):
        seen = set()
        for ep in self.spec.endpoints:
            key = (ep.verb, ep.path)
            if key in seen:
                raise SpecError(f"duplicate endpoint {ep.label}")
            seen.add(key)
            fn = self.program.functions.get(ep.entry)
            if fn is None:
                raise SpecError(f"{ep.label}: entry function {ep.entry!r} not found")
            if fn.params:
                raise SpecError(f"{ep.label}: entry function {ep.entry} must take no parameters")
            names = PLACEHOLDER_RE.findall(ep.path)
            if sorted(names) != sorted(ep.path_params):
                raise SpecError(f"{ep.label}: path params {sorted(ep.path_params)} do not match template")
            for kind in ("path", "query", "header"):
                for k, v in ep.schema(kind).items():
                    _check_schema(v, f"{ep.label} {kind}.{k}", scalar_only=True)
            if ep.body is not None:
                if not isinstance(ep.body, dict):
                    raise SpecError(f"{ep.label}: body schema must be an object")
                _check_schema(ep.body, f"{ep.label} body")
        for unit in self.program.units.values():
            decls = [c.value for c in unit.consts]
            for stmt in unit.statements():
                decls.extend(A.stmt_exprs(stmt))
            for e in decls:
                for node in A.iter_expr(e):
                    if isinstance(node, A.RequestField):
                        if not any(_schema_has(ep.schema(node.kind), node.path) for ep in self.spec.endpoints):
                            raise SpecError(
                                f"{unit.name}:{node.line}: request.{node.kind}.{'.'.join(node.path)} "
                                "is not declared by any endpoint"
                            )

    # -- execution

    def reset_coverage(self) -> None:
        self.coverage = Recorder()

    def snapshot(self) -> CoverageSnapshot:
        return CoverageSnapshot(self.coverage.covered_targets, self.coverage.covered_lines)

    def route(self, verb: str, path: str):
        for ep, rx in self.routes:
            m = rx.fullmatch(path)
            if m and ep.verb.value == verb:
                return ep, {k: unquote(v) for k, v in m.groupdict().items()}
        return None, None

    def dispatch(self, req: WireRequest):
        """Execute one wire-level request; returns (status, body, delta)."""
        delta = Recorder()
        ep, raw_path = self.route(req.verb, req.path)
        if ep is None:
            return 404, {"error": f"no route for {req.verb} {req.path}"}, delta
        try:
            request = self._bind(ep, raw_path, req)
        except BadRequest as e:
            return 400, {"error": str(e)}, delta
        ctx = Context(request, delta, self.globals, self.compiler.functions)
        try:
            result = self.compiler.functions[ep.entry](ctx, [])
            status, body = 200, to_json_safe(result)
        except MslRuntimeError as e:
            status, body = 500, {"error": str(e)}
        self.coverage.merge(delta)
        return status, body, delta

    def _bind(self, ep: EndpointSpec, raw_path: dict, req: WireRequest) -> dict:
        path = {k: coerce_text(raw_path[k], t, f"path.{k}") for k, t in ep.path_params.items()}
        query = {}
        for k, t in ep.query.items():
            if k not in req.query:
                raise BadRequest(f"query.{k}: missing required parameter")
            query[k] = coerce_text(req.query[k], t, f"query.{k}")
        headers = {}
        for k, t in ep.headers.items():
            if k not in req.headers:
                raise BadRequest(f"header.{k}: missing required header")
            headers[k] = coerce_text(unquote(req.headers[k]), t, f"header.{k}")
        body = None
        if ep.body is not None:
            if not req.body:
                raise BadRequest("body: missing")
            try:
                parsed = json.loads(req.body)
            except (ValueError, UnicodeDecodeError):
                raise BadRequest("body: not valid JSON") from None
            body = coerce_json(parsed, ep.body, "body")
        return {"path": path, "query": query, "header": headers, "body": body}


def handle_request(si: ServiceInstance, action: RestCallAction):
    return si.dispatch(to_wire(action))


def enumerate_targets(si: ServiceInstance) -> list:
    return list(si.targets)


def reset_coverage(si: ServiceInstance) -> None:
    si.reset_coverage()


def load_service(path, sources: dict | None = None) -> ServiceInstance:
    """Load a service from a directory (or its ``service.json``).

    ``sources`` optionally overrides unit texts, keyed by unit name.
    """
    path = Path(path)
    spec_file = path / "service.json" if path.is_dir() else path
    root = spec_file.parent
    try:
        spec = ServiceSpec.from_dict(json.loads(spec_file.read_text()), root)
    except (OSError, ValueError) as e:
        if isinstance(e, SpecError):
            raise
        raise SpecError(f"cannot read {spec_file}: {e}") from e
    program = MslProgram()
    for unit_name, file_name in spec.sources.items():
        if sources and unit_name in sources:
            text = sources[unit_name]
        else:
            try:
                text = (root / file_name).read_text(encoding="utf-8")
            except OSError as e:
                raise SpecError(f"cannot read source {file_name}: {e}") from e
        try:
            program.add(parse_msl(text, unit_name))
        except DuplicateDeclaration as e:
            raise SpecError(str(e)) from e
    return ServiceInstance(spec, program)


# ---------------------------------------------------------------------------
# Evaluation harnesses
# ---------------------------------------------------------------------------


def _result_from(statuses, recorder: Recorder, started: float, failure=None) -> ExecutionResult:
    return ExecutionResult(
        statuses=tuple(statuses),
        coverage=CoverageSnapshot(recorder.covered_targets, recorder.covered_lines),
        heuristics=dict(recorder.scores),
        wall_ms=(time.perf_counter() - started) * 1000.0,
        failure=failure,
    )


class InProcessHarness:
    """Runs test cases directly against a loaded service.

    Services keep no state between requests, so an action's outcome depends
    only on its wire form. Outcomes are memoised twice: by action object (a
    mutant shares every untouched action with its parent) and by wire
    content (random mutation often revisits a value).
    """

    def __init__(self, service: ServiceInstance, memo_size: int = 4096):
        self.service = service
        self.memo_size = memo_size
        self._by_action: OrderedDict = OrderedDict()  # id(action) -> (action, status, delta)
        self._by_wire: OrderedDict = OrderedDict()  # wire key -> (status, delta)

    def _remember(self, memo: OrderedDict, key, value) -> None:
        memo[key] = value
        if len(memo) > self.memo_size:
            memo.popitem(last=False)

    def _run(self, action: RestCallAction) -> int:
        if not self.memo_size:
            status, _body, _delta = handle_request(self.service, action)
            return status
        key = id(action)
        hit = self._by_action.get(key)
        if hit is not None and hit[0] is action:
            self._by_action.move_to_end(key)
            self.service.coverage.merge(hit[2])
            return hit[1]
        wire = to_wire(action)
        wkey = (wire.verb, wire.path, tuple(wire.query.items()), tuple(wire.headers.items()), wire.body)
        known = self._by_wire.get(wkey)
        if known is not None:
            self._by_wire.move_to_end(wkey)
            status, delta = known
            self.service.coverage.merge(delta)
        else:
            status, _body, delta = self.service.dispatch(wire)
            self._remember(self._by_wire, wkey, (status, delta))
        self._remember(self._by_action, key, (action, status, delta))
        return status

    def execute(self, tc: TestCase) -> ExecutionResult:
        started = time.perf_counter()
        self.service.reset_coverage()
        statuses = []
        try:
            for action in tc.actions:
                statuses.append(self._run(action))
        except Exception as e:  # interpreter defect, not a modelled 500
            log.warning("harness failure: %s", e)
            return _result_from([], Recorder(), started, failure=repr(e))
        return _result_from(statuses, self.service.coverage, started)


# ---------------------------------------------------------------------------
# HTTP mode
# ---------------------------------------------------------------------------


class BindError(OSError):
    pass


def coverage_payload(recorder: Recorder) -> dict:
    return {
        "covered_targets": sorted(t.id for t in recorder.covered_targets),
        "covered_lines": sorted([u, n] for u, n in recorder.covered_lines),
        "heuristics": {t.id: s for t, s in sorted(recorder.scores.items(), key=lambda kv: kv[0].sort_key)},
    }


class _Handler(BaseHTTPRequestHandler):
    server_version = "hintfuzz-msl"
    protocol_version = "HTTP/1.1"
    # headers and body leave in separate writes; without this, keep-alive
    # clients stall on delayed ACKs for ~40 ms per request
    disable_nagle_algorithm = True

    def log_message(self, fmt, *args):
        log.debug("http: " + fmt, *args)

    def _reply(self, status: int, payload) -> None:
        data = json.dumps(payload, separators=(",", ":"), sort_keys=True).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _handle(self, verb: str) -> None:
        si: ServiceInstance = self.server.service
        parts = urlsplit(self.path)
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else b""
        with self.server.lock:
            if parts.path == "/__coverage" and verb == "GET":
                return self._reply(200, coverage_payload(si.coverage))
            if parts.path == "/__reset" and verb == "POST":
                si.reset_coverage()
                return self._reply(200, {"reset": True})
            query = {k: v[0] for k, v in parse_qs(parts.query, keep_blank_values=True).items()}
            headers = {k.lower(): v for k, v in self.headers.items()}
            status, payload, _ = si.dispatch(WireRequest(verb, parts.path, query, headers, body))
        self._reply(status, payload)

    def do_GET(self):
        self._handle("GET")

    def do_POST(self):
        self._handle("POST")

    def do_PUT(self):
        self._handle("PUT")

    def do_DELETE(self):
        self._handle("DELETE")


class ServerHandle:
    def __init__(self, server: HTTPServer, thread: threading.Thread):
        self.server = server
        self.thread = thread

    @property
    def url(self) -> str:
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}"

    def wait(self) -> None:
        while self.thread.is_alive():
            self.thread.join(timeout=0.5)

    def close(self) -> None:
        self.server.shutdown()
        self.server.server_close()
        self.thread.join(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve_http(si: ServiceInstance, host: str = "127.0.0.1", port: int = 0) -> ServerHandle:
    """Serve ``si`` on a background thread; requests are handled one at a time."""
    try:
        server = HTTPServer((host, port), _Handler)
    except OSError as e:
        raise BindError(f"cannot bind {host}:{port}: {e}") from e
    server.service = si
    server.lock = threading.Lock()
    thread = threading.Thread(target=server.serve_forever, name=f"msl-{si.name}", daemon=True)
    thread.start()
    return ServerHandle(server, thread)


class HttpHarness:
    """Executes test cases against a service served over HTTP."""

    def __init__(self, base_url: str, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.client = httpx.Client(base_url=self.base_url, timeout=timeout)

    def send(self, action: RestCallAction) -> int:
        w = to_wire(action)
        url = w.path + ("?" + urlencode(w.query) if w.query else "")
        headers = dict(w.headers)
        if w.body:
            headers["content-type"] = "application/json"
        r = self.client.request(w.verb, url, headers=headers, content=w.body or None)
        return r.status_code

    def coverage(self) -> dict:
        return self.client.get("/__coverage").json()

    def reset(self) -> None:
        self.client.post("/__reset")

    def execute(self, tc: TestCase) -> ExecutionResult:
        started = time.perf_counter()
        try:
            self.reset()
            statuses = [self.send(a) for a in tc.actions]
            cov = self.coverage()
        except httpx.HTTPError as e:
            log.warning("harness failure: %s", e)
            return _result_from([], Recorder(), started, failure=repr(e))
        heur = {parse_target_id(k): v for k, v in cov["heuristics"].items()}
        return ExecutionResult(
            statuses=tuple(statuses),
            coverage=CoverageSnapshot(
                frozenset(parse_target_id(t) for t in cov["covered_targets"]),
                frozenset((u, n) for u, n in cov["covered_lines"]),
            ),
            heuristics=heur,
            wall_ms=(time.perf_counter() - started) * 1000.0,
        )

    def close(self) -> None:
        self.client.close()


# ---------------------------------------------------------------------------
# Manifest of hard targets
# ---------------------------------------------------------------------------


@dataclass
class HardTarget:
    target: Target
    witness: RestCallAction
    requires_chain: bool = False
    note: str = ""


@dataclass
class Manifest:
    service: str
    hard_targets: list
    executable_lines: frozenset = frozenset()
    all_targets: tuple = ()

    @property
    def hard_ids(self) -> list:
        return [h.target.id for h in self.hard_targets]

    @property
    def chain_ids(self) -> list:
        return [h.target.id for h in self.hard_targets if h.requires_chain]


def load_manifest(path, service: ServiceInstance | None = None) -> Manifest:
    path = Path(path)
    mfile = path / "manifest.json" if path.is_dir() else path
    data = json.loads(mfile.read_text())
    if service is None:
        service = load_service(mfile.parent)
    hard = [
        HardTarget(
            parse_target_id(h["target"]),
            RestCallAction.from_dict(h["witness"]),
            bool(h.get("requires_chain", False)),
            h.get("note", ""),
        )
        for h in data["hard_targets"]
    ]
    known = set(service.targets)
    for h in hard:
        if h.target not in known:
            raise SpecError(f"manifest names unknown target {h.target.id}")
    return Manifest(service.name, hard, frozenset(service.executable_lines), tuple(service.targets))
