"""Out-of-process SUT attachment over TCP.

Newline-delimited JSON frames, harness acting as client:

  -> {"type":"load","sample_indices":[...]}            <- {"type":"ack","of":"load"}
  -> {"type":"issue","query_id":..,"response_ids":[..],"sample_indices":[..],
      "issue_ns":..,"mode":"performance"|"accuracy","log":bool}
  <- {"type":"complete","response_id":..,"payload_b64":..|null,"latency_ns":..|null}
  -> {"type":"flush"}                                  <- {"type":"ack","of":"flush"}
  -> {"type":"unload","sample_indices":[...]}

Timestamps are always taken harness-side. In virtual-time mode the SUT
declares its service time via latency_ns and the issue/complete exchange is
a synchronous round trip; in wall-clock mode completions are stamped on
arrival and latency_ns is ignored.
"""
from __future__ import annotations

import base64
import json
import socket
import socketserver
import threading
from typing import Optional

from .core import Query, TestSettings
from .engine import ProtocolError, SutContract, SutContext
from .simsut import Simulator


class TcpProtocolError(ProtocolError):
    """Malformed or out-of-contract traffic from an attached SUT."""


class _FrameSocket:
    def __init__(self, host: str, port: int, timeout_s: float = 30.0):
        self.sock = socket.create_connection((host, port), timeout=timeout_s)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._rfile = self.sock.makefile("r", encoding="ascii", newline="\n")
        self._lock = threading.Lock()

    def send(self, frame: dict) -> None:
        data = (json.dumps(frame, separators=(",", ":")) + "\n").encode("ascii")
        with self._lock:
            self.sock.sendall(data)

    def recv(self) -> dict:
        line = self._rfile.readline()
        if not line:
            raise TcpProtocolError("SUT closed the connection")
        try:
            return json.loads(line)
        except json.JSONDecodeError as e:
            raise TcpProtocolError(f"bad frame from SUT: {e}") from e

    def close(self) -> None:
        try:
            self._rfile.close()
            self.sock.close()
        except OSError:
            pass


def _query_frame(query: Query, issue_ns: int, mode: str, log: bool, clock: str) -> dict:
    return {
        "type": "issue",
        "query_id": int(query.query_id),
        "response_ids": [int(r) for r in query.response_ids],
        "sample_indices": [int(s) for s in query.sample_indices],
        "issue_ns": int(issue_ns),
        "mode": mode,
        "log": bool(log),
        "clock": clock,
    }


class TcpSut(SutContract):
    """Wall-clock adapter: a reader thread stamps completions on arrival."""

    def __init__(self, host: str, port: int):
        self.name = f"tcp:{host}:{port}"
        self.host, self.port = host, port
        self._fs: Optional[_FrameSocket] = None
        self._reader: Optional[threading.Thread] = None
        self._flush_ack = threading.Event()

    def attach(self, ctx: SutContext) -> None:
        self.ctx = ctx
        self._fs = _FrameSocket(self.host, self.port)
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        while True:
            try:
                frame = self._fs.recv()
            except TcpProtocolError:
                return
            t = frame.get("type")
            if t == "complete":
                payload = frame.get("payload_b64")
                data = base64.b64decode(payload) if payload else None
                self.ctx.complete(int(frame["response_id"]), data)
            elif t == "ack" and frame.get("of") == "flush":
                self._flush_ack.set()

    def load_samples(self, indices) -> None:
        self._fs.send({"type": "load", "sample_indices": [int(i) for i in indices]})

    def unload_samples(self, indices) -> None:
        if self._fs is not None:
            try:
                self._fs.send({"type": "unload", "sample_indices": []})
            except OSError:
                pass
            self._fs.close()
            self._fs = None

    def issue_query(self, query: Query) -> None:
        want = self.ctx.wants_payload(query.response_ids[0])
        self._fs.send(_query_frame(query, self.ctx.now_ns(), self.ctx.mode.value, want, "wall"))

    def flush(self) -> None:
        self._flush_ack.clear()
        self._fs.send({"type": "flush"})
        self._flush_ack.wait(timeout=30.0)

    # virtual-time attachment -------------------------------------------------
    def simulator(self, settings: TestSettings, trace) -> "TcpVirtualSim":
        return TcpVirtualSim(self.host, self.port, settings, trace)


class TcpVirtualSim(Simulator):
    """Virtual-time adapter: one synchronous round trip per query; the SUT
    declares service time as latency_ns relative to the virtual issue stamp."""

    def __init__(self, host: str, port: int, settings: TestSettings, trace):
        self.name = f"tcp:{host}:{port}"
        self._fs = _FrameSocket(host, port)
        self._settings = settings
        self._trace = trace
        self._payloads: Optional[dict[int, bytes]] = None
        self._fs.send({
            "type": "load",
            "sample_indices": list(range(settings.loaded_sample_count)),
        })
        ack = self._fs.recv()
        if ack.get("type") != "ack" or ack.get("of") != "load":
            raise TcpProtocolError(f"expected load ack, got {ack}")
        self._log_all = settings.mode.value == "accuracy"

    def completion_for(self, qidx: int, issue_ns: int) -> int:
        q = self._trace.query(qidx)
        want = True  # virtual round trips are cheap; payloads always travel
        self._fs.send(_query_frame(q, issue_ns, self._settings.mode.value, want, "virtual"))
        remaining = {int(r) for r in q.response_ids}
        payloads: dict[int, bytes] = {}
        latest = issue_ns
        while remaining:
            frame = self._fs.recv()
            if frame.get("type") != "complete":
                raise TcpProtocolError(f"expected complete frame, got {frame}")
            rid = int(frame["response_id"])
            if rid not in remaining:
                raise TcpProtocolError(f"unexpected response id {rid}")
            remaining.discard(rid)
            lat = frame.get("latency_ns")
            if lat is None:
                raise TcpProtocolError("virtual mode requires latency_ns in complete frames")
            latest = max(latest, issue_ns + int(lat))
            b64 = frame.get("payload_b64")
            if b64:
                payloads[rid] = base64.b64decode(b64)
        self._payloads = payloads
        return latest

    def take_payloads(self) -> Optional[dict[int, bytes]]:
        p, self._payloads = self._payloads, None
        return p

    def close(self) -> None:
        try:
            self._fs.send({"type": "flush"})
            self._fs.recv()
        except (OSError, TcpProtocolError):
            pass
        self._fs.close()


class ProfileTcpServer:
    """Reference TCP SUT: serves a simulated profile for end-to-end tests."""

    def __init__(self, profile, settings: TestSettings, trace, host: str = "127.0.0.1", port: int = 0):
        self.profile = profile
        self.settings = settings
        self.trace = trace
        outer = self

        class Handler(socketserver.StreamRequestHandler):
            def handle(self):
                sim = outer.profile.simulator(outer.settings, outer.trace)
                for raw_line in self.rfile:
                    line = raw_line.decode("ascii").strip()
                    if not line:
                        continue
                    frame = json.loads(line)
                    t = frame.get("type")
                    if t == "load":
                        self._send({"type": "ack", "of": "load"})
                    elif t == "flush":
                        self._send({"type": "ack", "of": "flush"})
                    elif t == "unload":
                        return
                    elif t == "issue":
                        issue_ns = int(frame["issue_ns"])
                        qidx = int(frame["query_id"]) % outer.trace.n_queries
                        comp = sim.completion_for(qidx, issue_ns)
                        want = bool(frame.get("log"))
                        for rid, sidx in zip(frame["response_ids"], frame["sample_indices"]):
                            payload = (
                                base64.b64encode(sim.payload(int(sidx))).decode("ascii")
                                if want else None
                            )
                            self._send({
                                "type": "complete",
                                "response_id": int(rid),
                                "latency_ns": int(comp - issue_ns),
                                "payload_b64": payload,
                            })

            def _send(self, frame: dict) -> None:
                self.wfile.write((json.dumps(frame, separators=(",", ":")) + "\n").encode("ascii"))

        self._server = socketserver.ThreadingTCPServer((host, port), Handler)
        self._server.daemon_threads = True
        self.port = self._server.server_address[1]
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    def start(self) -> "ProfileTcpServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
