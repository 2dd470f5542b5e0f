/**
 * Foreign-SUT surface: register callbacks, serve them to the harness over
 * its newline-delimited JSON TCP protocol.
 *
 * Frames from the harness: load / issue / flush / unload. Frames back:
 * ack (for load and flush) and complete, one per response id. Timestamps are
 * always taken harness-side; in virtual time the SUT declares its service
 * time via latency_ns on each complete frame.
 */
import net from "node:net";
import { performance } from "node:perf_hooks";

import type { CompletionContext, IssuedQuery, SutCallbacks } from "./types.js";

export class RegistrationError extends Error {}

interface WireFrame {
  type: string;
  [key: string]: unknown;
}

function nowNs(): number {
  return Math.round(performance.now() * 1e6);
}

/** Precise wall delay: coarse timer, then a bounded spin for the tail. */
function deliverAfter(ns: number, fn: () => void): void {
  const target = nowNs() + ns;
  const coarseMs = Math.max(0, Math.floor((ns - 1_500_000) / 1e6));
  const fire = () => {
    while (nowNs() < target) {
      /* spin the sub-millisecond remainder */
    }
    fn();
  };
  if (coarseMs > 0) {
    setTimeout(fire, coarseMs);
  } else {
    setImmediate(fire);
  }
}

export class SutHandle {
  private server: net.Server;
  private sockets = new Set<net.Socket>();
  port = 0;

  constructor(private callbacks: SutCallbacks, private name = "ts-sut") {
    this.server = net.createServer((socket) => this.serve(socket));
  }

  /** Start listening; resolves to the bound port. */
  listen(host = "127.0.0.1", port = 0): Promise<number> {
    return new Promise((resolve, reject) => {
      this.server.once("error", reject);
      this.server.listen(port, host, () => {
        const addr = this.server.address();
        if (addr && typeof addr === "object") {
          this.port = addr.port;
        }
        resolve(this.port);
      });
    });
  }

  close(): Promise<void> {
    for (const s of this.sockets) {
      s.destroy();
    }
    return new Promise((resolve) => this.server.close(() => resolve()));
  }

  get sutSpec(): string {
    return `tcp:127.0.0.1:${this.port}`;
  }

  private serve(socket: net.Socket): void {
    this.sockets.add(socket);
    socket.setNoDelay(true);
    socket.on("close", () => this.sockets.delete(socket));
    socket.on("error", () => this.sockets.delete(socket));
    let buffer = "";
    socket.on("data", (chunk) => {
      buffer += chunk.toString("ascii");
      let nl;
      while ((nl = buffer.indexOf("\n")) >= 0) {
        const line = buffer.slice(0, nl);
        buffer = buffer.slice(nl + 1);
        if (line.trim()) {
          this.handleFrame(socket, JSON.parse(line) as WireFrame);
        }
      }
    });
  }

  private send(socket: net.Socket, frame: WireFrame): void {
    if (!socket.destroyed) {
      socket.write(JSON.stringify(frame) + "\n");
    }
  }

  private handleFrame(socket: net.Socket, frame: WireFrame): void {
    try {
      switch (frame.type) {
        case "load":
          this.callbacks.loadSamples(frame.sample_indices as number[]);
          this.send(socket, { type: "ack", of: "load" });
          break;
        case "flush":
          this.callbacks.flush();
          this.send(socket, { type: "ack", of: "flush" });
          break;
        case "unload":
          socket.end();
          break;
        case "issue":
          this.handleIssue(socket, frame);
          break;
        default:
          throw new Error(`unknown frame type ${frame.type}`);
      }
    } catch (err) {
      // a foreign exception is a protocol failure: drop the connection so
      // the harness records the run as incomplete and invalid
      process.stderr.write(`loadgauge-bindings: SUT error: ${String(err)}\n`);
      socket.destroy();
    }
  }

  private handleIssue(socket: net.Socket, frame: WireFrame): void {
    const clock = (frame.clock as IssuedQuery["clock"]) ?? "wall";
    const query: IssuedQuery = {
      queryId: frame.query_id as number,
      responseIds: frame.response_ids as number[],
      sampleIndices: frame.sample_indices as number[],
      issueNs: frame.issue_ns as number,
      mode: frame.mode as IssuedQuery["mode"],
      log: Boolean(frame.log),
      clock,
    };
    const pending = new Set(query.responseIds);
    const ctx: CompletionContext = {
      complete: (responseId, opts) => {
        if (!pending.delete(responseId)) {
          throw new Error(`duplicate or unknown response id ${responseId}`);
        }
        const payload =
          opts?.payload !== undefined && query.log
            ? Buffer.from(opts.payload).toString("base64")
            : null;
        const latency = opts?.latencyNs ?? 0;
        const frameOut: WireFrame = {
          type: "complete",
          response_id: responseId,
          latency_ns: Math.round(latency),
          payload_b64: payload,
        };
        if (clock === "wall" && latency > 0) {
          deliverAfter(latency, () => this.send(socket, frameOut));
        } else {
          this.send(socket, frameOut);
        }
      },
    };
    this.callbacks.issueQuery(query, ctx);
  }
}

/**
 * Register a SUT. All three callbacks are required; the returned handle
 * exposes the completion surface to the harness once listening.
 */
export function registerSut(callbacks: SutCallbacks, name?: string): SutHandle {
  for (const required of ["loadSamples", "issueQuery", "flush"] as const) {
    if (typeof callbacks?.[required] !== "function") {
      throw new RegistrationError(`missing required callback ${required}`);
    }
  }
  return new SutHandle(callbacks, name);
}
