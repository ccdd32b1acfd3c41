// Debug-protocol client over a message transport (WebSocket in the browser,
// anything line-shaped in tests). Correlates replies by req id; events and
// connection-state changes surface through callbacks.

import { Command, Reply, ServerEvent, ServerMessage, isEvent } from "./protocol.js";

export interface Transport {
  send(text: string): void;
  close(): void;
  onMessage(cb: (text: string) => void): void;
  onClose(cb: () => void): void;
}

export type TransportFactory = () => Promise<Transport>;

interface Pending {
  resolve: (reply: Reply) => void;
  reject: (err: Error) => void;
}

export class DebugClient {
  private transport: Transport | null = null;
  private nextReq = 1;
  private pending = new Map<number, Pending>();
  private eventHandlers: Array<(ev: ServerEvent) => void> = [];
  private sendHandlers: Array<(cmd: Command) => void> = [];
  private closeHandlers: Array<() => void> = [];
  private closedByUs = false;

  constructor(private factory: TransportFactory) {}

  async connect(): Promise<void> {
    this.closedByUs = false;
    this.transport = await this.factory();
    this.transport.onMessage((text) => this.handleText(text));
    this.transport.onClose(() => {
      const lost = !this.closedByUs;
      for (const [, waiter] of this.pending) waiter.reject(new Error("connection closed"));
      this.pending.clear();
      this.transport = null;
      if (lost) for (const cb of this.closeHandlers) cb();
    });
  }

  get connected(): boolean {
    return this.transport !== null;
  }

  onEvent(cb: (ev: ServerEvent) => void): void {
    this.eventHandlers.push(cb);
  }

  onSend(cb: (cmd: Command) => void): void {
    this.sendHandlers.push(cb);
  }

  onConnectionLost(cb: () => void): void {
    this.closeHandlers.push(cb);
  }

  private handleText(text: string): void {
    let msg: ServerMessage;
    try {
      msg = JSON.parse(text) as ServerMessage;
    } catch {
      return; // a malformed server line is not actionable client-side
    }
    if (isEvent(msg)) {
      for (const cb of this.eventHandlers) cb(msg);
      return;
    }
    if (msg.re !== null && this.pending.has(msg.re)) {
      const waiter = this.pending.get(msg.re)!;
      this.pending.delete(msg.re);
      waiter.resolve(msg);
    }
  }

  request(cmd: string, args?: Record<string, unknown>): Promise<Reply> {
    if (!this.transport) return Promise.reject(new Error("not connected"));
    const message: Command = { cmd, req: this.nextReq++, args: args ?? {} };
    for (const cb of this.sendHandlers) cb(message);
    const promise = new Promise<Reply>((resolve, reject) => {
      this.pending.set(message.req, { resolve, reject });
    });
    this.transport.send(JSON.stringify(message));
    return promise;
  }

  async must(cmd: string, args?: Record<string, unknown>): Promise<Record<string, unknown>> {
    const reply = await this.request(cmd, args);
    if (!reply.ok) throw new Error(`${cmd} failed: ${reply.error ?? "unknown error"}`);
    return reply.result ?? {};
  }

  close(): void {
    this.closedByUs = true;
    this.transport?.close();
    this.transport = null;
  }

  // -- typed command surface: every control maps 1:1 to one command ---------

  attach() {
    return this.must("attach");
  }

  start(graph: string | null, input: unknown, breakpoints: string[] = []) {
    const args: Record<string, unknown> = { input, breakpoints };
    if (graph) args.graph = graph;
    return this.must("start", args);
  }

  setBreakpoint(session: string, node: string) {
    return this.must("set_breakpoint", { session, node });
  }

  clearBreakpoint(session: string, node: string) {
    return this.must("clear_breakpoint", { session, node });
  }

  continueRun(session: string) {
    return this.must("continue", { session });
  }

  stepOver(session: string) {
    return this.must("step_over", { session });
  }

  stepInto(session: string) {
    return this.must("step_into", { session });
  }

  stepOut(session: string) {
    return this.must("step_out", { session });
  }

  inspect(session: string) {
    return this.must("inspect", { session });
  }

  provideInput(session: string, value: unknown) {
    return this.must("provide_input", { session, value });
  }

  setMimicRule(rule: Record<string, unknown>) {
    return this.must("set_mimic_rule", { rule });
  }

  clearMimicRules() {
    return this.must("clear_mimic_rules");
  }

  getTrace(session: string) {
    return this.must("get_trace", { session });
  }

  detach() {
    return this.must("detach");
  }
}

// Browser/Node WebSocket transport. The constructor is injected so tests
// can pass the `ws` package's client in Node.
type WebSocketLike = {
  send(data: string): void;
  close(): void;
  addEventListener(name: string, cb: (ev: any) => void): void;
};

export function wsTransportFactory(
  url: string,
  makeSocket: (url: string) => WebSocketLike = (u) => new (globalThis as any).WebSocket(u),
): TransportFactory {
  return () =>
    new Promise<Transport>((resolve, reject) => {
      const socket = makeSocket(url);
      const messageCbs: Array<(text: string) => void> = [];
      const closeCbs: Array<() => void> = [];
      socket.addEventListener("open", () => {
        resolve({
          send: (text) => socket.send(text),
          close: () => socket.close(),
          onMessage: (cb) => messageCbs.push(cb),
          onClose: (cb) => closeCbs.push(cb),
        });
      });
      socket.addEventListener("message", (ev) => {
        const data = typeof ev.data === "string" ? ev.data : String(ev.data);
        for (const cb of messageCbs) cb(data);
      });
      socket.addEventListener("close", () => {
        for (const cb of closeCbs) cb();
        reject(new Error("socket closed before opening"));
      });
      socket.addEventListener("error", () => {
        /* close follows */
      });
    });
}
