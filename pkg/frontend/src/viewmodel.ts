// Canvas view model: the single source of truth is the server. Every badge,
// meter, and feed row derives from protocol replies and events; user actions
// only send commands and apply their effects when the reply confirms them.

import { DebugClient } from "./client.js";
import { ServerEvent } from "./protocol.js";

export interface GraphDoc {
  schema_version: number;
  name: string;
  entry: string;
  nodes: Array<{
    id: string;
    kind: string;
    config: Record<string, unknown>;
    in_ports: string[];
    out_ports: string[];
    layout?: { x: number; y: number };
  }>;
  edges: Array<{ from: { node: string; port: string }; to: { node: string; port: string } }>;
}

export interface NodeBadges {
  breakpoint: boolean;
  current: boolean;
  executed: number;
}

export interface FrameView {
  kind: string;
  node: string | null;
  owner: string | null;
  env: Record<string, unknown>;
}

export interface UsageMeters {
  live_calls: number;
  mimic_calls: number;
  prompt_tokens: number;
  completion_tokens: number;
  saved_tokens: number;
}

export interface FeedRow {
  label: string;
  detail: string;
}

export interface PromptSpec {
  node: string;
  question: string;
  options?: string[];
}

const EMPTY_USAGE: UsageMeters = {
  live_calls: 0, mimic_calls: 0, prompt_tokens: 0, completion_tokens: 0, saved_tokens: 0,
};

export class CanvasViewModel {
  graphs: Record<string, GraphDoc> = {};
  entryGraph = "";
  activeGraph = "";
  session: string | null = null;
  status = "Detached";
  connection: "connecting" | "open" | "lost" = "connecting";
  badges = new Map<string, NodeBadges>();
  selection: string | null = null;
  feed: FeedRow[] = [];
  frames: FrameView[] = [];
  usage: UsageMeters = { ...EMPTY_USAGE };
  prompt: PromptSpec | null = null;
  result: unknown = undefined;
  error: unknown = undefined;
  lastStop: { node: string | null; frame_depth: number } | null = null;
  lastChart: { title: string; data: unknown } | null = null;
  private listeners: Array<() => void> = [];

  constructor(private client: DebugClient) {
    client.onEvent((ev) => this.applyEvent(ev));
    client.onConnectionLost(() => {
      this.connection = "lost";
      this.notify();
    });
  }

  onChange(cb: () => void): void {
    this.listeners.push(cb);
  }

  private notify(): void {
    for (const cb of this.listeners) cb();
  }

  badge(node: string): NodeBadges {
    let entry = this.badges.get(node);
    if (!entry) {
      entry = { breakpoint: false, current: false, executed: 0 };
      this.badges.set(node, entry);
    }
    return entry;
  }

  graphDoc(): GraphDoc | null {
    return this.graphs[this.activeGraph] ?? null;
  }

  select(node: string | null): void {
    this.selection = node;
    this.notify();
  }

  // -- connection lifecycle ---------------------------------------------------

  async connectAndAttach(): Promise<void> {
    this.connection = "connecting";
    this.notify();
    await this.client.connect();
    const result = await this.client.attach();
    this.graphs = (result.graphs ?? {}) as Record<string, GraphDoc>;
    this.entryGraph = (result.entry_graph ?? "") as string;
    if (!this.activeGraph) this.activeGraph = this.entryGraph;
    this.connection = "open";
    this.notify();
  }

  /** Reconnect after a drop and rebuild all state from the server. */
  async reattach(session: string | null = this.session): Promise<void> {
    await this.connectAndAttach();
    if (session) {
      this.session = session;
      await this.refreshFromServer();
    }
  }

  async startSession(input: unknown, graph: string | null = null): Promise<string> {
    const result = await this.client.start(graph ?? this.entryGraph, input);
    this.session = result.session as string;
    this.activeGraph = (result.graph as string) ?? this.entryGraph;
    this.status = "Ready";
    this.badges.clear();
    this.feed = [];
    this.frames = [];
    this.usage = { ...EMPTY_USAGE };
    this.prompt = null;
    this.result = undefined;
    this.error = undefined;
    this.notify();
    return this.session;
  }

  // -- controls: each maps to exactly one command -------------------------------

  async toggleBreakpoint(node: string): Promise<boolean> {
    if (!this.session) throw new Error("no session");
    const has = this.badge(node).breakpoint;
    const result = has
      ? await this.client.clearBreakpoint(this.session, node)
      : await this.client.setBreakpoint(this.session, node);
    // the reply's breakpoint list is authoritative; only now update badges
    const actual = new Set((result.breakpoints ?? []) as string[]);
    for (const [id, badge] of this.badges) badge.breakpoint = actual.has(id);
    for (const id of actual) this.badge(id).breakpoint = true;
    this.notify();
    return this.badge(node).breakpoint;
  }

  private applyStop(result: Record<string, unknown>): void {
    this.status = (result.status as string) ?? this.status;
    this.lastStop = {
      node: (result.node as string) ?? null,
      frame_depth: (result.frame_depth as number) ?? 1,
    };
    if ("result" in result) this.result = result.result;
    if ("error" in result) this.error = result.error;
  }

  async continueRun(): Promise<void> {
    if (!this.session) throw new Error("no session");
    this.applyStop(await this.client.continueRun(this.session));
    await this.refreshFrames();
  }

  async stepOver(): Promise<void> {
    if (!this.session) throw new Error("no session");
    this.applyStop(await this.client.stepOver(this.session));
    await this.refreshFrames();
  }

  async stepInto(): Promise<void> {
    if (!this.session) throw new Error("no session");
    this.applyStop(await this.client.stepInto(this.session));
    await this.refreshFrames();
  }

  async stepOut(): Promise<void> {
    if (!this.session) throw new Error("no session");
    this.applyStop(await this.client.stepOut(this.session));
    await this.refreshFrames();
  }

  async answerInteraction(value: unknown): Promise<void> {
    if (!this.session) throw new Error("no session");
    await this.client.provideInput(this.session, value);
    this.prompt = null;
    this.notify();
  }

  async setMimic(rule: Record<string, unknown>): Promise<void> {
    await this.client.setMimicRule(rule);
  }

  async downloadTrace(): Promise<string> {
    if (!this.session) throw new Error("no session");
    const log = await this.client.getTrace(this.session);
    return JSON.stringify(log, null, 2) + "\n";
  }

  // -- server-driven state ---------------------------------------------------------

  private async refreshFrames(): Promise<void> {
    if (!this.session) return;
    const snap = await this.client.inspect(this.session);
    this.applySnapshot(snap);
    this.notify();
  }

  private applySnapshot(snap: Record<string, unknown>): void {
    this.frames = (snap.frames ?? []) as FrameView[];
    this.usage = { ...EMPTY_USAGE, ...(snap.usage as UsageMeters) };
    const status = snap.status as Record<string, unknown>;
    this.status = (status.state as string) ?? "Unknown";
    if (this.status === "Finished") this.result = status.result;
    if (this.status === "Failed") this.error = status.error;
    if (this.status === "AwaitingInput") this.prompt = status.prompt as unknown as PromptSpec;
    for (const badge of this.badges.values()) badge.breakpoint = false;
    for (const id of (snap.breakpoints ?? []) as string[]) this.badge(id).breakpoint = true;
  }

  /** Rebuild badges and meters after a page reload: inspect + trace replay. */
  async refreshFromServer(): Promise<void> {
    if (!this.session) return;
    const snap = await this.client.inspect(this.session);
    this.applySnapshot(snap);
    for (const badge of this.badges.values()) {
      badge.executed = 0;
      badge.current = false;
    }
    const log = await this.client.getTrace(this.session);
    const events = (log.events ?? []) as Array<Record<string, unknown>>;
    for (const event of events) {
      if (event.kind === "NodeEnter" && typeof event.node === "string") {
        this.badge(event.node).executed += 1;
      }
    }
    const current = this.frames.length ? this.frames[this.frames.length - 1].node : null;
    if (current) this.badge(current).current = true;
    this.notify();
  }

  private applyEvent(ev: ServerEvent): void {
    if (this.session && ev.session !== this.session) return;
    const data = ev.data as Record<string, unknown>;
    switch (ev.event) {
      case "node_entered": {
        const node = data.node as string;
        for (const badge of this.badges.values()) badge.current = false;
        const badge = this.badge(node);
        badge.executed += 1;
        badge.current = true;
        this.feed.push({ label: "enter", detail: node });
        break;
      }
      case "node_exited":
        this.feed.push({ label: "exit", detail: data.node as string });
        break;
      case "paused": {
        const node = (data.node as string) ?? null;
        for (const badge of this.badges.values()) badge.current = false;
        if (node) this.badge(node).current = true;
        this.status = "PausedBreakpoint";
        this.lastStop = { node, frame_depth: (data.frame_depth as number) ?? 1 };
        this.feed.push({ label: "paused", detail: node ?? "" });
        break;
      }
      case "awaiting_input":
        this.prompt = data as unknown as PromptSpec;
        this.status = "AwaitingInput";
        this.feed.push({ label: "ask", detail: (data.question as string) ?? "" });
        break;
      case "display":
        if (data.widget === "chart") {
          this.lastChart = { title: (data.title as string) ?? "", data: data.data };
        }
        this.feed.push({
          label: data.widget === "chart" ? "chart" : "message",
          detail: (data.text as string) ?? JSON.stringify(data.data),
        });
        break;
      case "finished":
        this.status = "Finished";
        this.result = data.result;
        for (const badge of this.badges.values()) badge.current = false;
        this.feed.push({ label: "finished", detail: JSON.stringify(data.result) });
        break;
      case "failed":
        this.status = "Failed";
        this.error = data.error;
        for (const badge of this.badges.values()) badge.current = false;
        this.feed.push({ label: "failed", detail: JSON.stringify(data.error) });
        break;
    }
    this.notify();
  }
}
