// Every command the client can emit must validate against the same schema
// file the server's tests use (docs/debug-protocol.schema.json).

import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";

import { DebugClient } from "../src/client.js";
import { COMMANDS, ProtocolSchema, checkCommand, checkServerMessage } from "../src/protocol.js";
import { basicServer } from "./fake.js";

const schema = JSON.parse(
  readFileSync(new URL("../../docs/debug-protocol.schema.json", import.meta.url), "utf-8"),
) as ProtocolSchema;

describe("protocol schema", () => {
  it("schema command enum matches the client's command list", () => {
    const enumValues = (schema.definitions.command as any).properties.cmd.enum as string[];
    expect(enumValues).toEqual([...COMMANDS]);
  });

  it("every client command validates against the shared schema", async () => {
    const server = basicServer();
    const client = new DebugClient(server.transportFactory());
    await client.connect();
    client.onSend((cmd) => {
      expect(checkCommand(schema, cmd)).toEqual([]);
    });

    await client.attach();
    await client.start("hello", "Bob", ["greet"]);
    await client.setBreakpoint("sess-1", "greet");
    await client.clearBreakpoint("sess-1", "greet");
    await client.continueRun("sess-1");
    await client.stepOver("sess-1");
    await client.stepInto("sess-1");
    await client.stepOut("sess-1");
    await client.inspect("sess-1");
    await client.provideInput("sess-1", "yes");
    await client.setMimicRule({ id: "r", match: { contains: "x" }, response: "y" });
    await client.clearMimicRules();
    await client.getTrace("sess-1");
    await client.detach();

    expect(server.sent.length).toBe(14);
    const reqs = server.sent.map((c) => c.req);
    expect(new Set(reqs).size).toBe(reqs.length); // unique req per command
  });

  it("rejects malformed commands and foreign keys", () => {
    expect(checkCommand(schema, { cmd: "attach" })).not.toEqual([]);
    expect(checkCommand(schema, { cmd: "explode", req: 1 })).not.toEqual([]);
    expect(checkCommand(schema, { cmd: "attach", req: 1, extra: true })).not.toEqual([]);
    expect(checkCommand(schema, { cmd: "attach", req: "one" })).not.toEqual([]);
    expect(checkCommand(schema, { cmd: "attach", req: 1 })).toEqual([]);
  });

  it("accepts server replies and events, rejects junk", () => {
    expect(checkServerMessage(schema, { re: 3, ok: true, result: {} })).toEqual([]);
    expect(checkServerMessage(schema, { re: null, ok: false, error: "parse" })).toEqual([]);
    expect(checkServerMessage(schema, { event: "paused", session: "s", data: { node: "n" } })).toEqual([]);
    expect(checkServerMessage(schema, { event: "bogus", session: "s", data: {} })).not.toEqual([]);
    expect(checkServerMessage(schema, { nothing: true })).not.toEqual([]);
  });
});
