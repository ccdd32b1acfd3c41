// Wire protocol types and a small structural validator, shared by the
// client and the test suite (which loads the same schema file the server
// tests validate against).

export interface Command {
  cmd: string;
  req: number;
  session?: string;
  args?: Record<string, unknown>;
}

export interface Reply {
  re: number | null;
  ok: boolean;
  result?: Record<string, unknown>;
  error?: string;
}

export interface ServerEvent {
  event: string;
  session: string;
  data: Record<string, unknown>;
}

export type ServerMessage = Reply | ServerEvent;

export function isEvent(msg: ServerMessage): msg is ServerEvent {
  return typeof (msg as ServerEvent).event === "string";
}

export const COMMANDS = [
  "attach", "start", "set_breakpoint", "clear_breakpoint", "continue",
  "step_over", "step_into", "step_out", "inspect", "provide_input",
  "set_mimic_rule", "clear_mimic_rules", "get_trace", "detach",
] as const;

export type CommandName = (typeof COMMANDS)[number];

// --- minimal JSON-schema checker ------------------------------------------------
// Supports the subset the protocol schema uses: type (incl. union arrays),
// enum, required, properties, additionalProperties: false.

type Schema = {
  type?: string | string[];
  enum?: unknown[];
  required?: string[];
  properties?: Record<string, Schema>;
  additionalProperties?: boolean;
};

function typeOf(value: unknown): string {
  if (value === null) return "null";
  if (Array.isArray(value)) return "array";
  if (typeof value === "number") return Number.isInteger(value) ? "integer" : "number";
  return typeof value;
}

function typeMatches(actual: string, wanted: string): boolean {
  return wanted === actual || (wanted === "number" && actual === "integer");
}

export function checkAgainst(schema: Schema, value: unknown, path = "$"): string[] {
  const problems: string[] = [];
  if (schema.type !== undefined) {
    const wanted = Array.isArray(schema.type) ? schema.type : [schema.type];
    const actual = typeOf(value);
    if (!wanted.some((w) => typeMatches(actual, w))) {
      problems.push(`${path}: expected ${wanted.join("|")}, got ${actual}`);
      return problems;
    }
  }
  if (schema.enum !== undefined && !schema.enum.includes(value)) {
    problems.push(`${path}: ${JSON.stringify(value)} is not one of the allowed values`);
  }
  if (typeOf(value) === "object") {
    const obj = value as Record<string, unknown>;
    for (const key of schema.required ?? []) {
      if (!(key in obj)) problems.push(`${path}: missing required key ${JSON.stringify(key)}`);
    }
    if (schema.properties) {
      for (const [key, sub] of Object.entries(schema.properties)) {
        if (key in obj) problems.push(...checkAgainst(sub, obj[key], `${path}.${key}`));
      }
      if (schema.additionalProperties === false) {
        for (const key of Object.keys(obj)) {
          if (!(key in schema.properties)) problems.push(`${path}: unexpected key ${JSON.stringify(key)}`);
        }
      }
    }
  }
  return problems;
}

export interface ProtocolSchema {
  definitions: { command: Schema; reply: Schema; event: Schema };
}

export function checkCommand(schema: ProtocolSchema, command: unknown): string[] {
  return checkAgainst(schema.definitions.command, command);
}

export function checkServerMessage(schema: ProtocolSchema, msg: unknown): string[] {
  const asEvent = checkAgainst(schema.definitions.event, msg);
  if (asEvent.length === 0) return [];
  const asReply = checkAgainst(schema.definitions.reply, msg);
  if (asReply.length === 0) return [];
  return asReply.concat(asEvent);
}
