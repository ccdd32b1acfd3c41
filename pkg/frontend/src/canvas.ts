// SVG rendering of the topology: pure string output from the graph document
// plus the view model's badges, so it renders identically in tests and in
// the browser. Layout comes from the stored node coordinates; nodes without
// coordinates fall back to a grid.

import { GraphDoc, NodeBadges } from "./viewmodel.js";

export const NODE_W = 132;
export const NODE_H = 44;

const KIND_FILL: Record<string, string> = {
  Start: "#2e7d32",
  End: "#455a64",
  LlmCall: "#6a1b9a",
  Prompt: "#8e24aa",
  Code: "#1565c0",
  SubAgent: "#00695c",
  Tool: "#ef6c00",
  Connector: "#546e7a",
  Branch: "#f9a825",
  ArrayLoop: "#d84315",
  Summary: "#5d4037",
  ErrorHandler: "#c62828",
  AskText: "#0277bd",
  AskChoice: "#0277bd",
  ShowMessage: "#00838f",
  ShowChart: "#00838f",
};

interface Point {
  x: number;
  y: number;
}

function escapeXml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function positions(doc: GraphDoc): Map<string, Point> {
  const out = new Map<string, Point>();
  let fallback = 0;
  for (const node of doc.nodes) {
    if (node.layout) {
      out.set(node.id, { x: node.layout.x, y: node.layout.y });
    } else {
      out.set(node.id, { x: 60 + (fallback % 5) * 180, y: 60 + Math.floor(fallback / 5) * 110 });
      fallback += 1;
    }
  }
  return out;
}

function portPoint(origin: Point, ports: string[], port: string, side: "in" | "out"): Point {
  const index = Math.max(0, ports.indexOf(port));
  const step = NODE_H / (ports.length + 1);
  return {
    x: origin.x + (side === "out" ? NODE_W : 0),
    y: origin.y + step * (index + 1),
  };
}

export function renderGraphSvg(
  doc: GraphDoc,
  badges: (node: string) => NodeBadges,
  selection: string | null = null,
): string {
  const pos = positions(doc);
  const nodesById = new Map(doc.nodes.map((n) => [n.id, n]));
  let minX = 0, minY = 0, maxX = 400, maxY = 200;
  for (const p of pos.values()) {
    minX = Math.min(minX, p.x - 40);
    minY = Math.min(minY, p.y - 40);
    maxX = Math.max(maxX, p.x + NODE_W + 60);
    maxY = Math.max(maxY, p.y + NODE_H + 60);
  }

  const parts: string[] = [];
  for (const edge of doc.edges) {
    const fromNode = nodesById.get(edge.from.node);
    const toNode = nodesById.get(edge.to.node);
    const fromPos = pos.get(edge.from.node);
    const toPos = pos.get(edge.to.node);
    if (!fromNode || !toNode || !fromPos || !toPos) continue;
    const a = portPoint(fromPos, fromNode.out_ports, edge.from.port, "out");
    const b = portPoint(toPos, toNode.in_ports, edge.to.port, "in");
    const bend = Math.max(30, (b.x - a.x) / 2);
    const loop = edge.to.port === "loopback" ? ' stroke-dasharray="6 4"' : "";
    parts.push(
      `<path class="edge" data-edge="${escapeXml(edge.from.node)}.${escapeXml(edge.from.port)}" ` +
      `d="M ${a.x} ${a.y} C ${a.x + bend} ${a.y}, ${b.x - bend} ${b.y}, ${b.x} ${b.y}" ` +
      `fill="none" stroke="#90a4ae" stroke-width="1.6"${loop}/>`,
    );
    parts.push(`<circle cx="${b.x}" cy="${b.y}" r="3" fill="#90a4ae"/>`);
  }

  for (const node of doc.nodes) {
    const p = pos.get(node.id)!;
    const badge = badges(node.id);
    const fill = KIND_FILL[node.kind] ?? "#37474f";
    const selected = selection === node.id ? ' stroke="#ffd600" stroke-width="3"' : ' stroke="#263238" stroke-width="1"';
    const current = badge.current ? `<rect x="${p.x - 4}" y="${p.y - 4}" width="${NODE_W + 8}" height="${NODE_H + 8}" rx="10" fill="none" stroke="#00e5ff" stroke-width="3" class="current"/>` : "";
    const bp = `<circle class="bp" data-node="${escapeXml(node.id)}" cx="${p.x + 10}" cy="${p.y + 10}" r="6" ` +
      (badge.breakpoint ? 'fill="#e53935"' : 'fill="none" stroke="#e53935"') + "/>";
    const count = badge.executed > 0
      ? `<text x="${p.x + NODE_W - 8}" y="${p.y + 14}" font-size="10" fill="#eceff1" text-anchor="end" class="count">${badge.executed}</text>`
      : "";
    parts.push(
      `<g class="node" data-node="${escapeXml(node.id)}">` +
      current +
      `<rect x="${p.x}" y="${p.y}" width="${NODE_W}" height="${NODE_H}" rx="8" fill="${fill}"${selected}/>` +
      bp +
      `<text x="${p.x + NODE_W / 2}" y="${p.y + 20}" font-size="12" fill="#fff" text-anchor="middle">${escapeXml(node.id)}</text>` +
      `<text x="${p.x + NODE_W / 2}" y="${p.y + 34}" font-size="9" fill="#cfd8dc" text-anchor="middle">${escapeXml(node.kind)}</text>` +
      count +
      "</g>",
    );
  }

  const width = maxX - minX;
  const height = maxY - minY;
  return (
    `<svg xmlns="http://www.w3.org/2000/svg" viewBox="${minX} ${minY} ${width} ${height}" ` +
    `width="${width}" height="${height}" class="topology">` +
    parts.join("") +
    "</svg>"
  );
}
