// Interaction widgets rendered as HTML/SVG strings: AskText becomes an
// input row, AskChoice buttons, ShowMessage a chat bubble, ShowChart a
// simple bar chart of a numeric array.

import { FeedRow, PromptSpec } from "./viewmodel.js";

function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderPrompt(prompt: PromptSpec): string {
  const question = `<div class="question">${escapeHtml(prompt.question)}</div>`;
  if (prompt.options && prompt.options.length) {
    const buttons = prompt.options
      .map((option) => `<button class="choice" data-choice="${escapeHtml(option)}">${escapeHtml(option)}</button>`)
      .join("");
    return `<div class="ask ask-choice">${question}<div class="choices">${buttons}</div></div>`;
  }
  return (
    `<div class="ask ask-text">${question}` +
    `<input class="answer" type="text" placeholder="answer…"/>` +
    `<button class="send">Send</button></div>`
  );
}

export function renderMessage(text: string): string {
  return `<div class="bubble">${escapeHtml(text)}</div>`;
}

export function renderChart(data: unknown, title = ""): string {
  const values = Array.isArray(data) ? data.filter((v): v is number => typeof v === "number") : [];
  const width = 240;
  const height = 120;
  if (!values.length) {
    return `<svg class="chart empty" width="${width}" height="${height}"><text x="8" y="20" font-size="11">no numeric data</text></svg>`;
  }
  const max = Math.max(...values.map((v) => Math.abs(v)), 1e-9);
  const barW = width / values.length;
  const bars = values
    .map((v, i) => {
      const h = Math.max(1, (Math.abs(v) / max) * (height - 24));
      const x = i * barW + 2;
      const y = height - h - 4;
      return `<rect class="bar" x="${x.toFixed(1)}" y="${y.toFixed(1)}" width="${(barW - 4).toFixed(1)}" height="${h.toFixed(1)}" fill="#29b6f6"><title>${v}</title></rect>`;
    })
    .join("");
  const caption = title ? `<text x="4" y="12" font-size="11" fill="#90a4ae">${escapeHtml(title)}</text>` : "";
  return `<svg class="chart" width="${width}" height="${height}" viewBox="0 0 ${width} ${height}">${caption}${bars}</svg>`;
}

export function renderFeed(rows: FeedRow[]): string {
  const items = rows
    .map((row) => `<li class="feed-${escapeHtml(row.label)}"><span>${escapeHtml(row.label)}</span> ${escapeHtml(row.detail)}</li>`)
    .join("");
  return `<ul class="feed">${items}</ul>`;
}

export function renderFrames(frames: Array<{ kind: string; node: string | null; env: Record<string, unknown> }>): string {
  const blocks = frames
    .map((frame, depth) => {
      const vars = Object.entries(frame.env)
        .map(([key, value]) => `<li><code>${escapeHtml(key)}</code> = <code>${escapeHtml(JSON.stringify(value))}</code></li>`)
        .join("");
      return (
        `<details open class="frame depth-${depth + 1}">` +
        `<summary>#${depth + 1} ${escapeHtml(frame.kind)}${frame.node ? " @ " + escapeHtml(frame.node) : ""}</summary>` +
        `<ul class="vars">${vars}</ul></details>`
      );
    })
    .join("");
  return `<div class="frames">${blocks}</div>`;
}

export function renderUsage(usage: { live_calls: number; mimic_calls: number; prompt_tokens: number; completion_tokens: number; saved_tokens: number }): string {
  return (
    `<div class="usage">` +
    `<span class="meter live">live ${usage.live_calls}</span>` +
    `<span class="meter mimic">mimic ${usage.mimic_calls}</span>` +
    `<span class="meter tokens">tokens ${usage.prompt_tokens + usage.completion_tokens}</span>` +
    `<span class="meter saved">saved ${usage.saved_tokens}</span>` +
    `</div>`
  );
}
