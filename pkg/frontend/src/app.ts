// Browser bootstrap: binds the view model to the page. This is the only
// DOM-coupled module; everything it renders comes from pure functions.

import { DebugClient, wsTransportFactory } from "./client.js";
import { renderGraphSvg } from "./canvas.js";
import { CanvasViewModel } from "./viewmodel.js";
import { renderChart, renderFeed, renderFrames, renderMessage, renderPrompt, renderUsage } from "./widgets.js";

function $(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing #${id}`);
  return el;
}

function defaultEndpoint(): string {
  const qs = new URLSearchParams(location.search);
  return qs.get("ws") ?? `ws://${location.host}/debug`;
}

export async function boot(): Promise<void> {
  const endpoint = defaultEndpoint();
  const client = new DebugClient(wsTransportFactory(endpoint));
  const vm = new CanvasViewModel(client);
  const banner = $("banner");
  const canvasHost = $("canvas");
  const sideHost = $("side");
  const promptHost = $("prompt");

  function render(): void {
    banner.textContent =
      vm.connection === "open"
        ? `${endpoint} — ${vm.status}${vm.session ? " · " + vm.session.slice(0, 8) : ""}`
        : vm.connection === "lost"
          ? "connection lost — reconnecting…"
          : "connecting…";
    banner.className = `banner ${vm.connection}`;

    const doc = vm.graphDoc();
    canvasHost.innerHTML = doc ? renderGraphSvg(doc, (n) => vm.badge(n), vm.selection) : "<p>no graph</p>";
    for (const dot of canvasHost.querySelectorAll<SVGElement>(".bp")) {
      dot.addEventListener("click", (ev) => {
        ev.stopPropagation();
        const node = dot.getAttribute("data-node");
        if (node && vm.session) void vm.toggleBreakpoint(node);
      });
    }
    for (const group of canvasHost.querySelectorAll<SVGElement>(".node")) {
      group.addEventListener("click", () => vm.select(group.getAttribute("data-node")));
    }

    sideHost.innerHTML =
      renderUsage(vm.usage) +
      renderFrames(vm.frames) +
      (vm.lastChart ? renderChart(vm.lastChart.data, vm.lastChart.title) : "") +
      renderFeed(vm.feed.slice(-40)) +
      (vm.result !== undefined ? renderMessage("result: " + JSON.stringify(vm.result)) : "") +
      (vm.error !== undefined ? renderMessage("error: " + JSON.stringify(vm.error)) : "");

    promptHost.innerHTML = vm.prompt ? renderPrompt(vm.prompt) : "";
    for (const button of promptHost.querySelectorAll<HTMLButtonElement>(".choice")) {
      button.addEventListener("click", () => void vm.answerInteraction(button.dataset.choice));
    }
    const send = promptHost.querySelector<HTMLButtonElement>(".send");
    const answer = promptHost.querySelector<HTMLInputElement>(".answer");
    if (send && answer) {
      send.addEventListener("click", () => void vm.answerInteraction(answer.value));
    }
  }

  vm.onChange(render);
  client.onConnectionLost(() => {
    const retry = () =>
      vm.reattach().catch(() => setTimeout(retry, 1000));
    setTimeout(retry, 500);
  });

  $("btn-start").addEventListener("click", () => {
    const raw = ($("input-value") as HTMLInputElement).value || "null";
    let value: unknown = raw;
    try {
      value = JSON.parse(raw);
    } catch {
      /* treat as plain string */
    }
    void vm.startSession(value).then(() => render());
  });
  $("btn-continue").addEventListener("click", () => void vm.continueRun());
  $("btn-over").addEventListener("click", () => void vm.stepOver());
  $("btn-into").addEventListener("click", () => void vm.stepInto());
  $("btn-out").addEventListener("click", () => void vm.stepOut());
  $("btn-trace").addEventListener("click", () => {
    void vm.downloadTrace().then((text) => {
      const blob = new Blob([text], { type: "application/json" });
      const a = document.createElement("a");
      a.href = URL.createObjectURL(blob);
      a.download = `${vm.session ?? "session"}.trace.json`;
      a.click();
      URL.revokeObjectURL(a.href);
    });
  });

  await vm.connectAndAttach();
  render();
}

if (typeof document !== "undefined" && document.getElementById("canvas")) {
  void boot();
}
