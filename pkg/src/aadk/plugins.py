"""Plugin registry: manifest loading, component catalog, and dispatch.

A plugin is a directory holding `plugin.json` (namespace, semver version,
component list, entry). The entry names either a built-in handler pack
(registered in-process via register_handler_pack) or an external command
that speaks the JSON stdin/stdout contract.
"""

from __future__ import annotations

import json
import re
import subprocess
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

from .errors import (
    DowngradeRefusedError,
    HandlerError,
    ManifestError,
    NamespaceConflictError,
    UnknownComponentError,
)

_NS_RE = re.compile(r"^[a-z][a-z0-9_]*$")
_SEMVER_RE = re.compile(r"^(\d+)\.(\d+)\.(\d+)$")

# name -> factory(plugin_dir) -> {component name: handler(config, input, ctx)}
_HANDLER_PACKS: Dict[str, Callable[[Path], Dict[str, Callable]]] = {}


def register_handler_pack(name: str, factory: Callable[[Path], Dict[str, Callable]]) -> None:
    _HANDLER_PACKS[name] = factory


def parse_semver(text: str) -> Tuple[int, int, int]:
    match = _SEMVER_RE.match(text or "")
    if not match:
        raise ManifestError(f"version {text!r} is not MAJOR.MINOR.PATCH")
    return tuple(int(g) for g in match.groups())  # type: ignore[return-value]


@dataclass(frozen=True)
class ComponentInfo:
    namespace: str
    name: str
    version: str
    description: str
    config_keys: Tuple[str, ...] = ()
    in_schema: str = "any"
    out_schema: str = "any"


class PluginRegistry:
    """Loaded component kinds; reads are concurrent, loads exclusive."""

    def __init__(self):
        self._handlers: Dict[Tuple[str, str], Callable] = {}
        self._catalog: Dict[Tuple[str, str], ComponentInfo] = {}
        self._versions: Dict[str, str] = {}
        self._manifest_dirs: Dict[str, Path] = {}
        self._lock = threading.Lock()

    def load_plugin(self, manifest_path) -> List[Tuple[str, str]]:
        """Register every component of a manifest atomically (all or none)."""
        manifest_path = Path(manifest_path)
        if manifest_path.is_dir():
            manifest_path = manifest_path / "plugin.json"
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ManifestError(f"no manifest at {manifest_path}")
        except ValueError as exc:
            raise ManifestError(f"manifest is not valid JSON: {exc}")

        namespace = manifest.get("namespace", "")
        if not _NS_RE.match(namespace):
            raise ManifestError(f"bad namespace {namespace!r}")
        version = manifest.get("version", "")
        semver = parse_semver(version)
        components = manifest.get("components")
        if not isinstance(components, list) or not components:
            raise ManifestError("manifest needs a non-empty 'components' array")
        entry = manifest.get("entry", {})

        names: List[str] = []
        infos: Dict[Tuple[str, str], ComponentInfo] = {}
        for comp in components:
            name = comp.get("name") if isinstance(comp, dict) else None
            if not isinstance(name, str) or not name:
                raise ManifestError("every component needs a 'name'")
            if name in names:
                raise ManifestError(f"duplicate component name {name!r}")
            names.append(name)
            infos[(namespace, name)] = ComponentInfo(
                namespace=namespace,
                name=name,
                version=version,
                description=comp.get("description", ""),
                config_keys=tuple(comp.get("config_keys", ())),
                in_schema=comp.get("in_schema", "any"),
                out_schema=comp.get("out_schema", "any"),
            )

        handlers = self._resolve_handlers(entry, names, manifest_path.parent)

        with self._lock:
            existing = self._versions.get(namespace)
            if existing is not None:
                old = parse_semver(existing)
                if semver < old:
                    raise DowngradeRefusedError(
                        f"namespace {namespace!r} already at {existing}, refusing {version}"
                    )
                if semver == old:
                    current = sorted(n for (ns, n) in self._catalog if ns == namespace)
                    if current != sorted(names):
                        raise NamespaceConflictError(
                            f"namespace {namespace!r} v{version} is already loaded with different components"
                        )
                    return [(namespace, n) for n in names]
                # higher version replaces the namespace wholesale
                self._handlers = {k: v for k, v in self._handlers.items() if k[0] != namespace}
                self._catalog = {k: v for k, v in self._catalog.items() if k[0] != namespace}
            for name in names:
                self._handlers[(namespace, name)] = handlers[name]
            self._catalog.update(infos)
            self._versions[namespace] = version
            self._manifest_dirs[namespace] = manifest_path.parent
        return [(namespace, n) for n in names]

    def _resolve_handlers(self, entry: dict, names: List[str], plugin_dir: Path) -> Dict[str, Callable]:
        if not isinstance(entry, dict):
            raise ManifestError("'entry' must be an object")
        if "handler" in entry:
            factory = _HANDLER_PACKS.get(entry["handler"])
            if factory is None:
                raise ManifestError(f"unknown built-in handler pack {entry['handler']!r}")
            pack = factory(plugin_dir)
            missing = [n for n in names if n not in pack]
            if missing:
                raise ManifestError(f"handler pack lacks components: {', '.join(missing)}")
            return {n: pack[n] for n in names}
        if "command" in entry:
            command = entry["command"]
            if isinstance(command, str):
                command = [command]
            if not isinstance(command, list) or not command:
                raise ManifestError("'entry.command' must be a command list")
            timeout_ms = entry.get("timeout_ms", 10000)
            return {n: _external_handler(command, n, timeout_ms) for n in names}
        raise ManifestError("'entry' needs 'handler' or 'command'")

    def invoke_component(self, namespace: str, name: str, config: dict, input_value, ctx: dict):
        with self._lock:
            handler = self._handlers.get((namespace, name))
        if handler is None:
            raise UnknownComponentError(f"no component {namespace}/{name}")
        try:
            return handler(config, input_value, ctx)
        except HandlerError:
            raise
        except Exception as exc:
            raise HandlerError(f"{namespace}/{name}: {exc}")

    def list_components(self) -> List[ComponentInfo]:
        with self._lock:
            return [self._catalog[k] for k in sorted(self._catalog)]

    def kinds(self) -> set:
        with self._lock:
            return {f"{ns}/{name}" for ns, name in self._catalog}

    def namespaces(self) -> Dict[str, str]:
        with self._lock:
            return dict(self._versions)

    def manifest_dir(self, namespace: str) -> Optional[Path]:
        with self._lock:
            return self._manifest_dirs.get(namespace)


def _external_handler(command: List[str], name: str, timeout_ms: int) -> Callable:
    def handler(config: dict, input_value, ctx: dict):
        payload = json.dumps({
            "component": name,
            "config": config,
            "input": input_value,
            "scratch": ctx.get("scratch", {}),
        }, ensure_ascii=False)
        try:
            proc = subprocess.run(
                command, input=payload.encode("utf-8"),
                capture_output=True, timeout=timeout_ms / 1000.0,
            )
        except subprocess.TimeoutExpired:
            raise HandlerError(f"{name}: external handler timed out")
        except OSError as exc:
            raise HandlerError(f"{name}: cannot run handler: {exc}")
        if proc.returncode != 0:
            raise HandlerError(f"{name}: handler exited {proc.returncode}")
        try:
            result = json.loads(proc.stdout.decode("utf-8"))
        except (UnicodeDecodeError, ValueError):
            raise HandlerError(f"{name}: handler produced invalid JSON")
        if isinstance(result, dict) and "scratch" in result:
            scratch = ctx.get("scratch")
            if isinstance(scratch, dict) and isinstance(result["scratch"], dict):
                scratch.clear()
                scratch.update(result["scratch"])
        if isinstance(result, dict) and "value" in result:
            return result["value"]
        return result

    return handler
