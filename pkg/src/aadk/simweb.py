"""Bundled sample plugin: 20 web-control components over a fake website.

The site is a deterministic in-memory fixture (site.json next to the
manifest): linked pages with text, tables, and forms. Navigation state
(tabs, per-tab history, filled fields) lives in the per-session plugin
scratch, so concurrent sessions never see each other's browsing.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Dict

from .errors import HandlerError
from .plugins import register_handler_pack


def _load_site(plugin_dir: Path) -> dict:
    site_path = Path(plugin_dir) / "site.json"
    site = json.loads(site_path.read_text(encoding="utf-8"))
    if "pages" not in site:
        raise HandlerError("site fixture has no pages")
    return site


def _state(ctx: dict) -> dict:
    scratch = ctx["scratch"]
    scratch.setdefault("tabs", [])
    scratch.setdefault("active", -1)
    scratch.setdefault("fields", {})
    scratch.setdefault("headers", {})
    scratch.setdefault("ticks", 0)
    scratch.setdefault("scroll", "top")
    scratch.setdefault("last_submission", None)
    return scratch


def _arg(config: dict, input_value, key: str, required: bool = True):
    if key in config:
        return config[key]
    if isinstance(input_value, dict) and key in input_value:
        return input_value[key]
    if isinstance(input_value, str) and key in ("url", "id", "selector"):
        return input_value
    if required:
        raise HandlerError(f"missing argument {key!r}")
    return None


class _Site:
    def __init__(self, data: dict):
        self.pages = data["pages"]
        self.start_url = data.get("start_url", next(iter(data["pages"])))

    def page(self, url: str) -> dict:
        page = self.pages.get(url)
        if page is None:
            raise HandlerError(f"404: no page at {url!r}")
        return page

    def tab(self, state: dict) -> dict:
        if not state["tabs"] or not (0 <= state["active"] < len(state["tabs"])):
            raise HandlerError("no page is open")
        return state["tabs"][state["active"]]

    def active_page(self, state: dict) -> dict:
        return self.page(self.tab(state)["url"])

    def elements(self, page: dict):
        for link in page.get("links", []):
            yield {"type": "link", **link}
        for table in page.get("tables", []):
            yield {"type": "table", "id": table["id"]}
        for form in page.get("forms", []):
            yield {"type": "form", "id": form["id"], "action": form.get("action", "")}
            for field_def in form.get("fields", []):
                yield {"type": "field", "form": form["id"], **field_def}

    def find(self, page: dict, element_id: str) -> dict:
        for element in self.elements(page):
            if element.get("id") == element_id:
                return element
        raise HandlerError(f"no element {element_id!r} on this page")

    def field_value(self, state: dict, url: str, field: dict) -> object:
        return state["fields"].get(url, {}).get(field["id"], field.get("value", ""))


def build_pack(plugin_dir: Path) -> Dict[str, Callable]:
    site = _Site(_load_site(plugin_dir))

    def page_summary(url: str) -> dict:
        return {"url": url, "title": site.page(url).get("title", "")}

    def navigate(state: dict, url: str) -> dict:
        site.page(url)  # 404 before touching state
        tab = site.tab(state)
        tab["back"].append(tab["url"])
        tab["forward"] = []
        tab["url"] = url
        return page_summary(url)

    def open_page(config, input_value, ctx):
        state = _state(ctx)
        url = _arg(config, input_value, "url", required=False) or site.start_url
        site.page(url)
        state["tabs"].append({"url": url, "back": [], "forward": []})
        state["active"] = len(state["tabs"]) - 1
        return page_summary(url)

    def close_page(config, input_value, ctx):
        state = _state(ctx)
        site.tab(state)
        index = config.get("index", state["active"])
        if not (0 <= index < len(state["tabs"])):
            raise HandlerError(f"no page #{index}")
        closed = state["tabs"].pop(index)
        state["active"] = min(state["active"], len(state["tabs"]) - 1)
        return {"closed": closed["url"], "open": len(state["tabs"])}

    def switch_page(config, input_value, ctx):
        state = _state(ctx)
        if "index" in config:
            index = config["index"]
            if not isinstance(index, int) or not (0 <= index < len(state["tabs"])):
                raise HandlerError(f"no page #{index}")
        else:
            url = _arg(config, input_value, "url")
            matches = [i for i, t in enumerate(state["tabs"]) if t["url"] == url]
            if not matches:
                raise HandlerError(f"no open page at {url!r}")
            index = matches[0]
        state["active"] = index
        return page_summary(state["tabs"][index]["url"])

    def list_pages(config, input_value, ctx):
        state = _state(ctx)
        return [
            {"index": i, "url": tab["url"], "title": site.page(tab["url"]).get("title", ""),
             "active": i == state["active"]}
            for i, tab in enumerate(state["tabs"])
        ]

    def get_url(config, input_value, ctx):
        return site.tab(_state(ctx))["url"]

    def read_text(config, input_value, ctx):
        return site.active_page(_state(ctx)).get("text", "")

    def read_links(config, input_value, ctx):
        return [dict(link) for link in site.active_page(_state(ctx)).get("links", [])]

    def find_element(config, input_value, ctx):
        state = _state(ctx)
        return site.find(site.active_page(state), _arg(config, input_value, "id"))

    def extract_table(config, input_value, ctx):
        state = _state(ctx)
        page = site.active_page(state)
        tables = page.get("tables", [])
        table_id = _arg(config, input_value, "id", required=False)
        if table_id is None:
            if not tables:
                raise HandlerError("no tables on this page")
            table = tables[0]
        else:
            matching = [t for t in tables if t["id"] == table_id]
            if not matching:
                raise HandlerError(f"no table {table_id!r} on this page")
            table = matching[0]
        return {"id": table["id"], "headers": list(table["headers"]), "rows": [list(r) for r in table["rows"]]}

    def click(config, input_value, ctx):
        state = _state(ctx)
        element = site.find(site.active_page(state), _arg(config, input_value, "id"))
        if element["type"] == "link":
            return navigate(state, element["href"])
        if element["type"] == "form":
            return submit_form({"id": element["id"]}, input_value, ctx)
        raise HandlerError(f"element {element['id']!r} is not clickable")

    def fill_input(config, input_value, ctx):
        state = _state(ctx)
        tab = site.tab(state)
        element = site.find(site.active_page(state), _arg(config, input_value, "id"))
        if element["type"] != "field":
            raise HandlerError(f"element {element['id']!r} is not an input field")
        value = _arg(config, input_value, "value")
        state["fields"].setdefault(tab["url"], {})[element["id"]] = value
        return {"id": element["id"], "value": value}

    def select_option(config, input_value, ctx):
        state = _state(ctx)
        tab = site.tab(state)
        element = site.find(site.active_page(state), _arg(config, input_value, "id"))
        options = element.get("options")
        if element["type"] != "field" or options is None:
            raise HandlerError(f"element {element['id']!r} is not a select field")
        option = _arg(config, input_value, "option")
        if option not in options:
            raise HandlerError(f"option {option!r} not in {options}")
        state["fields"].setdefault(tab["url"], {})[element["id"]] = option
        return {"id": element["id"], "value": option}

    def submit_form(config, input_value, ctx):
        state = _state(ctx)
        tab = site.tab(state)
        page = site.active_page(state)
        form_id = _arg(config, input_value, "id")
        forms = [f for f in page.get("forms", []) if f["id"] == form_id]
        if not forms:
            raise HandlerError(f"no form {form_id!r} on this page")
        form = forms[0]
        values = {
            field["name"]: site.field_value(state, tab["url"], field)
            for field in form.get("fields", [])
        }
        state["last_submission"] = {"form": form_id, "values": values}
        summary = navigate(state, form.get("action", tab["url"]))
        return {**summary, "submitted": values}

    def scroll(config, input_value, ctx):
        state = _state(ctx)
        site.tab(state)
        position = _arg(config, input_value, "to", required=False)
        if position is None:
            position = "bottom"
        state["scroll"] = position
        return {"scroll": position}

    def history_back(config, input_value, ctx):
        state = _state(ctx)
        tab = site.tab(state)
        if not tab["back"]:
            raise HandlerError("history is empty")
        tab["forward"].append(tab["url"])
        tab["url"] = tab["back"].pop()
        return page_summary(tab["url"])

    def history_forward(config, input_value, ctx):
        state = _state(ctx)
        tab = site.tab(state)
        if not tab["forward"]:
            raise HandlerError("no forward history")
        tab["back"].append(tab["url"])
        tab["url"] = tab["forward"].pop()
        return page_summary(tab["url"])

    def wait_ticks(config, input_value, ctx):
        state = _state(ctx)
        n = config.get("n", 1)
        if not isinstance(n, int) or n < 0:
            raise HandlerError("'n' must be a non-negative integer")
        state["ticks"] += n
        return {"ticks": state["ticks"]}

    def set_header(config, input_value, ctx):
        state = _state(ctx)
        name = _arg(config, input_value, "name")
        state["headers"][name] = _arg(config, input_value, "value")
        return dict(state["headers"])

    def download_text(config, input_value, ctx):
        state = _state(ctx)
        url = _arg(config, input_value, "url", required=False)
        if url is None:
            url = site.tab(state)["url"]
        return site.page(url).get("text", "")

    def eval_selector(config, input_value, ctx):
        state = _state(ctx)
        page = site.active_page(state)
        selector = _arg(config, input_value, "selector")
        if selector.startswith("#"):
            return site.find(page, selector[1:])
        if selector in ("title", "text"):
            return page.get(selector, "")
        if selector in ("links", "tables", "forms"):
            return page.get(selector, [])
        raise HandlerError(f"unsupported selector {selector!r}")

    return {
        "open_page": open_page,
        "close_page": close_page,
        "switch_page": switch_page,
        "list_pages": list_pages,
        "get_url": get_url,
        "read_text": read_text,
        "read_links": read_links,
        "find_element": find_element,
        "extract_table": extract_table,
        "click": click,
        "fill_input": fill_input,
        "submit_form": submit_form,
        "select_option": select_option,
        "scroll": scroll,
        "history_back": history_back,
        "history_forward": history_forward,
        "wait_ticks": wait_ticks,
        "set_header": set_header,
        "download_text": download_text,
        "eval_selector": eval_selector,
    }


register_handler_pack("simweb", build_pack)


def builtin_plugin_dir() -> Path:
    """Directory of the bundled simweb plugin (manifest + site fixture)."""
    return Path(__file__).parent / "data" / "simweb"
