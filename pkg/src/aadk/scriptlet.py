"""Sandboxed expression language for Code nodes, Branch conditions,
Summary merge rules, and prompt templates.

No loops, no assignment, no host access: every evaluation terminates.
The normative grammar lives in docs/scriptlet.ebnf; `parse` and `evaluate`
implement exactly that grammar.

Operator precedence, lowest to highest:
``?:``  ``||``  ``&&``  ``== !=``  ``< <= > >=``  ``+ -``  ``* / %``
unary ``- !``, then member/index postfix.
"""

from __future__ import annotations

import json
import math
from functools import lru_cache
from typing import Any, Dict, List, Optional, Tuple

from .errors import EvalError, ScriptletParseError
from .values import Value, check_value, canonical_json, display_str, values_equal

# --- lexer ---------------------------------------------------------------------

_PUNCT2 = ("==", "!=", "<=", ">=", "&&", "||")
_PUNCT1 = "+-*/%<>!?:.,()[]{}"
_KEYWORDS = {"null", "true", "false"}
_ESCAPES = {"n": "\n", "t": "\t", '"': '"', "\\": "\\"}


class _Token:
    __slots__ = ("type", "value", "line", "col")

    def __init__(self, type_: str, value: Any, line: int, col: int):
        self.type = type_
        self.value = value
        self.line = line
        self.col = col

    def __repr__(self) -> str:  # pragma: no cover - debug aid
        return f"Token({self.type}, {self.value!r})"


def _tokenize(source: str) -> List[_Token]:
    tokens: List[_Token] = []
    pos, line, col = 0, 1, 1
    n = len(source)

    def error(msg: str, expected: str = "") -> ScriptletParseError:
        return ScriptletParseError(msg, line, col, expected)

    while pos < n:
        ch = source[pos]
        if ch in " \t\r\n":
            if ch == "\n":
                line += 1
                col = 1
            else:
                col += 1
            pos += 1
            continue

        start_line, start_col = line, col
        two = source[pos:pos + 2]
        if two in _PUNCT2:
            tokens.append(_Token(two, two, start_line, start_col))
            pos += 2
            col += 2
            continue

        if ch.isdigit():
            end = pos
            while end < n and source[end].isdigit():
                end += 1
            if end < n and source[end] == ".":
                end += 1
                if end >= n or not source[end].isdigit():
                    raise error("digit expected after decimal point", "digit")
                while end < n and source[end].isdigit():
                    end += 1
                is_float = True
            else:
                is_float = False
            if end < n and source[end] in "eE":
                end += 1
                if end < n and source[end] in "+-":
                    end += 1
                if end >= n or not source[end].isdigit():
                    raise error("digit expected in exponent", "digit")
                while end < n and source[end].isdigit():
                    end += 1
                is_float = True
            text = source[pos:end]
            value = float(text) if is_float else int(text)
            if isinstance(value, float) and not math.isfinite(value):
                raise error(f"number literal {text!r} overflows", "finite number")
            tokens.append(_Token("number", value, start_line, start_col))
            col += end - pos
            pos = end
            continue

        if ch == '"':
            pos += 1
            col += 1
            chunks: List[str] = []
            while True:
                if pos >= n:
                    raise error("unterminated string", '"')
                c = source[pos]
                if c == '"':
                    pos += 1
                    col += 1
                    break
                if c == "\n":
                    raise error("newline in string literal", '"')
                if c == "\\":
                    if pos + 1 >= n or source[pos + 1] not in _ESCAPES:
                        raise error("bad escape in string", "one of \\n \\t \\\" \\\\")
                    chunks.append(_ESCAPES[source[pos + 1]])
                    pos += 2
                    col += 2
                    continue
                chunks.append(c)
                pos += 1
                col += 1
            tokens.append(_Token("string", "".join(chunks), start_line, start_col))
            continue

        if ch.isalpha() or ch == "_":
            end = pos
            while end < n and (source[end].isalnum() or source[end] == "_"):
                end += 1
            word = source[pos:end]
            if word in _KEYWORDS:
                value = None if word == "null" else (word == "true")
                tokens.append(_Token(word, value, start_line, start_col))
            else:
                tokens.append(_Token("ident", word, start_line, start_col))
            col += end - pos
            pos = end
            continue

        if ch in _PUNCT1:
            tokens.append(_Token(ch, ch, start_line, start_col))
            pos += 1
            col += 1
            continue

        raise error(f"unexpected character {ch!r}", "token")

    tokens.append(_Token("eof", None, line, col))
    return tokens


# --- parser ---------------------------------------------------------------------
# AST nodes are plain tuples: ("num", v) ("str", s) ("bool", b) ("null",)
# ("ident", name) ("array", [..]) ("object", [(k, ast)..]) ("unary", op, x)
# ("binary", op, l, r) ("and", l, r) ("or", l, r) ("cond", c, t, f)
# ("member", obj, key) ("index", obj, idx) ("call", name, [args])

AST = tuple


class _Parser:
    def __init__(self, tokens: List[_Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def next(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, type_: str) -> _Token:
        tok = self.peek()
        if tok.type != type_:
            raise ScriptletParseError(
                f"expected {type_!r}, found {tok.type!r}", tok.line, tok.col, type_
            )
        return self.next()

    def parse(self) -> AST:
        ast = self.ternary()
        tok = self.peek()
        if tok.type != "eof":
            raise ScriptletParseError(
                f"unexpected {tok.type!r} after expression", tok.line, tok.col, "end of input"
            )
        return ast

    def ternary(self) -> AST:
        cond = self.or_expr()
        if self.peek().type == "?":
            self.next()
            then = self.ternary()
            self.expect(":")
            other = self.ternary()
            return ("cond", cond, then, other)
        return cond

    def or_expr(self) -> AST:
        left = self.and_expr()
        while self.peek().type == "||":
            self.next()
            left = ("or", left, self.and_expr())
        return left

    def and_expr(self) -> AST:
        left = self.equality()
        while self.peek().type == "&&":
            self.next()
            left = ("and", left, self.equality())
        return left

    def equality(self) -> AST:
        left = self.comparison()
        while self.peek().type in ("==", "!="):
            op = self.next().type
            left = ("binary", op, left, self.comparison())
        return left

    def comparison(self) -> AST:
        left = self.additive()
        while self.peek().type in ("<", "<=", ">", ">="):
            op = self.next().type
            left = ("binary", op, left, self.additive())
        return left

    def additive(self) -> AST:
        left = self.multiplicative()
        while self.peek().type in ("+", "-"):
            op = self.next().type
            left = ("binary", op, left, self.multiplicative())
        return left

    def multiplicative(self) -> AST:
        left = self.unary()
        while self.peek().type in ("*", "/", "%"):
            op = self.next().type
            left = ("binary", op, left, self.unary())
        return left

    def unary(self) -> AST:
        tok = self.peek()
        if tok.type in ("-", "!"):
            self.next()
            return ("unary", tok.type, self.unary())
        return self.postfix()

    def postfix(self) -> AST:
        node = self.primary()
        while True:
            tok = self.peek()
            if tok.type == ".":
                self.next()
                name = self.expect("ident")
                node = ("member", node, name.value)
            elif tok.type == "[":
                self.next()
                index = self.ternary()
                self.expect("]")
                node = ("index", node, index)
            else:
                return node

    def primary(self) -> AST:
        tok = self.next()
        if tok.type == "number":
            return ("num", tok.value)
        if tok.type == "string":
            return ("str", tok.value)
        if tok.type in ("true", "false"):
            return ("bool", tok.value)
        if tok.type == "null":
            return ("null",)
        if tok.type == "ident":
            if self.peek().type == "(":
                self.next()
                args: List[AST] = []
                if self.peek().type != ")":
                    args.append(self.ternary())
                    while self.peek().type == ",":
                        self.next()
                        args.append(self.ternary())
                self.expect(")")
                if tok.value not in BUILTINS:
                    raise ScriptletParseError(
                        f"unknown function {tok.value!r}", tok.line, tok.col, "builtin name"
                    )
                return ("call", tok.value, args)
            return ("ident", tok.value)
        if tok.type == "(":
            inner = self.ternary()
            self.expect(")")
            return inner
        if tok.type == "[":
            items: List[AST] = []
            if self.peek().type != "]":
                items.append(self.ternary())
                while self.peek().type == ",":
                    self.next()
                    items.append(self.ternary())
            self.expect("]")
            return ("array", items)
        if tok.type == "{":
            pairs: List[Tuple[str, AST]] = []
            if self.peek().type != "}":
                pairs.append(self._pair())
                while self.peek().type == ",":
                    self.next()
                    pairs.append(self._pair())
            self.expect("}")
            return ("object", pairs)
        raise ScriptletParseError(
            f"unexpected {tok.type!r}", tok.line, tok.col, "expression"
        )

    def _pair(self) -> Tuple[str, AST]:
        key = self.expect("string")
        self.expect(":")
        return (key.value, self.ternary())


@lru_cache(maxsize=4096)
def parse(source: str) -> AST:
    """Parse a scriptlet to its AST, or raise ScriptletParseError."""
    return _Parser(_tokenize(source)).parse()


# --- evaluator --------------------------------------------------------------------

def _is_number(v: Value) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _need_number(v: Value, path: str) -> float:
    if not _is_number(v):
        raise EvalError(EvalError.TYPE_MISMATCH, f"expected a number, got {_type_name(v)}", path)
    return v


def _need_bool(v: Value, path: str) -> bool:
    if not isinstance(v, bool):
        raise EvalError(EvalError.TYPE_MISMATCH, f"expected a boolean, got {_type_name(v)}", path)
    return v


def _type_name(v: Value) -> str:
    if v is None:
        return "null"
    return {bool: "bool", int: "number", float: "number", str: "string", list: "array", dict: "object"}.get(
        type(v), type(v).__name__
    )


def _finite(result: float, path: str) -> Value:
    if isinstance(result, float) and not math.isfinite(result):
        raise EvalError(EvalError.NON_FINITE, "arithmetic overflow", path)
    return result


def evaluate(ast: AST, env: Dict[str, Value], path: str = "$") -> Value:
    """Evaluate a parsed scriptlet against a read-only environment."""
    op = ast[0]
    if op == "num" or op == "str" or op == "bool":
        return ast[1]
    if op == "null":
        return None
    if op == "ident":
        name = ast[1]
        if name not in env:
            raise EvalError(EvalError.UNKNOWN_IDENT, f"unknown identifier {name!r}", path)
        return env[name]
    if op == "array":
        return [evaluate(item, env, f"{path}[{i}]") for i, item in enumerate(ast[1])]
    if op == "object":
        return {k: evaluate(v, env, f"{path}.{k}") for k, v in ast[1]}
    if op == "unary":
        _, sign, operand = ast
        val = evaluate(operand, env, path)
        if sign == "-":
            return _finite(-_need_number(val, path), path)
        return not _need_bool(val, path)
    if op == "and":
        left = _need_bool(evaluate(ast[1], env, path), path)
        if not left:
            return False
        return _need_bool(evaluate(ast[2], env, path), path)
    if op == "or":
        left = _need_bool(evaluate(ast[1], env, path), path)
        if left:
            return True
        return _need_bool(evaluate(ast[2], env, path), path)
    if op == "cond":
        cond = _need_bool(evaluate(ast[1], env, path), path)
        return evaluate(ast[2] if cond else ast[3], env, path)
    if op == "binary":
        return _binary(ast[1], ast[2], ast[3], env, path)
    if op == "member":
        obj = evaluate(ast[1], env, path)
        return _lookup(obj, ast[2], f"{path}.{ast[2]}")
    if op == "index":
        obj = evaluate(ast[1], env, path)
        idx = evaluate(ast[2], env, path)
        return _index(obj, idx, path)
    if op == "call":
        name, args = ast[1], ast[2]
        values = [evaluate(a, env, f"{path}:{name}({i})") for i, a in enumerate(args)]
        return BUILTINS[name](values, f"{path}:{name}")
    raise EvalError(EvalError.TYPE_MISMATCH, f"unknown AST node {op!r}", path)


def _binary(op: str, left_ast: AST, right_ast: AST, env: Dict[str, Value], path: str) -> Value:
    left = evaluate(left_ast, env, path)
    right = evaluate(right_ast, env, path)
    if op == "==":
        return values_equal(left, right)
    if op == "!=":
        return not values_equal(left, right)
    if op == "+":
        if isinstance(left, str) or isinstance(right, str):
            return display_str(left) + display_str(right)
        return _finite(_need_number(left, path) + _need_number(right, path), path)
    if op in ("-", "*", "/", "%"):
        a = _need_number(left, path)
        b = _need_number(right, path)
        if op == "-":
            return _finite(a - b, path)
        if op == "*":
            return _finite(a * b, path)
        if b == 0:
            raise EvalError(EvalError.DIV_BY_ZERO, f"{op} by zero", path)
        return _finite(a / b if op == "/" else a % b, path)
    # comparisons: numbers with numbers, strings with strings
    if _is_number(left) and _is_number(right):
        pass
    elif isinstance(left, str) and isinstance(right, str):
        pass
    else:
        raise EvalError(
            EvalError.TYPE_MISMATCH,
            f"cannot compare {_type_name(left)} with {_type_name(right)}",
            path,
        )
    if op == "<":
        return left < right
    if op == "<=":
        return left <= right
    if op == ">":
        return left > right
    return left >= right


def _lookup(obj: Value, key: str, path: str) -> Value:
    if isinstance(obj, dict):
        if key not in obj:
            raise EvalError(EvalError.INDEX_OUT_OF_RANGE, f"object has no key {key!r}", path)
        return obj[key]
    raise EvalError(EvalError.TYPE_MISMATCH, f"cannot access member of {_type_name(obj)}", path)


def _index(obj: Value, idx: Value, path: str) -> Value:
    if isinstance(obj, dict):
        if not isinstance(idx, str):
            raise EvalError(EvalError.TYPE_MISMATCH, "object index must be a string", path)
        return _lookup(obj, idx, f"{path}[{idx!r}]")
    if isinstance(obj, (list, str)):
        if not _is_number(idx) or float(idx) != int(idx):
            raise EvalError(EvalError.TYPE_MISMATCH, "index must be an integer", path)
        i = int(idx)
        if i < 0 or i >= len(obj):
            raise EvalError(EvalError.INDEX_OUT_OF_RANGE, f"index {i} out of range(0..{len(obj) - 1})", path)
        return obj[i]
    raise EvalError(EvalError.TYPE_MISMATCH, f"cannot index {_type_name(obj)}", path)


# --- built-in functions -------------------------------------------------------------

def _expect_argc(args: List[Value], count: int, path: str) -> None:
    if len(args) != count:
        raise EvalError(EvalError.TYPE_MISMATCH, f"expected {count} arguments, got {len(args)}", path)


def _bi_len(args: List[Value], path: str) -> Value:
    _expect_argc(args, 1, path)
    v = args[0]
    if isinstance(v, (str, list, dict)):
        return len(v)
    raise EvalError(EvalError.TYPE_MISMATCH, f"len() of {_type_name(v)}", path)


def _bi_str(args: List[Value], path: str) -> Value:
    _expect_argc(args, 1, path)
    return display_str(args[0])


def _bi_num(args: List[Value], path: str) -> Value:
    _expect_argc(args, 1, path)
    v = args[0]
    if isinstance(v, bool):
        return 1 if v else 0
    if _is_number(v):
        return v
    if isinstance(v, str):
        try:
            parsed = json.loads(v)
        except ValueError:
            raise EvalError(EvalError.TYPE_MISMATCH, f"num() cannot parse {v!r}", path)
        if _is_number(parsed):
            return parsed
        raise EvalError(EvalError.TYPE_MISMATCH, f"num() cannot parse {v!r}", path)
    raise EvalError(EvalError.TYPE_MISMATCH, f"num() of {_type_name(v)}", path)


def _bi_keys(args: List[Value], path: str) -> Value:
    _expect_argc(args, 1, path)
    if not isinstance(args[0], dict):
        raise EvalError(EvalError.TYPE_MISMATCH, f"keys() of {_type_name(args[0])}", path)
    return sorted(args[0].keys())


def _bi_append(args: List[Value], path: str) -> Value:
    _expect_argc(args, 2, path)
    if not isinstance(args[0], list):
        raise EvalError(EvalError.TYPE_MISMATCH, f"append() to {_type_name(args[0])}", path)
    return list(args[0]) + [args[1]]


def _bi_slice(args: List[Value], path: str) -> Value:
    _expect_argc(args, 3, path)
    v, i, j = args
    if not isinstance(v, (str, list)):
        raise EvalError(EvalError.TYPE_MISMATCH, f"slice() of {_type_name(v)}", path)
    for bound in (i, j):
        if not _is_number(bound) or float(bound) != int(bound):
            raise EvalError(EvalError.TYPE_MISMATCH, "slice bounds must be integers", path)
    lo = max(0, min(len(v), int(i)))
    hi = max(lo, min(len(v), int(j)))
    return v[lo:hi]


def _bi_contains(args: List[Value], path: str) -> Value:
    _expect_argc(args, 2, path)
    v, needle = args
    if isinstance(v, str):
        if not isinstance(needle, str):
            raise EvalError(EvalError.TYPE_MISMATCH, "contains() on a string needs a string", path)
        return needle in v
    if isinstance(v, list):
        return any(values_equal(item, needle) for item in v)
    if isinstance(v, dict):
        if not isinstance(needle, str):
            raise EvalError(EvalError.TYPE_MISMATCH, "contains() on an object needs a string key", path)
        return needle in v
    raise EvalError(EvalError.TYPE_MISMATCH, f"contains() on {_type_name(v)}", path)


def _bi_json(args: List[Value], path: str) -> Value:
    _expect_argc(args, 1, path)
    return canonical_json(args[0])


def _bi_parse_json(args: List[Value], path: str) -> Value:
    _expect_argc(args, 1, path)
    if not isinstance(args[0], str):
        raise EvalError(EvalError.TYPE_MISMATCH, "parse_json() needs a string", path)

    def reject_constant(name: str):
        raise EvalError(EvalError.NON_FINITE, f"non-finite constant {name!r} in JSON", path)

    try:
        value = json.loads(args[0], parse_constant=reject_constant)
    except EvalError:
        raise
    except ValueError:
        raise EvalError(EvalError.TYPE_MISMATCH, "invalid JSON", path)
    return check_value(value, path)


BUILTINS = {
    "len": _bi_len,
    "str": _bi_str,
    "num": _bi_num,
    "keys": _bi_keys,
    "append": _bi_append,
    "slice": _bi_slice,
    "contains": _bi_contains,
    "json": _bi_json,
    "parse_json": _bi_parse_json,
}


def run(source: str, env: Optional[Dict[str, Value]] = None) -> Value:
    """Parse and evaluate in one call (parse results are cached)."""
    return evaluate(parse(source), env or {})


# --- templates ----------------------------------------------------------------------

def parse_template(text: str) -> List[Tuple[str, str]]:
    """Split a template into ("text", chunk) and ("expr", source) segments.

    ``{{`` and ``}}`` escape literal braces; every ``{...}`` interpolation
    must parse as a scriptlet expression.
    """
    segments: List[Tuple[str, str]] = []
    literal: List[str] = []
    pos, n = 0, len(text)
    while pos < n:
        ch = text[pos]
        if ch == "{":
            if text[pos:pos + 2] == "{{":
                literal.append("{")
                pos += 2
                continue
            end = _find_interpolation_end(text, pos + 1)
            source = text[pos + 1:end]
            parse(source)  # surface template errors at parse time
            if literal:
                segments.append(("text", "".join(literal)))
                literal = []
            segments.append(("expr", source))
            pos = end + 1
            continue
        if ch == "}" and text[pos:pos + 2] == "}}":
            literal.append("}")
            pos += 2
            continue
        literal.append(ch)
        pos += 1
    if literal:
        segments.append(("text", "".join(literal)))
    return segments


def _find_interpolation_end(text: str, start: int) -> int:
    depth = 0
    pos = start
    n = len(text)
    while pos < n:
        ch = text[pos]
        if ch == '"':
            pos += 1
            while pos < n and text[pos] != '"':
                pos += 2 if text[pos] == "\\" else 1
            if pos >= n:
                break
        elif ch in "{[(":
            depth += 1
        elif ch in ")]":
            depth -= 1
        elif ch == "}":
            if depth == 0:
                return pos
            depth -= 1
        pos += 1
    raise ScriptletParseError("unterminated interpolation", 1, start + 1, "}")


def render(template: str, env: Optional[Dict[str, Value]] = None) -> str:
    """Render a template: `{expr}` becomes str(eval(expr))."""
    env = env or {}
    out: List[str] = []
    expr_index = 0
    for kind, chunk in parse_template(template):
        if kind == "text":
            out.append(chunk)
            continue
        try:
            out.append(display_str(evaluate(parse(chunk), env)))
        except (EvalError, ScriptletParseError) as exc:
            exc.message = f"interpolation #{expr_index}: {exc.message}"
            raise
        expr_index += 1
    return "".join(out)
