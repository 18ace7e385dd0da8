"""Structural Verilog/SystemVerilog reader.

Deliberately shallow: module boundaries, port/parameter interfaces, and a
comment-stripping token stream. That is all the downstream gates need
(interface fidelity + token-level diversity). Anything deeper, elaboration,
typing, semantics, is out of scope, and unmodeled constructs are skipped
rather than rejected.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

from .errors import LexError, ParseError

log = logging.getLogger(__name__)

VERILOG_KEYWORDS = frozenset("""
    always always_comb always_ff always_latch and assign automatic begin bit
    buf byte case casex casez cell cmos config const deassign default defparam
    design disable do edge else end endcase endconfig endfunction endgenerate
    endmodule endprimitive endspecify endtable endtask enum event for force
    forever fork function generate genvar highz0 highz1 if ifnone incdir
    include initial inout input instance int integer join large liblist
    library localparam logic longint macromodule medium module nand negedge
    nmos nor noshowcancelled not notif0 notif1 or output packed parameter pmos
    posedge primitive priority pull0 pull1 pulldown pullup
    pulsestyle_ondetect pulsestyle_onevent rcmos real realtime reg release
    repeat return rnmos rpmos rtran rtranif0 rtranif1 scalared shortint
    showcancelled signed small specify specparam string strong0 strong1 struct
    supply0 supply1 table task time tran tranif0 tranif1 tri tri0 tri1 triand
    trior trireg typedef union unique unsigned use uwire var vectored void wait
    wand weak0 weak1 while wire wor xnor xor
""".split())

_NET_TYPES = (
    "wire", "reg", "logic", "tri", "tri0", "tri1", "wand", "wor", "trireg",
    "supply0", "supply1", "uwire", "var", "bit", "byte", "int", "integer",
    "longint", "shortint", "real", "time",
)

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_$]*")
_NUMBER_RE = re.compile(
    r"\d[\d_]*'[sS]?[bodhBODH][0-9a-fA-F_xXzZ?]+"
    r"|'[sS]?[bodhBODH][0-9a-fA-F_xXzZ?]+"
    r"|\d[\d_]*\.\d[\d_]*"
    r"|\d[\d_]*"
)
_SYS_RE = re.compile(r"\$[A-Za-z_][A-Za-z0-9_$]*")
_DIRECTIVE_RE = re.compile(r"`[A-Za-z_][A-Za-z0-9_]*")
_ESCAPED_RE = re.compile(r"\\[^\s]+")

# longest-first so the scanner never splits a multi-char operator
_OPERATORS = (
    "<<<=", ">>>=", "===", "!==", "==?", "!=?", "<<<", ">>>",
    "<<=", ">>=", "**", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||",
    "->", "+:", "-:", "::", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=",
    "++", "--", "'{",
)


@dataclass(frozen=True)
class TokenStream:
    """Lexical tokens with comments and whitespace stripped."""

    tokens: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)


@dataclass(frozen=True)
class PortDecl:
    name: str
    direction: str  # input | output | inout
    # None = scalar, (msb, lsb) = literal range, str = normalized expression
    width: tuple[int, int] | str | None = None

    def __post_init__(self):
        if self.direction not in ("input", "output", "inout"):
            raise ValueError(f"bad port direction {self.direction!r}")
        if isinstance(self.width, tuple) and self.width[0] < self.width[1]:
            raise ValueError(f"range not normalized: {self.width}")

    @property
    def width_text(self) -> str:
        if self.width is None:
            return "scalar"
        if isinstance(self.width, tuple):
            return f"{self.width[0]}:{self.width[1]}"
        return self.width


@dataclass(frozen=True)
class ModuleInfo:
    module_name: str
    ports: tuple[PortDecl, ...]
    parameters: tuple[tuple[str, str], ...]  # (name, default-value text)
    body_span: tuple[int, int]  # byte range of the body in the source
    other_modules: tuple[str, ...] = field(default=())


def tokenize(source: str) -> TokenStream:
    """Lex RTL text into a deterministic token stream.

    Comments and whitespace are dropped; string literals stay as single
    tokens. Unknown characters become their own tokens instead of failing,
    but unterminated strings/comments are reported with their offset.
    """
    tokens: list[str] = []
    i, n = 0, len(source)
    while i < n:
        ch = source[i]
        if ch in " \t\r\n\f\v":
            i += 1
            continue
        if source.startswith("//", i):
            nl = source.find("\n", i)
            i = n if nl == -1 else nl + 1
            continue
        if source.startswith("/*", i):
            end = source.find("*/", i + 2)
            if end == -1:
                raise LexError("unterminated block comment", i)
            i = end + 2
            continue
        if ch == '"':
            j = i + 1
            while True:
                if j >= n or source[j] == "\n":
                    raise LexError("unterminated string literal", i)
                if source[j] == "\\":
                    j += 2
                    continue
                if source[j] == '"':
                    break
                j += 1
            tokens.append(source[i : j + 1])
            i = j + 1
            continue
        matched = False
        for pattern in (_NUMBER_RE, _ESCAPED_RE, _IDENT_RE, _SYS_RE, _DIRECTIVE_RE):
            m = pattern.match(source, i)
            if m:
                tokens.append(m.group(0))
                i = m.end()
                matched = True
                break
        if matched:
            continue
        for op in _OPERATORS:
            if source.startswith(op, i):
                tokens.append(op)
                i += len(op)
                matched = True
                break
        if not matched:
            tokens.append(ch)
            i += 1
    return TokenStream(tuple(tokens))


def _mask_comments_and_strings(source: str) -> str:
    """Blank out comments and string bodies, preserving length and newlines.

    Structural regexes then run on the mask while byte offsets stay valid
    against the original text.
    """
    out = list(source)
    i, n = 0, len(source)

    def blank(a: int, b: int) -> None:
        for k in range(a, b):
            if out[k] != "\n":
                out[k] = " "

    while i < n:
        if source.startswith("//", i):
            nl = source.find("\n", i)
            end = n if nl == -1 else nl
            blank(i, end)
            i = end
        elif source.startswith("/*", i):
            end = source.find("*/", i + 2)
            if end == -1:
                raise LexError("unterminated block comment", i)
            blank(i, end + 2)
            i = end + 2
        elif source[i] == '"':
            j = i + 1
            while True:
                if j >= n or source[j] == "\n":
                    raise LexError("unterminated string literal", i)
                if source[j] == "\\":
                    j += 2
                    continue
                if source[j] == '"':
                    break
                j += 1
            blank(i + 1, j)
            i = j + 1
        else:
            i += 1
    return "".join(out)


def _split_top_commas(text: str) -> list[str]:
    parts, depth, start = [], 0, 0
    for i, ch in enumerate(text):
        if ch in "([{":
            depth += 1
        elif ch in ")]}":
            depth -= 1
        elif ch == "," and depth == 0:
            parts.append(text[start:i])
            start = i + 1
    parts.append(text[start:])
    return [p for p in (part.strip() for part in parts) if p]


def _find_balanced(masked: str, open_pos: int) -> int:
    """Index just past the parenthesis group opening at ``open_pos``."""
    depth = 0
    for i in range(open_pos, len(masked)):
        if masked[i] == "(":
            depth += 1
        elif masked[i] == ")":
            depth -= 1
            if depth == 0:
                return i + 1
    raise ParseError(f"unbalanced parentheses at offset {open_pos}")


_INT_RE = re.compile(r"^\d[\d_]*$")


def _normalize_range(range_text: str) -> tuple[int, int] | str:
    """``msb:lsb`` text to a normalized (msb, lsb) pair, or cleaned text
    when either bound is not an integer literal (parameterized widths)."""
    inner = re.sub(r"\s+", "", range_text)
    if ":" in inner:
        left, _, right = inner.partition(":")
        if _INT_RE.match(left) and _INT_RE.match(right):
            a, b = int(left.replace("_", "")), int(right.replace("_", ""))
            return (a, b) if a >= b else (b, a)
    return inner


def _parse_width(dims_text: str) -> tuple[int, int] | str | None:
    dims = re.findall(r"\[([^\]]*)\]", dims_text)
    if not dims:
        return None
    if len(dims) == 1:
        return _normalize_range(dims[0])
    # multi-dimensional packed range: keep the whole normalized bracket text
    cleaned = [re.sub(r"\s+", "", d) for d in dims]
    return "".join(f"[{d}]" for d in cleaned)


_NET_TYPE_RE = re.compile(
    r"^(?:(?:%s)\s+)*" % "|".join(_NET_TYPES), re.ASCII
)
_PORT_CHUNK_RE = re.compile(
    r"^(?:(input|output|inout)\s+)?"
    r"(?P<nets>(?:(?:%s)\s+)*)"
    r"(?:(?:signed|unsigned)\s+)?"
    r"(?P<dims>(?:\[[^\]]*\]\s*)*)"
    r"(?P<name>[A-Za-z_][A-Za-z0-9_$]*)"
    r"\s*(?P<udims>(?:\[[^\]]*\]\s*)*)"
    r"\s*(?:=.*)?$" % "|".join(_NET_TYPES),
    re.DOTALL,
)

_DIR_WORD_RE = re.compile(r"\b(input|output|inout)\b")


def _parse_ansi_ports(port_text: str) -> list[PortDecl]:
    ports: list[PortDecl] = []
    prev_dir: str | None = None
    prev_width: tuple[int, int] | str | None = None
    for chunk in _split_top_commas(port_text):
        m = _PORT_CHUNK_RE.match(chunk.strip())
        if not m:
            log.debug("skipping unmodeled port declaration: %r", chunk)
            continue
        direction = m.group(1)
        width = _parse_width(m.group("dims"))
        if direction is None:
            # continuation of the previous declaration: inherit direction,
            # and the range too unless this name carries its own
            if prev_dir is None:
                log.debug("port %r has no direction; skipping", m.group("name"))
                continue
            direction = prev_dir
            if width is None:
                width = prev_width
        udims = m.group("udims").strip()
        if udims:
            # fold unpacked dims into the textual form so they stay visible
            # in the signature
            packed = "" if width is None else (
                f"{width[0]}:{width[1]}" if isinstance(width, tuple) else width
            )
            width = packed + re.sub(r"\s+", "", udims)
        ports.append(PortDecl(m.group("name"), direction, width))
        prev_dir, prev_width = direction, ports[-1].width
    return ports


def _parse_nonansi_ports(port_text: str, body: str) -> list[PortDecl]:
    names: list[str] = []
    for chunk in _split_top_commas(port_text):
        m = re.match(r"^([A-Za-z_][A-Za-z0-9_$]*)$", chunk.strip())
        if m:
            names.append(m.group(1))
        else:
            log.debug("skipping unmodeled port-list entry: %r", chunk)
    decls: dict[str, tuple[str, tuple[int, int] | str | None]] = {}
    for m in re.finditer(r"\b(input|output|inout)\b([^;]*);", body):
        direction, rest = m.group(1), m.group(2)
        rest = _NET_TYPE_RE.sub("", rest.strip())
        rest = re.sub(r"^(?:signed|unsigned)\s+", "", rest)
        dims_m = re.match(r"^((?:\[[^\]]*\]\s*)*)", rest)
        width = _parse_width(dims_m.group(1))
        for name_chunk in _split_top_commas(rest[dims_m.end():]):
            nm = re.match(r"^([A-Za-z_][A-Za-z0-9_$]*)", name_chunk.strip())
            if nm:
                decls[nm.group(1)] = (direction, width)
    ports = []
    for name in names:
        if name in decls:
            direction, width = decls[name]
            ports.append(PortDecl(name, direction, width))
        else:
            log.debug("port %r has no body declaration; skipping", name)
    return ports


_PARAM_CHUNK_RE = re.compile(
    r"^(?:parameter\s+)?(?:\w+\s+)*?(?:\[[^\]]*\]\s*)?"
    r"([A-Za-z_][A-Za-z0-9_$]*)\s*=\s*(.+?)\s*$",
    re.DOTALL,
)


def _parse_parameters(header_param_text: str | None, body: str) -> list[tuple[str, str]]:
    params: list[tuple[str, str]] = []
    seen: set[str] = set()

    def add_chunks(text: str) -> None:
        for chunk in _split_top_commas(text):
            if chunk.startswith("localparam"):
                continue
            m = _PARAM_CHUNK_RE.match(chunk)
            if not m:
                continue
            name, default = m.group(1), re.sub(r"\s+", " ", m.group(2)).strip()
            if name not in seen:
                seen.add(name)
                params.append((name, default))

    if header_param_text:
        add_chunks(header_param_text)
    for m in re.finditer(r"\bparameter\b([^;]*);", body):
        add_chunks("parameter " + m.group(1))
    return params


def _module_spans(masked: str) -> list[tuple[int, int, int]]:
    """Top-level (module_kw_start, header_search_start, endmodule_kw_start)
    triples; raises on unbalanced module/endmodule nesting."""
    spans = []
    depth = 0
    open_at = open_end = None
    for m in re.finditer(r"\b(module|macromodule|endmodule)\b", masked):
        if m.group(1) == "endmodule":
            depth -= 1
            if depth < 0:
                raise ParseError("endmodule without matching module")
            if depth == 0:
                spans.append((open_at, open_end, m.start()))
        else:
            if depth == 0:
                open_at, open_end = m.start(), m.end()
            depth += 1
    if depth != 0:
        raise ParseError("unbalanced module/endmodule")
    return spans


def parse_module(source: str) -> ModuleInfo:
    """Extract the first top-level module's interface.

    Handles ANSI and non-ANSI port styles. Additional modules in the file
    are recorded by name only.
    """
    if not isinstance(source, str):
        raise ParseError("unreadable input: expected text")
    masked = _mask_comments_and_strings(source)
    spans = _module_spans(masked)
    if not spans:
        raise ParseError("no module declaration found")

    kw_start, cursor, end_kw = spans[0]
    name_m = _IDENT_RE.match(masked, _skip_ws(masked, cursor))
    if not name_m:
        raise ParseError("module keyword without a name")
    module_name = name_m.group(0)
    pos = name_m.end()

    # tolerate SV package imports between the name and the port list
    while True:
        pos = _skip_ws(masked, pos)
        if masked.startswith("import", pos) and not _IDENT_RE.match(masked, pos + 6):
            semi = masked.find(";", pos)
            if semi == -1 or semi > end_kw:
                raise ParseError("unterminated import in module header")
            pos = semi + 1
        else:
            break

    header_param_text = None
    if masked.startswith("#", pos):
        open_paren = masked.find("(", pos)
        if open_paren == -1:
            raise ParseError("malformed parameter list")
        close = _find_balanced(masked, open_paren)
        header_param_text = masked[open_paren + 1 : close - 1]
        pos = _skip_ws(masked, close)

    port_text = ""
    if masked.startswith("(", pos):
        close = _find_balanced(masked, pos)
        port_text = masked[pos + 1 : close - 1]
        pos = close

    semi = masked.find(";", pos)
    if semi == -1 or semi > end_kw:
        raise ParseError("module header missing terminating ';'")
    body = masked[semi + 1 : end_kw]

    if _DIR_WORD_RE.search(port_text):
        ports = _parse_ansi_ports(port_text)
    elif port_text.strip():
        ports = _parse_nonansi_ports(port_text, body)
    else:
        ports = []

    names = [p.name for p in ports]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ParseError(f"duplicate port names: {', '.join(dupes)}")

    others = []
    for other_start, other_cursor, _ in spans[1:]:
        om = _IDENT_RE.match(masked, _skip_ws(masked, other_cursor))
        if om:
            others.append(om.group(0))
    if others:
        log.debug("file declares additional modules: %s", ", ".join(others))

    return ModuleInfo(
        module_name=module_name,
        ports=tuple(ports),
        parameters=tuple(_parse_parameters(header_param_text, body)),
        body_span=(semi + 1, spans[0][2]),
        other_modules=tuple(others),
    )


def _skip_ws(text: str, pos: int) -> int:
    while pos < len(text) and text[pos].isspace():
        pos += 1
    return pos


def port_signature(info: ModuleInfo) -> str:
    """Canonical interface signature: sorted name:direction:width triples.

    Equal signatures mean identical port interfaces regardless of
    declaration order, style, or whitespace.
    """
    triples = sorted((p.name, p.direction, p.width_text) for p in info.ports)
    return ";".join(f"{n}:{d}:{w}" for n, d, w in triples)


def extract_register_names(source: str, info: ModuleInfo) -> list[str]:
    """Names of storage elements declared in the module body (reg/logic
    declarations), excluding ports. Heuristic, used for spec documents."""
    masked = _mask_comments_and_strings(source)
    body = masked[info.body_span[0] : info.body_span[1]]
    port_names = {p.name for p in info.ports}
    found: list[str] = []
    for m in re.finditer(r"\b(?:reg|logic)\b([^;()]*);", body):
        rest = re.sub(r"^\s*(?:signed|unsigned)\s+", "", m.group(1).strip())
        dims_m = re.match(r"^((?:\[[^\]]*\]\s*)*)", rest)
        for chunk in _split_top_commas(rest[dims_m.end():]):
            nm = re.match(r"^([A-Za-z_][A-Za-z0-9_$]*)", chunk.strip())
            if nm and nm.group(1) not in port_names and nm.group(1) not in found:
                found.append(nm.group(1))
    return found
