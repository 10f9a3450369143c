"""
Built-in, hand-instrumented targets.

Each target is a small parser that calls ``hit(label)`` at its branch points.
Labels are declared up front; every label owns one slot of the coverage map,
so the edge total of a target is exact and its coverage rate is meaningful.
A planted bug raises ``TargetCrash``, which the harness reports as a crash
with the target's documented signal.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from typing import Callable

from mutafuzz.corpus import MAP_SIZE


class TargetCrash(Exception):
    """Raised by a built-in target when it reaches its planted bug."""

    def __init__(self, site: str, signal: str = "SIGSEGV"):
        super().__init__(site)
        self.site = site
        self.signal = signal


@dataclass(frozen=True)
class BuiltinTarget:
    name: str
    description: str
    crash: str
    edges: tuple[str, ...]
    run: Callable[[bytes, Callable[[str], None]], None]
    seed: Callable[[], bytes]

    def slot_of(self, label: str) -> int:
        return _slot(self.name, label)

    @property
    def slots(self) -> dict[str, int]:
        return {label: _slot(self.name, label) for label in self.edges}


def _slot(target: str, label: str) -> int:
    return zlib.crc32(f"{target}:{label}".encode()) % MAP_SIZE


# -- magic_header -----------------------------------------------------------

MAGIC = b"FUZZ"


def _matching_bits(a: int, b: int) -> int:
    return 8 - bin(a ^ b).count("1")


def _magic_header(data: bytes, hit) -> None:
    # The magic comparison is split per byte and, within a mismatching byte,
    # reports how many bits already agree (laf-intel style), so coverage
    # feedback can climb towards the magic one step at a time.
    if len(data) < len(MAGIC):
        hit("short")
        return
    for i, want in enumerate(MAGIC):
        got = data[i]
        if got != want:
            hit(f"b{i}_ne_{_matching_bits(got, want)}")
            return
        hit(f"b{i}_eq")
    raise TargetCrash("magic_header:magic_prefix", "SIGABRT")


_MAGIC_EDGES = ("short",) + tuple(
    label
    for i in range(len(MAGIC))
    for label in (f"b{i}_eq", *(f"b{i}_ne_{m}" for m in range(8)))
)


def _magic_seed() -> bytes:
    return bytes(8)


# -- mini_elf -----------------------------------------------------------------

_ELF_TYPES = {0: "type_none", 1: "type_rel", 2: "type_exec", 3: "type_dyn", 4: "type_core"}
_ELF_MACHINES = {3: "mach_386", 0x28: "mach_arm", 0x3E: "mach_x86_64", 0xB7: "mach_aarch64"}
_ELF_ABIS = {0: "abi_sysv", 3: "abi_linux", 9: "abi_freebsd"}
_SHT = {0: "sht_null", 1: "sht_progbits", 2: "sht_symtab", 3: "sht_strtab", 8: "sht_nobits"}


def _mini_elf(data: bytes, hit) -> None:
    n = len(data)
    if n < 4:
        hit("too_short")
        return
    if data[:4] != b"\x7fELF":
        hit("bad_magic")
        return
    hit("magic")
    if n < 16:
        hit("short_ident")
        return
    if data[4] == 1:
        hit("class32")
        wide, hdr = False, 52
    elif data[4] == 2:
        hit("class64")
        wide, hdr = True, 64
    else:
        hit("bad_class")
        return
    if data[5] == 1:
        hit("lsb")
        order = "little"
    elif data[5] == 2:
        hit("msb")
        order = "big"
    else:
        hit("bad_encoding")
        return
    hit("ident_v1" if data[6] == 1 else "ident_vx")
    hit(_ELF_ABIS.get(data[7], "abi_other"))
    if n < hdr:
        hit("short_header")
        return

    def u(off: int, size: int) -> int:
        return int.from_bytes(data[off:off + size], order)

    hit(_ELF_TYPES.get(u(16, 2), "type_other"))
    hit(_ELF_MACHINES.get(u(18, 2), "mach_other"))
    hit("version_ok" if u(20, 4) == 1 else "version_bad")
    if wide:
        phoff, shoff, flags = u(32, 8), u(40, 8), u(48, 4)
        ehsize, phentsize, phnum = u(52, 2), u(54, 2), u(56, 2)
        shentsize, shnum, shstrndx = u(58, 2), u(60, 2), u(62, 2)
    else:
        phoff, shoff, flags = u(28, 4), u(32, 4), u(36, 4)
        ehsize, phentsize, phnum = u(40, 2), u(42, 2), u(44, 2)
        shentsize, shnum, shstrndx = u(46, 2), u(48, 2), u(50, 2)
    hit("flags_zero" if flags == 0 else "flags_set")
    if ehsize != hdr:
        hit("ehsize_odd")

    if phnum == 0:
        hit("no_phdrs")
    elif phentsize == 0 or phoff + phnum * phentsize > n:
        # a zero entry size would let phnum drive an unbounded loop
        hit("phdrs_truncated")
    else:
        for _ in range(phnum):
            hit("phdr")

    if shnum == 0:
        hit("no_shdrs")
        return
    entsize = 64 if wide else 40
    if shentsize != entsize:
        hit("shentsize_odd")
        return
    if shoff + shnum * entsize > n:
        hit("shdrs_truncated")
        return
    sections = []
    for i in range(shnum):
        base = shoff + i * entsize
        sh_name, sh_type = u(base, 4), u(base + 4, 4)
        if wide:
            sh_offset, sh_size = u(base + 24, 8), u(base + 32, 8)
        else:
            sh_offset, sh_size = u(base + 16, 4), u(base + 20, 4)
        hit(_SHT.get(sh_type, "sht_other"))
        sections.append((sh_name, sh_type, sh_offset, sh_size))

    if shstrndx >= shnum:
        hit("bad_shstrndx")
        return
    _, str_type, str_off, str_size = sections[shstrndx]
    if str_type != 3:
        hit("shstrtab_not_strtab")
        return
    if str_off > n:
        hit("shstrtab_offset_bad")
        return
    # planted bug: the offset is checked, the length field is trusted
    if str_off + str_size > n:
        raise TargetCrash("mini_elf:shstrtab_size_overflow", "SIGSEGV")
    strtab = data[str_off:str_off + str_size]
    for sh_name, *_ in sections:
        if sh_name >= str_size:
            hit("name_out_of_range")
            continue
        end = strtab.find(b"\0", sh_name)
        if end < 0:
            hit("name_unterminated")
            continue
        name = strtab[sh_name:end]
        if not name:
            hit("name_empty")
        elif name.startswith(b".text"):
            hit("name_text")
        elif name.startswith(b".shstrtab"):
            hit("name_shstrtab")
        else:
            hit("name_other")


_ELF_EDGES = (
    "too_short", "bad_magic", "magic", "short_ident", "class32", "class64", "bad_class",
    "lsb", "msb", "bad_encoding", "ident_v1", "ident_vx",
    *_ELF_ABIS.values(), "abi_other", "short_header",
    *_ELF_TYPES.values(), "type_other", *_ELF_MACHINES.values(), "mach_other",
    "version_ok", "version_bad", "flags_zero", "flags_set", "ehsize_odd",
    "no_phdrs", "phdrs_truncated", "phdr",
    "no_shdrs", "shentsize_odd", "shdrs_truncated", *_SHT.values(), "sht_other",
    "bad_shstrndx", "shstrtab_not_strtab", "shstrtab_offset_bad",
    "name_out_of_range", "name_unterminated", "name_empty", "name_text",
    "name_shstrtab", "name_other",
)


def _elf_seed() -> bytes:
    """A 512-byte ELF64 header with three section headers and a name table."""
    names = b"\0.text\0.shstrtab\0"
    str_off = 64 + 3 * 64
    text_off = str_off + len(names)
    hdr = b"\x7fELF" + bytes([2, 1, 1, 0]) + bytes(8)
    hdr += struct.pack("<HHIQQQIHHHHHH", 2, 0x3E, 1, 0x401000, 0, 64, 0, 64, 0, 0, 64, 3, 2)

    def shdr(name, typ, flags, off, size):
        return struct.pack("<IIQQQQIIQQ", name, typ, flags, 0, off, size, 0, 0, 1, 0)

    shdrs = shdr(0, 0, 0, 0, 0) + shdr(1, 1, 6, text_off, 64) + shdr(7, 3, 0, str_off, len(names))
    body = hdr + shdrs + names + bytes(range(0x90, 0xD0))
    return body + bytes(512 - len(body))


# -- mini_xml -----------------------------------------------------------------

XML_MAX_DEPTH = 7
_ENTITIES = {b"amp", b"lt", b"gt", b"quot", b"apos"}
_NAME_START = frozenset(b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_")
_NAME_CHARS = _NAME_START | frozenset(b"0123456789-.:")


def _is_name(name: bytes) -> bool:
    return bool(name) and name[0] in _NAME_START and all(c in _NAME_CHARS for c in name)


def _xml_text(data: bytes, start: int, end: int, hit) -> None:
    hit("text")
    i = data.find(b"&", start, end)
    while i >= 0:
        j = data.find(b";", i, end)
        if j < 0:
            hit("entity_unterminated")
            return
        hit("entity_known" if data[i + 1:j] in _ENTITIES else "entity_unknown")
        i = data.find(b"&", j, end)


def _xml_attrs(attrs: bytes, hit) -> None:
    for token in attrs.split():
        key, eq, value = token.partition(b"=")
        if not eq:
            hit("attr_bare")
        elif not _is_name(key):
            hit("attr_bad_name")
        elif value[:1] == b'"' and value[-1:] == b'"' and len(value) >= 2:
            hit("attr_dq")
        elif value[:1] == b"'" and value[-1:] == b"'" and len(value) >= 2:
            hit("attr_sq")
        else:
            hit("attr_unquoted")


def _mini_xml(data: bytes, hit) -> None:
    n = len(data)
    if n == 0:
        hit("empty")
        return
    i = 0
    if data.startswith(b"<?xml"):
        hit("xml_decl")
        j = data.find(b"?>")
        if j < 0:
            hit("decl_unterminated")
            return
        i = j + 2
    stack: list[bytes] = []
    deepest = 0
    while i < n:
        if data[i] != 0x3C:
            j = data.find(b"<", i)
            j = n if j < 0 else j
            _xml_text(data, i, j, hit)
            i = j
            continue
        if data.startswith(b"<!--", i):
            hit("comment")
            j = data.find(b"-->", i + 4)
            if j < 0:
                hit("comment_unterminated")
                return
            i = j + 3
            continue
        if data.startswith(b"<![CDATA[", i):
            hit("cdata")
            j = data.find(b"]]>", i + 9)
            if j < 0:
                hit("cdata_unterminated")
                return
            i = j + 3
            continue
        if data.startswith(b"<!", i) or data.startswith(b"<?", i):
            hit("doctype" if data[i + 1] == 0x21 else "pi")
            j = data.find(b">", i)
            if j < 0:
                hit("eof_in_tag")
                return
            i = j + 1
            continue
        j = data.find(b">", i)
        if j < 0:
            hit("eof_in_tag")
            return
        body = data[i + 1:j]
        i = j + 1
        if body.startswith(b"/"):
            name = body[1:].strip()
            if not stack:
                hit("close_without_open")
            elif stack[-1] != name:
                hit("close_mismatch")
                stack.pop()
            else:
                hit("close")
                stack.pop()
            continue
        self_closing = body.endswith(b"/")
        if self_closing:
            body = body[:-1]
        name, _, attrs = body.partition(b" ")
        if not _is_name(name):
            hit("bad_name")
            continue
        _xml_attrs(attrs, hit)
        if self_closing:
            hit("self_close")
            continue
        stack.append(name)
        hit("open")
        if len(stack) > XML_MAX_DEPTH:
            # planted bug: recursive descent with a fixed-size frame stack
            raise TargetCrash("mini_xml:deep_nesting", "SIGSEGV")
        if len(stack) > deepest:
            deepest = len(stack)
            hit(f"depth_{deepest}")
    hit("unclosed_at_eof" if stack else "balanced")


_XML_EDGES = (
    "empty", "xml_decl", "decl_unterminated", "text", "entity_unterminated",
    "entity_known", "entity_unknown", "attr_bare", "attr_bad_name", "attr_dq", "attr_sq",
    "attr_unquoted", "comment", "comment_unterminated", "cdata", "cdata_unterminated",
    "doctype", "pi", "eof_in_tag", "close_without_open", "close_mismatch", "close",
    "bad_name", "self_close", "open",
    *(f"depth_{d}" for d in range(1, XML_MAX_DEPTH + 1)),
    "unclosed_at_eof", "balanced",
)


def _xml_seed() -> bytes:
    return (
        b'<?xml version="1.0"?><a x="1"><b><c><d><e><f><g>t&amp;</g></f></e></d></c></b>'
        b"<h/><!-- c --></a>"
    )


# -- mini_jpeg_segments -------------------------------------------------------

_APPN = frozenset(range(0xE2, 0xF0))


def _jpeg_payload(marker: int, payload: bytes, hit) -> None:
    if marker == 0xE0:
        hit("jfif" if payload.startswith(b"JFIF\0") else "app0_other")
    elif marker == 0xE1:
        hit("exif" if payload.startswith(b"Exif\0") else "app1_other")
    elif marker in _APPN:
        hit("appn")
    elif marker == 0xDB:
        hit("dqt")
        k = 0
        while k < len(payload):
            precision = payload[k] >> 4
            if precision > 1:
                hit("dqt_bad_precision")
                return
            k += 1 + 64 * (precision + 1)
            hit("dqt_table" if k <= len(payload) else "dqt_truncated")
    elif marker == 0xC4:
        hit("dht")
        if len(payload) < 17:
            hit("dht_short")
            return
        total = sum(payload[1:17])
        hit("dht_table" if 17 + total <= len(payload) else "dht_truncated")
    elif marker in (0xC0, 0xC2):
        hit("sof0" if marker == 0xC0 else "sof2")
        if len(payload) < 6:
            hit("sof_short")
            return
        hit("sof_8bit" if payload[0] == 8 else "sof_other_precision")
        height, width = struct.unpack_from(">HH", payload, 1)
        if height == 0 or width == 0:
            hit("sof_zero_dim")
        ncomp = payload[5]
        hit("sof_components_ok" if 6 + 3 * ncomp <= len(payload) else "sof_components_short")
    elif marker == 0xDA:
        hit("sos")
    elif marker == 0xFE:
        hit("com")
    elif marker == 0xDD:
        hit("dri")
    else:
        hit("unknown_marker")


def _mini_jpeg_segments(data: bytes, hit) -> None:
    n = len(data)
    if n < 2:
        hit("too_short")
        return
    if data[:2] != b"\xff\xd8":
        hit("no_soi")
        return
    hit("soi")
    i = 2
    while True:
        if i >= n:
            hit("eof_no_eoi")
            return
        if data[i] != 0xFF:
            hit("garbage")
            i += 1
            continue
        if i + 1 >= n:
            hit("eof_in_marker")
            return
        marker = data[i + 1]
        if marker == 0xFF:
            hit("fill_byte")
            i += 1
            continue
        if marker == 0xD9:
            hit("eoi")
            return
        if 0xD0 <= marker <= 0xD7:
            hit("rst")
            i += 2
            continue
        if i + 3 >= n:
            hit("eof_in_length")
            return
        length = (data[i + 2] << 8) | data[i + 3]
        if length < 2:
            # planted bug: length - 2 underflows into a huge copy
            raise TargetCrash("mini_jpeg_segments:bad_segment_length", "SIGSEGV")
        end = i + 2 + length
        if end > n:
            hit("segment_truncated")
            return
        _jpeg_payload(marker, data[i + 4:end], hit)
        i = end
        if marker == 0xDA:
            while i + 1 < n and not (data[i] == 0xFF and data[i + 1] not in (0x00, *range(0xD0, 0xD8))):
                i += 1
            hit("entropy")


_JPEG_EDGES = (
    "too_short", "no_soi", "soi", "eof_no_eoi", "garbage", "eof_in_marker", "fill_byte",
    "eoi", "rst", "eof_in_length", "segment_truncated", "jfif", "app0_other", "exif",
    "app1_other", "appn", "dqt", "dqt_bad_precision", "dqt_table", "dqt_truncated",
    "dht", "dht_short", "dht_table", "dht_truncated", "sof0", "sof2", "sof_short",
    "sof_8bit", "sof_other_precision", "sof_zero_dim", "sof_components_ok",
    "sof_components_short", "com", "dri", "unknown_marker", "sos", "entropy",
)


def _jpeg_seed() -> bytes:
    def seg(marker: int, payload: bytes) -> bytes:
        return bytes([0xFF, marker]) + struct.pack(">H", len(payload) + 2) + payload

    out = b"\xff\xd8"
    out += seg(0xE0, b"JFIF\0\x01\x01\x00\x00\x01\x00\x01\x00\x00")
    out += seg(0xFE, b"A")
    out += seg(0xDB, b"\x00" + bytes(range(1, 65)))
    out += seg(0xC0, b"\x08\x00\x10\x00\x10\x01\x01\x11\x00")
    out += seg(0xC4, b"\x00" + b"\x01" + bytes(15) + b"\x00")
    out += seg(0xDA, b"\x01\x01\x00\x00\x3f\x00")
    out += b"\x12\x34\xff\x00\x56"
    return out + b"\xff\xd9"


BUILTIN_TARGETS: dict[str, BuiltinTarget] = {
    t.name: t
    for t in (
        BuiltinTarget(
            "magic_header",
            "4-byte magic check with per-bit comparison feedback",
            "abort when the input starts with b'FUZZ'",
            _MAGIC_EDGES,
            _magic_header,
            _magic_seed,
        ),
        BuiltinTarget(
            "mini_elf",
            "ELF header and section-table validator",
            "segfault when the section-name table's size field runs past the file",
            _ELF_EDGES,
            _mini_elf,
            _elf_seed,
        ),
        BuiltinTarget(
            "mini_xml",
            "XML-ish tag matcher with attributes, entities and comments",
            f"segfault when element nesting exceeds depth {XML_MAX_DEPTH}",
            _XML_EDGES,
            _mini_xml,
            _xml_seed,
        ),
        BuiltinTarget(
            "mini_jpeg_segments",
            "JPEG marker/segment scanner",
            "segfault on a segment length field below 2",
            _JPEG_EDGES,
            _mini_jpeg_segments,
            _jpeg_seed,
        ),
    )
}


def _check_slots() -> None:
    for t in BUILTIN_TARGETS.values():
        slots = [t.slot_of(e) for e in t.edges]
        assert len(set(t.edges)) == len(t.edges), t.name
        assert len(set(slots)) == len(slots), f"slot collision in {t.name}"


_check_slots()
