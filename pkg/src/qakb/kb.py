"""Triple-store knowledge base: parsing, construction and lookups.

The knowledge base is built once from three inputs (a facts file, an alias
file and one or more notable-type files) and is read-only afterwards.  All
entity ids are canonicalized to the dotted lowercase form ``m.xxxxx`` and
all relations to slash-separated lowercase paths ``/a/b/c`` on the way in,
so the rest of the package never sees raw dump spellings.
"""

from __future__ import annotations

import io
import json
import logging
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

from qakb.errors import MalformedId, ParseError

log = logging.getLogger(__name__)

SNAPSHOT_MAGIC = b"KBQA1"

# Predicates (canonical form) recognized by the notable-type ingestion join.
_TYPE_ASSIGN_RELATION = "/common/topic/notable_types"
_TYPE_NAME_RELATIONS = ("/type/object/name", "/common/topic/notable_for")


# ---------------------------------------------------------------------------
# Identifier canonicalization
# ---------------------------------------------------------------------------

def _strip_id_prefix(raw: str) -> str:
    """Remove URL and dump prefixes, leaving the bare dump-local id."""
    s = raw.strip()
    if s.startswith("<") and s.endswith(">") and len(s) >= 2:
        s = s[1:-1]
    lower = s.lower()
    for scheme in ("http://", "https://"):
        if lower.startswith(scheme):
            s = s[len(scheme):]
            # drop the host component
            slash = s.find("/")
            s = s[slash + 1:] if slash >= 0 else ""
            lower = s.lower()
            break
    if lower.startswith("www.freebase.com/"):
        s = s[len("www.freebase.com/"):]
        lower = s.lower()
    if lower.startswith("ns/"):
        s = s[len("ns/"):]
    return s.strip("/")


def canonicalize_mid(raw: str) -> str:
    """Normalize an entity id to the dotted lowercase form, e.g. ``m.02mjmr``.

    Accepts the spellings found in the common dump formats: bare ids
    ("m.02mjmr"), slash ids ("m/02mjmr"), site-prefixed ids
    ("www.freebase.com/m/02mjmr") and full IRIs
    ("http://rdf.freebase.com/ns/m.02mjmr").  Idempotent on its own output.
    """
    out = _strip_id_prefix(raw).replace("/", ".").lower()
    if not out or any(c.isspace() for c in out):
        raise MalformedId(f"cannot canonicalize entity id {raw!r}")
    return out


def canonicalize_relation(raw: str) -> str:
    """Normalize a relation to a slash path, e.g. ``/people/person/place_of_birth``.

    Handles the slash form used by TSV dumps ("www.freebase.com/people/...")
    and the dotted form used inside IRIs ("people.person.place_of_birth").
    Idempotent on its own output.
    """
    s = _strip_id_prefix(raw).replace(".", "/").lower()
    s = s.strip("/")
    if not s or any(c.isspace() for c in s):
        raise MalformedId(f"cannot canonicalize relation {raw!r}")
    return "/" + s


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class Fact:
    """One (subject, relation, object) triple."""

    subject: str
    relation: str
    object: str


@dataclass(slots=True)
class EntityRecord:
    """Everything the engine knows about one entity."""

    id: str
    aliases: list[str] = field(default_factory=list)
    notable_type: Optional[str] = None
    out_degree: int = 0


@dataclass(slots=True)
class KnowledgeBase:
    facts: list[Fact]
    entities: dict[str, EntityRecord]
    by_subject: dict[str, list[int]]


# ---------------------------------------------------------------------------
# TSV facts format
# ---------------------------------------------------------------------------

def parse_triples_tsv(stream: Iterable[str]) -> list[Fact]:
    """Parse ``subject<TAB>relation<TAB>objects`` lines into facts.

    The object field may hold several space-separated ids; such a line
    expands into one fact per object.  Blank lines are skipped and input
    order is preserved.
    """
    facts: list[Fact] = []
    for line_no, line in enumerate(stream, start=1):
        line = line.rstrip("\n").rstrip("\r")
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) < 3:
            raise ParseError(
                f"expected 3 tab-separated fields, got {len(fields)}", line_no
            )
        subject = canonicalize_mid(fields[0])
        relation = canonicalize_relation(fields[1])
        for obj in fields[2].split():
            facts.append(Fact(subject, relation, canonicalize_mid(obj)))
    return facts


def serialize_triples_tsv(facts: Iterable[Fact]) -> str:
    """Render facts back to the TSV format, one fact per line."""
    return "".join(f"{f.subject}\t{f.relation}\t{f.object}\n" for f in facts)


# ---------------------------------------------------------------------------
# Simplified N-Triples format
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class NTObject:
    """Object position of an N-Triples statement: an IRI or a literal."""

    value: str
    is_literal: bool = False
    lang: Optional[str] = None


_LITERAL_ESCAPES = {'"': '"', "\\": "\\", "n": "\n", "t": "\t"}


def _scan_iri(line: str, pos: int, line_no: int) -> tuple[str, int]:
    assert line[pos] == "<"
    end = line.find(">", pos + 1)
    if end < 0:
        raise ParseError("unterminated IRI", line_no)
    return line[pos + 1:end], end + 1


def _scan_literal(line: str, pos: int, line_no: int) -> tuple[str, Optional[str], int]:
    assert line[pos] == '"'
    chars: list[str] = []
    i = pos + 1
    while i < len(line):
        c = line[i]
        if c == "\\":
            if i + 1 >= len(line) or line[i + 1] not in _LITERAL_ESCAPES:
                raise ParseError(f"bad escape at column {i + 1}", line_no)
            chars.append(_LITERAL_ESCAPES[line[i + 1]])
            i += 2
        elif c == '"':
            i += 1
            lang = None
            if i < len(line) and line[i] == "@":
                j = i + 1
                while j < len(line) and (line[j].isalnum() or line[j] == "-"):
                    j += 1
                lang = line[i + 1:j]
                i = j
            return "".join(chars), lang, i
        else:
            chars.append(c)
            i += 1
    raise ParseError("unterminated literal", line_no)


def parse_ntriples_line(
    line: str, line_no: int = 1
) -> Optional[tuple[str, str, NTObject]]:
    """Parse one statement of the simplified N-Triples grammar.

    Grammar: ``<IRI> <IRI> (<IRI> | "literal"(@lang)?) .`` with ``\\"``,
    ``\\\\``, ``\\n`` and ``\\t`` escapes inside literals.  Comment lines
    (starting with ``#``) and blank lines yield ``None``.
    """
    stripped = line.strip()
    if not stripped or stripped.startswith("#"):
        return None

    def skip_ws(pos: int) -> int:
        while pos < len(line) and line[pos] in " \t":
            pos += 1
        return pos

    pos = skip_ws(0)
    parts: list = []
    for slot in ("subject", "predicate"):
        if pos >= len(line) or line[pos] != "<":
            raise ParseError(f"expected IRI in {slot} position", line_no)
        iri, pos = _scan_iri(line, pos, line_no)
        parts.append(iri)
        pos = skip_ws(pos)
    if pos >= len(line):
        raise ParseError("missing object", line_no)
    if line[pos] == "<":
        iri, pos = _scan_iri(line, pos, line_no)
        obj = NTObject(iri, is_literal=False)
    elif line[pos] == '"':
        text, lang, pos = _scan_literal(line, pos, line_no)
        obj = NTObject(text, is_literal=True, lang=lang)
    else:
        raise ParseError("object must be an IRI or a literal", line_no)
    pos = skip_ws(pos)
    if pos >= len(line) or line[pos] != ".":
        raise ParseError("missing terminal '.'", line_no)
    trailing = line[pos + 1:].strip()
    if trailing:
        raise ParseError(f"unexpected trailing content {trailing!r}", line_no)
    return parts[0], parts[1], obj


def serialize_ntriples_line(subject: str, predicate: str, obj: NTObject) -> str:
    """Render one statement; inverse of :func:`parse_ntriples_line`."""
    if obj.is_literal:
        text = obj.value.replace("\\", "\\\\").replace('"', '\\"')
        text = text.replace("\n", "\\n").replace("\t", "\\t")
        rendered = f'"{text}"' + (f"@{obj.lang}" if obj.lang else "")
    else:
        rendered = f"<{obj.value}>"
    return f"<{subject}> <{predicate}> {rendered} .\n"


def parse_ntriples(stream: Iterable[str]) -> Iterator[tuple[str, str, NTObject]]:
    """Parse a whole stream, skipping comments/blanks, with line numbers."""
    for line_no, line in enumerate(stream, start=1):
        triple = parse_ntriples_line(line.rstrip("\n").rstrip("\r"), line_no)
        if triple is not None:
            yield triple


# ---------------------------------------------------------------------------
# Notable-type ingestion
# ---------------------------------------------------------------------------

@dataclass(slots=True)
class TypeData:
    """Accumulated notable-type information, possibly from several files.

    ``direct`` pairs map an entity straight to a label; ``assignments``
    map an entity to a type id and are resolved against ``names`` (type id
    to label) when both halves have been loaded.
    """

    direct: list[tuple[str, str]] = field(default_factory=list)
    assignments: list[tuple[str, str]] = field(default_factory=list)
    names: dict[str, str] = field(default_factory=dict)

    def merge(self, other: "TypeData") -> None:
        self.direct.extend(other.direct)
        self.assignments.extend(other.assignments)
        self.names.update(other.names)

    def resolve(self) -> list[tuple[str, str]]:
        """Join assignments with names; unresolvable type ids are dropped."""
        pairs = list(self.direct)
        missing = 0
        for entity, type_id in self.assignments:
            label = self.names.get(type_id)
            if label is None:
                missing += 1
                continue
            pairs.append((entity, label))
        if missing:
            log.warning("dropped %d type assignments with unnamed type ids", missing)
        return pairs


def parse_type_lines(lines: Iterable[str]) -> TypeData:
    """Parse a notable-type file in either supported format.

    TSV lines are ``mid<TAB>label``.  N-Triples input (auto-detected by a
    first non-blank character of ``<``) contributes type assignments
    (IRI objects) and type names (literal objects).
    """
    buffered = list(lines)
    first = next((ln for ln in buffered if ln.strip()), "")
    data = TypeData()
    if not first:
        return data
    if first.lstrip().startswith("<"):
        for subject, predicate, obj in parse_ntriples(buffered):
            if obj.is_literal:
                if obj.lang not in (None, "en"):
                    continue
                data.names[canonicalize_mid(subject)] = obj.value.lower()
            else:
                relation = canonicalize_relation(predicate)
                if relation != _TYPE_ASSIGN_RELATION:
                    log.debug("ignoring non-type predicate %s", relation)
                    continue
                data.assignments.append(
                    (canonicalize_mid(subject), canonicalize_mid(obj.value))
                )
    else:
        for line_no, line in enumerate(buffered, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) < 2:
                raise ParseError("expected mid<TAB>label", line_no)
            data.direct.append((canonicalize_mid(fields[0]), fields[1].strip().lower()))
    return data


def parse_alias_lines(lines: Iterable[str]) -> list[tuple[str, str]]:
    """Parse ``mid<TAB>alias`` lines into (id, lowercased alias) pairs."""
    pairs: list[tuple[str, str]] = []
    for line_no, line in enumerate(lines, start=1):
        line = line.rstrip("\n").rstrip("\r")
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) < 2:
            raise ParseError("expected mid<TAB>alias", line_no)
        alias = fields[1].strip().lower()
        if alias:
            pairs.append((canonicalize_mid(fields[0]), alias))
    return pairs


# ---------------------------------------------------------------------------
# Construction and queries
# ---------------------------------------------------------------------------

def build_kb(
    facts: Iterable[Fact],
    alias_pairs: Iterable[tuple[str, str]] = (),
    type_pairs: Iterable[tuple[str, str]] = (),
) -> KnowledgeBase:
    """Assemble the immutable knowledge base.

    Out-degrees are counted from the facts.  Entities that appear only as
    objects (or only in the alias/type inputs) get records with out-degree
    0.  Duplicate type pairs are resolved last-write-wins.
    """
    fact_list = list(facts)
    entities: dict[str, EntityRecord] = {}
    by_subject: dict[str, list[int]] = {}

    def record(mid: str) -> EntityRecord:
        rec = entities.get(mid)
        if rec is None:
            rec = entities[mid] = EntityRecord(id=mid)
        return rec

    for idx, fact in enumerate(fact_list):
        rec = record(fact.subject)
        rec.out_degree += 1
        by_subject.setdefault(fact.subject, []).append(idx)
        record(fact.object)

    for mid, alias in alias_pairs:
        mid = canonicalize_mid(mid)
        rec = record(mid)
        alias = alias.strip().lower()
        if alias and alias not in rec.aliases:
            rec.aliases.append(alias)

    for mid, label in type_pairs:
        mid = canonicalize_mid(mid)
        rec = record(mid)
        if rec.notable_type is not None and rec.notable_type != label:
            log.warning(
                "entity %s has conflicting notable types %r / %r; keeping the latter",
                mid, rec.notable_type, label,
            )
        rec.notable_type = label

    return KnowledgeBase(facts=fact_list, entities=entities, by_subject=by_subject)


def relations_of(kb: KnowledgeBase, entity: str) -> list[str]:
    """Distinct outgoing relations of an entity, sorted lexicographically."""
    seen = {kb.facts[i].relation for i in kb.by_subject.get(entity, ())}
    return sorted(seen)


def lookup_objects(kb: KnowledgeBase, entity: str, relation: str) -> list[str]:
    """Objects of all (entity, relation, ·) facts, deduplicated, in fact order."""
    out: list[str] = []
    for i in kb.by_subject.get(entity, ()):
        fact = kb.facts[i]
        if fact.relation == relation and fact.object not in out:
            out.append(fact.object)
    return out


def out_degree(kb: KnowledgeBase, entity: str) -> int:
    """Number of stored facts whose subject is ``entity`` (0 if unknown)."""
    rec = kb.entities.get(entity)
    return rec.out_degree if rec is not None else 0


def notable_type(kb: KnowledgeBase, entity: str) -> Optional[str]:
    rec = kb.entities.get(entity)
    return rec.notable_type if rec is not None else None


def primary_alias(kb: KnowledgeBase, entity: str) -> str:
    """First alias of an entity, falling back to the id itself."""
    rec = kb.entities.get(entity)
    if rec is not None and rec.aliases:
        return rec.aliases[0]
    return entity


# ---------------------------------------------------------------------------
# Binary snapshot
# ---------------------------------------------------------------------------

def save_kb(kb: KnowledgeBase, path: str) -> None:
    """Write a versioned binary snapshot; byte-stable for a given KB."""
    entity_ids = sorted(kb.entities)
    object_ids = {f.object for f in kb.facts}
    payload = {
        "facts": [[f.subject, f.relation, f.object] for f in kb.facts],
        "aliases": [[e, kb.entities[e].aliases] for e in entity_ids
                    if kb.entities[e].aliases],
        "types": [[e, kb.entities[e].notable_type] for e in entity_ids
                  if kb.entities[e].notable_type is not None],
        "extra_entities": [e for e in entity_ids
                           if kb.entities[e].out_degree == 0
                           and not kb.entities[e].aliases
                           and kb.entities[e].notable_type is None
                           and e not in object_ids],
    }
    blob = zlib.compress(
        json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8"),
        level=6,
    )
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(blob)


def load_kb(path: str) -> KnowledgeBase:
    """Read a snapshot written by :func:`save_kb`."""
    with open(path, "rb") as fh:
        magic = fh.read(len(SNAPSHOT_MAGIC))
        if magic != SNAPSHOT_MAGIC:
            raise ParseError(f"bad snapshot header {magic!r}", 1)
        payload = json.loads(zlib.decompress(fh.read()).decode("utf-8"))
    facts = [Fact(s, r, o) for s, r, o in payload["facts"]]
    alias_pairs = [(e, a) for e, aliases in payload["aliases"] for a in aliases]
    kb = build_kb(facts, alias_pairs, [tuple(p) for p in payload["types"]])
    for mid in payload.get("extra_entities", ()):
        if mid not in kb.entities:
            kb.entities[mid] = EntityRecord(id=mid)
    return kb


# ---------------------------------------------------------------------------
# File-level convenience loaders
# ---------------------------------------------------------------------------

def load_facts_file(path: str) -> list[Fact]:
    with io.open(path, "r", encoding="utf-8") as fh:
        return parse_triples_tsv(fh)


def load_alias_file(path: str) -> list[tuple[str, str]]:
    with io.open(path, "r", encoding="utf-8") as fh:
        return parse_alias_lines(fh)


def load_type_file(path: str) -> TypeData:
    with io.open(path, "r", encoding="utf-8") as fh:
        return parse_type_lines(fh)
