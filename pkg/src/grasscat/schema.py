"""Variable schemas and the dummy-bit encoding of categorical/ordinal records.

A schema declares an ordered list of variables.  A categorical variable with
``levels`` categories (level 0 is the base category) occupies a block of
``levels - 1`` dummy bits, at most one of which may be set (one-hot).  An
ordinal variable with ``levels`` levels occupies ``levels - 1`` bits encoding
the flags "at least 1", "at least 2", ... so the set bits of a valid block
form a left-flushed prefix.  Binary variables are categorical with 2 levels.

Block order in the combined dummy vector follows declaration order; nothing
is reordered behind the user's back.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator

from .caps import state_cap
from .errors import DataError, EnumerationCapError, InvalidStateError, SchemaError


class VariableKind(Enum):
    CATEGORICAL = "categorical"
    ORDINAL = "ordinal"


@dataclass(frozen=True)
class VariableDecl:
    """One declared variable: a name, a kind, and its level count (>= 2)."""

    name: str
    kind: VariableKind
    levels: int

    def __post_init__(self) -> None:
        if not self.name:
            raise SchemaError("variable name must be nonempty")
        if not isinstance(self.levels, int) or self.levels < 2:
            raise SchemaError(
                f"variable {self.name!r}: levels must be an integer >= 2, got {self.levels!r}"
            )

    @property
    def block_size(self) -> int:
        return self.levels - 1


@dataclass(frozen=True)
class DummyState:
    """A length-q bit vector obeying the per-block one-hot / prefix constraints."""

    bits: tuple[int, ...]

    def __post_init__(self) -> None:
        if any(b not in (0, 1) for b in self.bits):
            raise InvalidStateError(f"bits must be 0/1, got {self.bits!r}")


@dataclass(frozen=True)
class Record:
    """Per-variable integer levels, one per declared variable."""

    values: tuple[int, ...]


class VariableSchema:
    """Ordered variable declarations plus the derived dummy-index layout."""

    def __init__(self, variables: Iterable[VariableDecl]):
        self.variables: tuple[VariableDecl, ...] = tuple(variables)
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate variable names in {names}")
        blocks = []
        start = 0
        for v in self.variables:
            blocks.append((start, start + v.block_size))
            start += v.block_size
        self.blocks: tuple[tuple[int, int], ...] = tuple(blocks)
        self.q: int = start

    def __len__(self) -> int:
        return len(self.variables)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, VariableSchema) and self.variables == other.variables

    def __repr__(self) -> str:
        inner = ", ".join(
            f"{v.name}:{v.kind.value}({v.levels})" for v in self.variables
        )
        return f"VariableSchema[{inner}]"

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.variables)

    def block_indices(self, j: int) -> range:
        s, e = self.blocks[j]
        return range(s, e)

    def n_states(self) -> int:
        n = 1
        for v in self.variables:
            n *= v.levels
        return n

    def index_labels(self) -> tuple[str, ...]:
        """Human-readable label per dummy bit, e.g. ``Age=2`` or ``Edu>=3``."""
        labels: list[str] = []
        for v in self.variables:
            op = "=" if v.kind is VariableKind.CATEGORICAL else ">="
            labels.extend(f"{v.name}{op}{l}" for l in range(1, v.levels))
        return tuple(labels)


def encode_record(schema: VariableSchema, rec: Record) -> DummyState:
    """Map per-variable levels to the constrained dummy bit vector.

    Categorical level l sets bit l of the block (level 0 sets none); ordinal
    level l sets the first l bits of the block.
    """
    if len(rec.values) != len(schema):
        raise SchemaError(
            f"record has {len(rec.values)} values, schema declares {len(schema)} variables"
        )
    bits = [0] * schema.q
    for j, (v, level) in enumerate(zip(schema.variables, rec.values)):
        if int(level) != level or not (0 <= level <= v.block_size):
            raise SchemaError(
                f"variable {v.name!r}: level {level!r} out of range 0..{v.block_size}"
            )
        level = int(level)
        s, _ = schema.blocks[j]
        if v.kind is VariableKind.CATEGORICAL:
            if level > 0:
                bits[s + level - 1] = 1
        else:
            for l in range(level):
                bits[s + l] = 1
    return DummyState(tuple(bits))


def decode_state(schema: VariableSchema, state: DummyState) -> Record:
    """Inverse of :func:`encode_record`; rejects invariant-violating bit patterns."""
    if len(state.bits) != schema.q:
        raise InvalidStateError(
            f"state has {len(state.bits)} bits, schema dummy dimension is {schema.q}"
        )
    values: list[int] = []
    for j, v in enumerate(schema.variables):
        s, e = schema.blocks[j]
        block = state.bits[s:e]
        if v.kind is VariableKind.CATEGORICAL:
            ones = [i for i, b in enumerate(block) if b]
            if len(ones) > 1:
                raise InvalidStateError(
                    f"variable {v.name!r}: block {block} is not one-hot"
                )
            values.append(ones[0] + 1 if ones else 0)
        else:
            level = sum(block)
            if block != (1,) * level + (0,) * (len(block) - level):
                raise InvalidStateError(
                    f"variable {v.name!r}: block {block} is not a left-flushed prefix"
                )
            values.append(level)
    return Record(tuple(values))


def iter_records(schema: VariableSchema) -> Iterator[Record]:
    """All records in lexicographic order (first variable most significant)."""
    for combo in itertools.product(*(range(v.levels) for v in schema.variables)):
        yield Record(combo)


def enumerate_allowed_states(
    schema: VariableSchema, cap: int | None = None
) -> list[DummyState]:
    """All valid dummy states, lexicographic in record space.

    Raises
    ------
    EnumerationCapError
        If the product of level counts exceeds the cap (default 10**6,
        overridable via GRASSCAT_CAP).
    """
    n = schema.n_states()
    limit = state_cap(cap)
    if n > limit:
        raise EnumerationCapError(
            f"schema has {n} allowed states, exceeding the cap {limit}"
        )
    return [encode_record(schema, rec) for rec in iter_records(schema)]


# -- schema file format ----------------------------------------------------

def schema_to_dict(schema: VariableSchema) -> dict:
    return {
        "variables": [
            {"name": v.name, "kind": v.kind.value, "levels": v.levels}
            for v in schema.variables
        ]
    }


def schema_from_dict(obj: object) -> VariableSchema:
    if not isinstance(obj, dict):
        raise SchemaError(f"schema document must be an object, got {type(obj).__name__}")
    unknown = set(obj) - {"variables"}
    if unknown:
        raise SchemaError(f"unknown schema fields: {sorted(unknown)}")
    if "variables" not in obj or not isinstance(obj["variables"], list):
        raise SchemaError('schema document must contain a "variables" list')
    decls = []
    for i, entry in enumerate(obj["variables"]):
        if not isinstance(entry, dict):
            raise SchemaError(f"variables[{i}] must be an object")
        unknown = set(entry) - {"name", "kind", "levels"}
        if unknown:
            raise SchemaError(f"variables[{i}]: unknown fields {sorted(unknown)}")
        try:
            kind = VariableKind(entry.get("kind"))
        except ValueError:
            raise SchemaError(
                f"variables[{i}]: kind must be 'categorical' or 'ordinal', "
                f"got {entry.get('kind')!r}"
            ) from None
        name = entry.get("name")
        if not isinstance(name, str):
            raise SchemaError(f"variables[{i}]: name must be a string")
        levels = entry.get("levels")
        if not isinstance(levels, int) or isinstance(levels, bool):
            raise SchemaError(f"variables[{i}]: levels must be an integer")
        decls.append(VariableDecl(name, kind, levels))
    return VariableSchema(decls)


def load_schema(path: str) -> VariableSchema:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read schema file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"schema file {path} is not valid JSON: {exc}") from exc
    return schema_from_dict(obj)


# -- data file format ------------------------------------------------------

def load_data_rows(schema: VariableSchema, path: str) -> list[Record]:
    """Read a CSV of integer levels with a header matching the schema names."""
    import csv

    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot read data file {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"data file {path} is empty") from None
        if tuple(header) != schema.names:
            raise DataError(
                f"data header {header} does not match schema variables {list(schema.names)}"
            )
        rows: list[Record] = []
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(schema):
                raise DataError(f"{path}:{i}: expected {len(schema)} cells, got {len(row)}")
            try:
                values = tuple(int(cell) for cell in row)
            except ValueError as exc:
                raise DataError(f"{path}:{i}: non-integer cell ({exc})") from None
            try:
                encode_record(schema, Record(values))
            except SchemaError as exc:
                raise DataError(f"{path}:{i}: {exc}") from None
            rows.append(Record(values))
    if not rows:
        raise DataError(f"data file {path} contains no rows")
    return rows
