"""Key-value config files (INI syntax) and small CSV helpers shared by the loaders."""

from __future__ import annotations

import configparser
import csv
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence


class InputError(Exception):
    """A problem with a user-supplied file, with location info when known."""

    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None, column: int | None = None):
        self.path = None if path is None else str(path)
        self.line = line
        self.column = column
        self.message = message
        loc = ""
        if self.path is not None:
            loc = self.path
            if line is not None:
                loc += f":{line}"
                if column is not None:
                    loc += f":{column}"
            loc += ": "
        super().__init__(loc + message)


def _parser() -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep key case
    return parser


def read_config(path: str | Path) -> configparser.ConfigParser:
    path = Path(path)
    if not path.is_file():
        raise InputError("file not found", path)
    parser = _parser()
    try:
        with path.open(encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise InputError(f"cannot parse config: {exc}", path, getattr(exc, "lineno", None)) from None
    return parser


def read_section(
    path: str | Path,
    section: str,
    required: Iterable[str] = (),
    allowed: Iterable[str] | None = None,
) -> dict[str, str]:
    parser = read_config(path)
    if not parser.has_section(section):
        raise InputError(f"missing [{section}] section", path)
    raw = dict(parser.items(section))
    for key in required:
        if key not in raw:
            raise InputError(f"[{section}] is missing key '{key}'", path)
    if allowed is not None:
        allowed = set(allowed)
        for key in raw:
            if key not in allowed:
                raise InputError(f"[{section}] has unknown key '{key}'", path)
    return raw


def fmt(value: Any) -> str:
    """Shortest text that round-trips; floats keep full precision."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_sections(path: str | Path, sections: Mapping[str, Mapping[str, Any]]) -> None:
    lines: list[str] = []
    for name, values in sections.items():
        if lines:
            lines.append("")
        lines.append(f"[{name}]")
        for key, value in values.items():
            lines.append(f"{key} = {fmt(value)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_csv(path: str | Path, header: Sequence[str]) -> list[tuple[int, list[str]]]:
    """Rows of a CSV with an exact expected header, paired with their line number."""
    path = Path(path)
    if not path.is_file():
        raise InputError("file not found", path)
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise InputError(f"empty file, expected header {','.join(header)}", path, 1) from None
        if [h.strip() for h in first] != list(header):
            raise InputError(f"expected header {','.join(header)}, got {','.join(first)}", path, 1)
        rows = []
        for row in reader:
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise InputError(f"expected {len(header)} fields, got {len(row)}", path, reader.line_num)
            rows.append((reader.line_num, [cell.strip() for cell in row]))
    return rows


def parse_float(text: str, path: str | Path, line: int, column: int, name: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise InputError(f"{name}: '{text}' is not a number", path, line, column) from None
    if value != value or value in (float("inf"), float("-inf")):
        raise InputError(f"{name}: '{text}' is not finite", path, line, column)
    return value


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
