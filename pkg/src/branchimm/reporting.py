"""Report writers: CSV and JSON-lines with provenance comment headers
(tool version, config hash, master seed, UTC timestamp).  Bodies are fully
deterministic for a fixed seed; only the timestamp line varies between runs.
"""
from __future__ import annotations

import json
import subprocess
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

from . import __version__

_GIT_SUFFIX = None


def tool_version() -> str:
    """Package version plus the repository revision when one is available."""
    global _GIT_SUFFIX
    if _GIT_SUFFIX is None:
        suffix = ""
        try:
            out = subprocess.run(
                ["git", "describe", "--always", "--dirty"],
                cwd=Path(__file__).resolve().parent, capture_output=True,
                text=True, timeout=5)
            if out.returncode == 0 and out.stdout.strip():
                suffix = "+g" + out.stdout.strip()
        except (OSError, subprocess.SubprocessError):
            suffix = ""
        _GIT_SUFFIX = suffix
    return __version__ + _GIT_SUFFIX


def utc_timestamp() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def provenance_lines(config_hash: str, master_seed: int,
                     extra: Sequence[str] = ()) -> list[str]:
    lines = [
        f"# tool: branchimm {tool_version()}",
        f"# config_hash: {config_hash or 'none'}",
        f"# master_seed: {master_seed}",
        f"# timestamp: {utc_timestamp()}",
    ]
    lines.extend(f"# {line}" for line in extra)
    return lines


def fmt_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence],
              config_hash: str = "", master_seed: int = 0,
              extra: Sequence[str] = ()) -> Path:
    """CSV with '.' decimals, LF endings, UTF-8, no quoting (no field may
    contain a comma)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = provenance_lines(config_hash, master_seed, extra)
    lines.append(",".join(columns))
    for row in rows:
        cells = [fmt_value(v) for v in row]
        for cell in cells:
            if "," in cell:
                raise ValueError(f"CSV cell contains a comma: {cell!r}")
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    return path


def write_jsonl(path, rows: Iterable[dict], config_hash: str = "",
                master_seed: int = 0) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = provenance_lines(config_hash, master_seed)
    for row in rows:
        lines.append(json.dumps(row, sort_keys=True))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    return path


def read_jsonl(path) -> list[dict]:
    """Parse a JSON-lines report, skipping the comment header."""
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#"):
            continue
        out.append(json.loads(line))
    return out


def csv_body(path) -> str:
    """File content with the timestamp header line removed; two runs with
    the same seed must agree byte-for-byte on this."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return "\n".join(line for line in lines if not line.startswith("# timestamp:"))


def render_table(columns: Sequence[str], rows: Sequence[Sequence]) -> str:
    """Plain fixed-width table for terminal summaries."""
    cells = [[fmt_value(v) for v in row] for row in rows]
    widths = [len(c) for c in columns]
    for row in cells:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    def line(row):
        return "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row))
    out = [line(columns), line(["-" * w for w in widths])]
    out.extend(line(row) for row in cells)
    return "\n".join(out)
