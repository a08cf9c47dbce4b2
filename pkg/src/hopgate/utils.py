"""Small helpers shared by the CLI and report writers"""

import os
import tempfile
from pathlib import Path


def atomic_write_text(path: Path, text: str) -> None:
    """Write text to a sibling temp file, then rename it over path"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def parse_task_list(text: str) -> list[int]:
    """
    Parse "1,2,5-7" into [1, 2, 5, 6, 7]

    Raises:
        ValueError: Malformed entry or a task id outside 1..20
    """
    tasks: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = (int(x) for x in part.split("-", 1))
            tasks.extend(range(lo, hi + 1))
        else:
            tasks.append(int(part))
    if not tasks or any(t < 1 or t > 20 for t in tasks):
        raise ValueError(f"Task ids must be in 1..20: {text!r}")
    return sorted(set(tasks))
