import json
from pathlib import Path


def fmt(x) -> str:
    if isinstance(x, (bool, int)) or (hasattr(x, "dtype") and x.dtype.kind in "biu"):
        return str(int(x))
    return format(float(x), ".17g")


def write_csv(path, header, columns) -> None:
    """Comma-separated, '.' decimal, 17 significant digits."""
    lines = [",".join(header)]
    for row in zip(*columns):
        lines.append(",".join(fmt(x) for x in row))
    Path(path).write_text("\n".join(lines) + "\n")


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n")
