"""The bundled plateau corpus: ten small MSL services with hard-target manifests."""

from __future__ import annotations

from pathlib import Path

ROOT = Path(__file__).resolve().parent

SERVICES = (
    "hgvs",
    "hashguard",
    "countries",
    "dates",
    "pay",
    "catwatch",
    "languages",
    "hospital",
    "regions",
    "orders",
)


def service_dir(name_or_path) -> Path:
    """A bundled service name, or any directory holding a ``service.json``."""
    p = Path(name_or_path)
    if (p / "service.json").is_file() or p.name == "service.json":
        return p if p.is_dir() else p.parent
    if str(name_or_path) in SERVICES:
        return ROOT / str(name_or_path)
    raise FileNotFoundError(f"no service at {name_or_path!s} and no bundled service of that name")
