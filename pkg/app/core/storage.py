import csv
import hashlib
import json
import os
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

from app.core.config import config
from app.core.errors import FormatError
from app.core.logger import logger

PathLike = Union[str, Path]


def canonical_json(data: Any) -> str:
    """Key-sorted, whitespace-free JSON used for hashing."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def stable_hash(data: Any) -> str:
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()


class JSONStorage:
    """Reads and writes JSON documents and exports flat records."""

    def load(self, path: PathLike) -> Any:
        path = Path(path)
        try:
            with open(path, "r", encoding="utf-8") as f:
                return json.load(f)
        except FileNotFoundError:
            raise
        except json.JSONDecodeError as e:
            logger.error(f"Malformed JSON in {path}: {e}")
            raise FormatError(f"{path}: malformed JSON ({e})") from e

    def save(self, data: Any, path: PathLike) -> Path:
        path = Path(path)
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, ensure_ascii=False, indent=2)
            f.write("\n")
        return path

    def export(self, data: List[Dict[str, Any]], output_path: PathLike, file_format: str = "json") -> Path:
        """
        Export records to a file.

        Args:
            data: list of flat dict records
            output_path: target path; the extension is fixed to match the format
            file_format: json, jsonl or csv
        """
        base_path, ext = os.path.splitext(str(output_path))
        wanted = "." + file_format
        if ext != wanted:
            output_path = base_path + wanted
        output_path = Path(output_path)
        output_path.parent.mkdir(parents=True, exist_ok=True)

        if file_format == "jsonl":
            with open(output_path, "w", encoding="utf-8") as f:
                for item in data:
                    f.write(json.dumps(item, ensure_ascii=False) + "\n")
        elif file_format == "csv":
            write_csv(data, output_path)
        elif file_format == "json":
            self.save(data, output_path)
        else:
            raise FormatError(f"unsupported export format: {file_format}")
        logger.debug(f"Exported {len(data)} records to {output_path}")
        return output_path


def write_csv(rows: Iterable[Dict[str, Any]], path: PathLike, fieldnames: Optional[List[str]] = None) -> Path:
    rows = list(rows)
    if fieldnames is None:
        fieldnames = []
        for row in rows:
            for key in row:
                if key not in fieldnames:
                    fieldnames.append(key)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in fieldnames})
    return path


class GoldenStore:
    """Golden outputs under ``<root>/<app>/<name>.json``.

    The first verified run records the payload; later runs must reproduce it exactly.
    """

    def __init__(self, root: Optional[PathLike] = None):
        self.root = Path(root) if root is not None else config.GOLDEN_DIR
        self.storage = JSONStorage()

    def path_for(self, app: str, name: str) -> Path:
        return self.root / app.lower() / f"{name}.json"

    def check_or_record(self, app: str, name: str, payload: Any) -> bool:
        """Return True when the payload matches the stored golden (or was just recorded)."""
        path = self.path_for(app, name)
        if not path.exists():
            self.storage.save(payload, path)
            logger.info(f"Recorded golden output {path}")
            return True
        stored = self.storage.load(path)
        # round-trip through JSON so float repr matches what was stored
        return stored == json.loads(json.dumps(payload))


storage = JSONStorage()
