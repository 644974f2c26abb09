"""Downloads MovieLens 100K and writes data/ml-100k/u.data.

Tries the GroupLens archive first. If that is unreachable, falls back to
the copy bundled in the RecBole wheel on PyPI (same 100,000 ratings in a
headered tab-separated file).
"""

import io
import json
import sys
import urllib.request
import zipfile
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "data" / "ml-100k" / "u.data"
GROUPLENS = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"
RECBOLE = "https://pypi.org/pypi/recbole/1.2.1/json"


def fetch(url: str) -> bytes:
    with urllib.request.urlopen(url, timeout=60) as r:
        return r.read()


def from_grouplens() -> str:
    with zipfile.ZipFile(io.BytesIO(fetch(GROUPLENS))) as z:
        return z.read("ml-100k/u.data").decode()


def from_recbole() -> str:
    meta = json.loads(fetch(RECBOLE))
    wheel = next(u["url"] for u in meta["urls"] if u["filename"].endswith(".whl"))
    with zipfile.ZipFile(io.BytesIO(fetch(wheel))) as z:
        text = z.read("recbole/dataset_example/ml-100k/ml-100k.inter").decode()
    return "\n".join(text.splitlines()[1:]) + "\n"


def main() -> int:
    if OUT.exists():
        print(f"{OUT} already present")
        return 0
    for source in (from_grouplens, from_recbole):
        try:
            text = source()
            break
        except Exception as e:  # noqa: BLE001
            print(f"{source.__name__} failed: {e}", file=sys.stderr)
    else:
        return 1
    rows = [l for l in text.splitlines() if l.strip()]
    if len(rows) != 100_000:
        print(f"unexpected row count {len(rows)}", file=sys.stderr)
        return 1
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text("\n".join(rows) + "\n")
    print(f"wrote {OUT}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
