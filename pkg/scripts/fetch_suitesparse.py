"""Download SuiteSparse Matrix Market test matrices (manual, needs network).

    python3 scripts/fetch_suitesparse.py ash608 well1033 --dest data/suitesparse

Files land as DEST/<name>.mtx. Bench runs never fetch anything themselves;
point a plan at the file with ``source = file`` and ``path = ...``.
"""
import argparse
import shutil
import tarfile
import tempfile
import urllib.request
from pathlib import Path

BASE = "https://sparse.tamu.edu/MM"
GROUPS = {
    "ash608": "HB", "ash958": "HB", "ash219": "HB", "ash85": "HB",
    "well1033": "HB", "well1850": "HB", "illc1033": "HB", "illc1850": "HB",
}


def fetch(name, dest, group=None):
    group = group or GROUPS.get(name)
    if group is None:
        raise SystemExit(f"unknown group for {name!r}; pass --group")
    url = f"{BASE}/{group}/{name}.tar.gz"
    dest.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        archive = Path(tmp) / f"{name}.tar.gz"
        print(f"fetching {url}")
        with urllib.request.urlopen(url, timeout=60) as resp, open(archive, "wb") as fh:
            shutil.copyfileobj(resp, fh)
        with tarfile.open(archive) as tar:
            member = next(m for m in tar.getmembers() if m.name.endswith(f"/{name}.mtx"))
            member.name = f"{name}.mtx"
            if hasattr(tarfile, "data_filter"):
                tar.extract(member, dest, filter="data")
            else:
                tar.extract(member, dest)
    return dest / f"{name}.mtx"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("names", nargs="+")
    ap.add_argument("--dest", type=Path, default=Path("data/suitesparse"))
    ap.add_argument("--group", default=None)
    args = ap.parse_args()
    for name in args.names:
        print(fetch(name, args.dest, args.group))


if __name__ == "__main__":
    main()
