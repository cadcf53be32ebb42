#!/usr/bin/env python3
"""Download and prepare the public datasets used by the acceptance suite.

Writes into the data directory (``$SYNAUDIT_DATA_DIR`` or ``~/.cache/synaudit``):

* ``adult.csv`` and ``adult.schema.json``: 47,876 rows and 14 columns.
* ``nursery.csv`` and ``nursery.schema.json``: 12,958 rows and 9 columns.

Raw files are checked against pinned SHA-256 digests before use. With
``--from-dir`` the raw files are read from a local directory instead of the
network.
"""

import argparse
import csv
import hashlib
import json
import os
import shutil
import sys
import urllib.request
from pathlib import Path

UCI = "https://archive.ics.uci.edu/ml/machine-learning-databases"

RAW_FILES = {
    "adult.data": (
        f"{UCI}/adult/adult.data",
        "5b00264637dbfec36bdeaab5676b0b309ff9eb788d63554ca0a249491c86603d",
    ),
    "adult.test": (
        f"{UCI}/adult/adult.test",
        "a2a9044bc167a35b2361efbabec64e89d69ce82d9790d2980119aac5fd7e9c05",
    ),
    # No digest has been recorded for this file yet; the computed one is printed.
    "nursery.data": (f"{UCI}/nursery/nursery.data", None),
}

ADULT_COLUMNS = [
    ("age", "numeric"),
    ("workclass", "categorical"),
    ("fnlwgt", "numeric"),
    ("education", None),
    ("education_num", "numeric"),
    ("marital_status", "categorical"),
    ("occupation", "categorical"),
    ("relationship", "categorical"),
    ("race", "categorical"),
    ("sex", "categorical"),
    ("capital_gain", "numeric"),
    ("capital_loss", "numeric"),
    ("hours_per_week", "numeric"),
    ("native_country", "categorical"),
    ("income", "categorical"),
]

NURSERY_COLUMNS = [
    "parents",
    "has_nurs",
    "form",
    "children",
    "housing",
    "finance",
    "social",
    "health",
    "class",
]


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def obtain(name: str, raw_dir: Path, from_dir: Path | None) -> Path:
    url, expected = RAW_FILES[name]
    target = raw_dir / name
    if from_dir is not None:
        source = from_dir / name
        if not source.is_file():
            sys.exit(f"error: {source} not found")
        shutil.copyfile(source, target)
    elif not target.is_file():
        print(f"downloading {url}")
        urllib.request.urlretrieve(url, target)
    digest = sha256(target)
    if expected is None:
        print(f"warning: {name} has no pinned digest; computed sha256 {digest}")
    elif digest != expected:
        target.unlink()
        sys.exit(f"error: {name} sha256 {digest} does not match {expected}")
    return target


def read_rows(path: Path) -> list[list[str]]:
    rows = []
    with path.open() as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("|"):
                continue
            rows.append([cell.strip() for cell in line.split(",")])
    return rows


def write_table(out_dir: Path, stem: str, header, kinds, rows) -> None:
    with (out_dir / f"{stem}.csv").open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    schema = []
    for j, (name, kind) in enumerate(zip(header, kinds)):
        col = {"name": name, "kind": kind, "missing_policy": "reject"}
        if kind == "categorical":
            col["categories"] = sorted({r[j] for r in rows})
        schema.append(col)
    (out_dir / f"{stem}.schema.json").write_text(json.dumps(schema, indent=2) + "\n")
    print(f"wrote {stem}.csv: {len(rows)} rows x {len(header)} columns")


def prepare_adult(train: Path, test: Path, out_dir: Path) -> None:
    keep = [j for j, (_, kind) in enumerate(ADULT_COLUMNS) if kind is not None]
    occupation = [name for name, _ in ADULT_COLUMNS].index("occupation")
    income = len(ADULT_COLUMNS) - 1
    rows = read_rows(train)
    for r in read_rows(test):
        if r[occupation] == "?":
            continue
        r[income] = r[income].rstrip(".")
        rows.append(r)
    header = [ADULT_COLUMNS[j][0] for j in keep]
    kinds = [ADULT_COLUMNS[j][1] for j in keep]
    write_table(out_dir, "adult", header, kinds, [[r[j] for j in keep] for r in rows])


def prepare_nursery(raw: Path, out_dir: Path) -> None:
    rows = [r for r in read_rows(raw) if r[-1] != "recommend"]
    write_table(out_dir, "nursery", NURSERY_COLUMNS, ["categorical"] * len(NURSERY_COLUMNS), rows)


def main() -> None:
    default_dir = os.environ.get("SYNAUDIT_DATA_DIR", str(Path.home() / ".cache" / "synaudit"))
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--dest", type=Path, default=Path(default_dir), help="output directory")
    parser.add_argument("--from-dir", type=Path, help="read raw files from this directory")
    parser.add_argument("--only", choices=["adult", "nursery"], action="append", help="limit to one dataset")
    args = parser.parse_args()

    wanted = args.only or ["adult", "nursery"]
    raw_dir = args.dest / "raw"
    raw_dir.mkdir(parents=True, exist_ok=True)
    failed = []
    for name in wanted:
        try:
            if name == "adult":
                prepare_adult(
                    obtain("adult.data", raw_dir, args.from_dir),
                    obtain("adult.test", raw_dir, args.from_dir),
                    args.dest,
                )
            else:
                prepare_nursery(obtain("nursery.data", raw_dir, args.from_dir), args.dest)
        except (OSError, SystemExit) as e:
            print(f"{name}: {e}", file=sys.stderr)
            failed.append(name)
    if failed:
        sys.exit(f"could not prepare: {', '.join(failed)}")


if __name__ == "__main__":
    main()
