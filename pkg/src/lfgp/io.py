"""Trial CSV ingestion, result CSVs and the binary chain container.

Trial files are named ``trial_<idx>_<label>.csv`` and hold a header row
``t,ch1,...,chp`` followed by one row per sample, ``t`` in seconds.

Chain files are laid out as::

    magic   8 bytes   b"LFGPCHN\\0"
    hlen    uint32    little-endian length of the JSON header
    header  hlen      UTF-8 JSON: version, dims, seed, config hash, arrays
    arrays            raw little-endian float64, in header order
"""

import csv
import json
import os
import re
import shutil
import struct
import tempfile
from pathlib import Path

import numpy as np

from .data import Trial, TrialSet
from .errors import ConfigError, DataError, HashMismatch, ParseError, RaggedTrials, VersionMismatch
from .sampler import ChainDraws

TRIAL_RE = re.compile(r"^trial_(\d+)_(.+)\.csv$")
CHAIN_MAGIC = b"LFGPCHN\0"
CHAIN_VERSION = 1
_ARRAYS = ("F", "B", "sigma2", "theta", "log_posts", "accept_rate_theta", "time_index", "lam")


# ---------------------------------------------------------------------------
# trials


def _read_trial(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    # leading '#' lines carry run metadata
    skip = 0
    while skip < len(rows) and rows[skip] and rows[skip][0].startswith("#"):
        skip += 1
    first = skip + 1  # 1-based line number of the header
    if skip == len(rows):
        raise ParseError("empty file, expected header t,ch1,...", path, line=first)
    header = [h.strip() for h in rows[skip]]
    p = len(header) - 1
    if p < 1 or header[0] != "t" or header[1:] != [f"ch{j}" for j in range(1, p + 1)]:
        raise ParseError("header must be t,ch1,...,chp", path, line=first)
    body = rows[skip + 1 :]
    data = np.empty((len(body), p + 1))
    for k, row in enumerate(body):
        if len(row) != p + 1:
            raise ParseError(f"expected {p + 1} fields, found {len(row)}", path, line=first + k + 1)
        try:
            data[k] = [float(v) for v in row]
        except ValueError as exc:
            raise ParseError(str(exc), path, line=first + k + 1) from exc
    if data.shape[0] < 2:
        raise ParseError("need at least two samples", path, line=len(rows))
    if not np.all(np.isfinite(data)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(data), axis=1))[0])
        raise ParseError("non-finite value", path, line=first + bad + 1)
    return data


def load_trials(path, sample_rate_hz=None):
    """Read every ``trial_<idx>_<label>.csv`` in a directory, ordered by index.

    The sample rate comes from the ``t`` column unless given explicitly.
    """
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"{root} is not a directory")
    found = []
    for f in root.iterdir():
        m = TRIAL_RE.match(f.name)
        if m:
            found.append((int(m.group(1)), m.group(2), f))
    if not found:
        raise DataError(f"no trial_<idx>_<label>.csv files in {root}")
    found.sort(key=lambda x: x[0])
    idx = [i for i, _, _ in found]
    if len(set(idx)) != len(idx):
        raise DataError("duplicate trial indices")
    trials = []
    shapes = set()
    for _, label, f in found:
        data = _read_trial(f)
        shapes.add(data[:, 1:].shape)
        if len(shapes) > 1:
            raise RaggedTrials(f"{f.name} has shape {data[:, 1:].shape}, earlier trials {sorted(shapes)}")
        rate = sample_rate_hz
        if rate is None:
            dt = np.diff(data[:, 0])
            if not np.all(dt > 0):
                raise ParseError("t column must increase strictly", f)
            rate = 1.0 / float(np.median(dt))
        trials.append(Trial(data[:, 1:], rate, label))
    return TrialSet(trials)


def write_trials(path, trials, meta):
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    width = max(3, len(str(len(trials) - 1)))
    for i, tr in enumerate(trials):
        t = np.arange(tr.T) / tr.sample_rate_hz
        cols = ["t"] + [f"ch{j}" for j in range(1, tr.p + 1)]
        write_csv(root / f"trial_{i:0{width}d}_{tr.label or 'none'}.csv", cols, np.column_stack([t, tr.samples]), meta)


# ---------------------------------------------------------------------------
# CSV outputs


def fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def meta_line(meta):
    return "# " + ", ".join(f"{k}={v}" for k, v in meta.items())


def write_csv(path, columns, rows, meta=None):
    """Write rows under a ``# seed=..., config_hash=...`` comment line."""
    with open(path, "w", newline="") as fh:
        if meta:
            fh.write(meta_line(meta) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_csv(path):
    """Rows of a result CSV as dicts of strings, plus the parsed header meta."""
    meta = {}
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    if lines and lines[0].startswith("#"):
        for part in lines[0][1:].split(","):
            k, _, v = part.strip().partition("=")
            meta[k] = v
        lines = lines[1:]
    return list(csv.DictReader(lines)), meta


class OutputDir:
    """Stage files in a scratch directory and move them in on success.

    Used as a context manager; on an exception nothing reaches ``final``.
    """

    def __init__(self, final):
        self.final = Path(final)
        self.stage = None

    def __enter__(self):
        self.final.mkdir(parents=True, exist_ok=True)
        self.stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.final))
        return self

    def path(self, name):
        p = self.stage / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                for src in sorted(self.stage.rglob("*")):
                    if src.is_file():
                        dst = self.final / src.relative_to(self.stage)
                        dst.parent.mkdir(parents=True, exist_ok=True)
                        os.replace(src, dst)
        finally:
            shutil.rmtree(self.stage, ignore_errors=True)
        return False


# ---------------------------------------------------------------------------
# chains


def save_chain(path, draws, config_hash):
    arrays = {name: getattr(draws, name) for name in _ARRAYS if getattr(draws, name) is not None}
    header = {
        "version": CHAIN_VERSION,
        "dims": {"d": len(draws), "n": draws.n, "T_w": draws.T_w, "q": draws.q, "r": draws.r},
        "seed": int(draws.seed),
        "config_hash": config_hash,
        "horseshoe_factors": [int(k) for k in draws.horseshoe_factors],
        "meta": draws.meta,
        "arrays": [[name, list(np.shape(a))] for name, a in arrays.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHAIN_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_chain(path, config_hash=None):
    """Read a chain file; verify the config hash when one is given."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < len(CHAIN_MAGIC) + 4:
        raise ParseError("file shorter than the chain preamble", path, offset=len(buf))
    if buf[: len(CHAIN_MAGIC)] != CHAIN_MAGIC:
        raise ParseError("not a chain file (bad magic)", path, offset=0)
    pos = len(CHAIN_MAGIC)
    (hlen,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    if len(buf) < pos + hlen:
        raise ParseError(f"header truncated, expected {hlen} bytes", path, offset=len(buf))
    try:
        header = json.loads(buf[pos : pos + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"unreadable header: {exc}", path, offset=pos) from exc
    pos += hlen
    if header.get("version") != CHAIN_VERSION:
        raise VersionMismatch(f"chain version {header.get('version')}, this build reads {CHAIN_VERSION}")
    if config_hash is not None and header["config_hash"] != config_hash:
        raise HashMismatch(f"chain was written under config {header['config_hash']}, current config is {config_hash}")
    arrays = {}
    for name, shape in header["arrays"]:
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if len(buf) < pos + nbytes:
            raise ParseError(f"array {name!r} truncated", path, offset=len(buf))
        arrays[name] = np.frombuffer(buf, dtype="<f8", count=nbytes // 8, offset=pos).reshape(shape).astype(float)
        pos += nbytes
    if pos != len(buf):
        raise ParseError(f"{len(buf) - pos} trailing bytes", path, offset=pos)
    dims = header["dims"]
    draws = ChainDraws(
        F=arrays["F"],
        B=arrays["B"],
        sigma2=arrays["sigma2"],
        theta=arrays["theta"],
        log_posts=arrays["log_posts"],
        accept_rate_theta=arrays["accept_rate_theta"],
        time_index=arrays["time_index"],
        lam=arrays.get("lam"),
        horseshoe_factors=tuple(header["horseshoe_factors"]),
        seed=header["seed"],
        meta=header["meta"],
    )
    if (len(draws), draws.n, draws.T_w, draws.q, draws.r) != (dims["d"], dims["n"], dims["T_w"], dims["q"], dims["r"]):
        raise ParseError("array shapes disagree with header dims", path, offset=len(CHAIN_MAGIC) + 4)
    return draws, header


def require_path(value, what):
    if not value:
        raise ConfigError(f"{what} is not set")
    return value
