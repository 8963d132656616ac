import os
import sys
import hashlib
import logging

import pandas as pd
import requests
from requests.adapters import HTTPAdapter


# ================= CONFIG =================

LOGGER_NAME = "diffmigrate"
LOG_FORMAT = "[%(asctime)s] %(levelname)s %(message)s"
LOG_DATEFMT = "%Y-%m-%d %H:%M:%S"

USER_AGENT = "diffmigrate"


# ================= LOGGING =================

def setup_logging(verbose=False):
    """Route every diffmigrate logger to stderr with the timestamped one-line format."""
    root = logging.getLogger(LOGGER_NAME)
    root.setLevel(logging.DEBUG if verbose else logging.INFO)

    # one handler, bound to the current stderr
    for h in [h for h in root.handlers if getattr(h, "_diffmigrate", False)]:
        root.removeHandler(h)

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT, LOG_DATEFMT))
    handler._diffmigrate = True
    root.addHandler(handler)

    return root


def get_logger(name):
    return logging.getLogger(f"{LOGGER_NAME}.{name}")


# ================= HTTP =================

def make_session(pool_size=4):
    """
    Persistent session, one small connection pool per host.
    Retries are NOT done by the adapter: callers retry selectively.
    """
    session = requests.Session()
    adapter = HTTPAdapter(
        pool_connections=pool_size,
        pool_maxsize=pool_size,
        max_retries=0,
    )
    session.mount("https://", adapter)
    session.mount("http://", adapter)
    session.headers.update({
        "Content-Type": "application/json",
        "Accept": "application/json",
        "User-Agent": USER_AGENT,
    })
    return session


# ================= PERSISTENCE =================

def append_csv(path, row, columns):
    """Append one row; the header is written only when the file is new."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    pd.DataFrame([row])[columns].to_csv(
        path,
        mode="a",
        header=not os.path.exists(path),
        index=False,
    )


def write_frame(df, path, sep=","):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    df.to_csv(path, index=False, sep=sep, lineterminator="\n")


# ================= HASHING =================

def sha256_text(*parts):
    h = hashlib.sha256()
    for part in parts:
        h.update(part.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()
