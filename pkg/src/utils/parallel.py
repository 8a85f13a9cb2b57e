import os

from dotenv import load_dotenv
from joblib import Parallel, delayed

ENV_THREADS = "TUNNELSHOCK_THREADS"


def resolve_threads(threads=None):
    """--threads wins, then TUNNELSHOCK_THREADS (a .env file is honoured), then 1."""
    if threads:
        return max(1, int(threads))
    load_dotenv()
    raw = os.environ.get(ENV_THREADS, "").strip()
    try:
        return max(1, int(raw)) if raw else 1
    except ValueError:
        return 1


def ordered_map(func, items, threads=1):
    """Map `func` over `items`; output order always follows `items`."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    return Parallel(n_jobs=threads, prefer="threads")(delayed(func)(item) for item in items)
