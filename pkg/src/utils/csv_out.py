import os

import pandas as pd

# 17 significant digits round-trips every double
FLOAT_FORMAT = "%.17g"


def write_csv(frame: pd.DataFrame, out_dir, name, columns=None):
    """Write `frame` with a fixed column order; returns the written path."""
    os.makedirs(out_dir, exist_ok=True)
    if columns is not None:
        frame = frame.reindex(columns=list(columns))
    path = os.path.join(out_dir, name)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path
