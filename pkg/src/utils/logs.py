import logging
import os

from dotenv import load_dotenv

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
ENV_LOG_LEVEL = "TUNNELSHOCK_LOG_LEVEL"


def setup_logging(level=None):
    """Configure the root logger once; `level` beats the environment."""
    load_dotenv()
    level = level or os.environ.get(ENV_LOG_LEVEL, "WARNING")
    root = logging.getLogger()
    if not root.handlers:
        logging.basicConfig(format=LOG_FORMAT)
    root.setLevel(str(level).upper())
    return root
