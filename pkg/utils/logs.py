# utils/logs.py
import logging
import sys

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(level: str | int = "INFO") -> logging.Logger:
    """
    One stream handler on the root logger.
    Calling it again only changes the level.
    """
    if isinstance(level, str):
        resolved = logging.getLevelName(level.upper())
        if not isinstance(resolved, int):
            raise ValueError(f"unknown log level {level!r}")
        level = resolved
    root = logging.getLogger()
    if not any(getattr(h, "_cycflow", False) for h in root.handlers):
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._cycflow = True
        root.addHandler(handler)
    root.setLevel(level)
    return root


def progress_enabled() -> bool:
    return logging.getLogger().getEffectiveLevel() <= logging.INFO
