import logging
import sys
from typing import IO, Optional, Union

from pythonjsonlogger import jsonlogger

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s %(message)s"


def configure_logging(level: Union[int, str] = logging.WARNING, json_format: bool = False,
                      stream: Optional[IO[str]] = None) -> logging.Handler:
    """Send ``dygan`` log records to ``stream`` (stderr by default).

    With ``json_format`` every record becomes one JSON object, including the
    ``extra`` fields the training loop and benchmark attach.
    """
    if isinstance(level, str):
        level = level.upper()
    handler = logging.StreamHandler(stream or sys.stderr)
    if json_format:
        handler.setFormatter(jsonlogger.JsonFormatter(LOG_FORMAT))
    else:
        handler.setFormatter(logging.Formatter(LOG_FORMAT))

    logger = logging.getLogger("dygan")
    for existing in list(logger.handlers):
        logger.removeHandler(existing)
    logger.addHandler(handler)
    logger.setLevel(level)
    logger.propagate = False
    return handler
