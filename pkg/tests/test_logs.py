import io
import json
import logging

import pytest

from dygan.logs import configure_logging


@pytest.fixture
def dygan_logger():
    logger = logging.getLogger("dygan")
    saved = (list(logger.handlers), logger.level, logger.propagate)
    yield logger
    logger.handlers, logger.propagate = saved[0], saved[2]
    logger.setLevel(saved[1])


def test_json_records_carry_extra_fields(dygan_logger):
    stream = io.StringIO()
    configure_logging("info", json_format=True, stream=stream)
    logging.getLogger("dygan.training").info("training progress", extra={"step": 10, "L_recon": 0.5})
    record = json.loads(stream.getvalue())
    assert record["message"] == "training progress"
    assert record["levelname"] == "INFO"
    assert record["name"] == "dygan.training"
    assert (record["step"], record["L_recon"]) == (10, 0.5)


def test_plain_records(dygan_logger):
    stream = io.StringIO()
    configure_logging(logging.DEBUG, stream=stream)
    logging.getLogger("dygan.bench").debug("benchmarked length")
    assert "DEBUG dygan.bench benchmarked length" in stream.getvalue()


def test_level_filters(dygan_logger):
    stream = io.StringIO()
    configure_logging("WARNING", stream=stream)
    logging.getLogger("dygan.model").info("saved checkpoint")
    assert stream.getvalue() == ""


def test_reconfiguring_replaces_the_handler(dygan_logger):
    first = configure_logging(stream=io.StringIO())
    second = configure_logging(stream=io.StringIO())
    assert dygan_logger.handlers == [second]
    assert first not in dygan_logger.handlers
    assert dygan_logger.propagate is False
