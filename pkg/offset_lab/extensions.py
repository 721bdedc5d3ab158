import logging
import sys

logger = logging.getLogger('offset_lab')


def configure_logging(level='INFO'):
    # Single stderr handler; stdout is reserved for result payloads
    if not logger.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter('%(asctime)s %(levelname)s [%(name)s] %(message)s'))
        logger.addHandler(handler)
    logger.setLevel(getattr(logging, str(level).upper(), logging.INFO))
    return logger
