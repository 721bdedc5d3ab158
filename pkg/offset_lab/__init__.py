import os
from dataclasses import dataclass

from dotenv import load_dotenv

from .extensions import configure_logging

load_dotenv()  # This will load variables from .env into the environment


@dataclass(frozen=True)
class LabSettings:
    """Process-level settings read from the environment.

    None of these change numeric results; they only control logging and how
    work is spread across processes.
    """
    log_level: str = 'INFO'
    workers: int = 1
    mc_chunk: int = 4096


def create_lab(**overrides):
    settings = LabSettings(
        log_level=os.getenv('OFFSET_LAB_LOG_LEVEL', 'INFO'),
        workers=int(os.getenv('OFFSET_LAB_WORKERS', '1')),
        mc_chunk=int(os.getenv('OFFSET_LAB_MC_CHUNK', '4096')),
    )
    if overrides:
        settings = LabSettings(**{**settings.__dict__, **overrides})

    configure_logging(settings.log_level)
    return settings
