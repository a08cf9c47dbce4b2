"""Environment-backed settings"""

import os
import sys
import logging
from pathlib import Path

from dotenv import load_dotenv
from pydantic import BaseModel, Field

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)

DEFAULT_BABI_URL = "https://s3.amazonaws.com/text-datasets/babi_tasks_1-20_v1-2.tar.gz"

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


class Settings(BaseModel):
    """Process-wide defaults; every field can be overridden by a CLI flag"""
    log_level: str = "INFO"
    workers: int = Field(default=4, ge=1)
    data_dir: Path = Path("data/babi/en")
    babi_url: str = DEFAULT_BABI_URL
    download_timeout: float = Field(default=60.0, gt=0)

    @classmethod
    def from_env(cls) -> "Settings":
        """Read settings from HOPGATE_* environment variables"""
        return cls(
            log_level=os.getenv("HOPGATE_LOG_LEVEL", "INFO").upper(),
            workers=int(os.getenv("HOPGATE_WORKERS", "4")),
            data_dir=Path(os.getenv("HOPGATE_DATA_DIR", "data/babi/en")),
            babi_url=os.getenv("HOPGATE_BABI_URL", DEFAULT_BABI_URL),
            download_timeout=float(os.getenv("HOPGATE_DOWNLOAD_TIMEOUT", "60")),
        )


def configure_logging(level: str) -> None:
    """Send log records to stderr; stdout carries command output"""
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format=LOG_FORMAT,
        stream=sys.stderr,
    )
