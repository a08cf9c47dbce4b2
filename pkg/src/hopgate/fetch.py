"""Download and unpack the public bAbI tarball"""

import asyncio
import logging
import tarfile
from pathlib import Path
from typing import Optional

import httpx

from .config import DEFAULT_BABI_URL
from .errors import DatasetDownloadError

logger = logging.getLogger(__name__)


class BabiFetcher:
    """Async downloader for the bAbI v1.2 archive"""

    def __init__(self, url: str = DEFAULT_BABI_URL, timeout: float = 60.0,
                 transport: Optional[httpx.AsyncBaseTransport] = None):
        """
        Initialize fetcher

        Args:
            url: Archive URL
            timeout: Per-request timeout in seconds
            transport: Replacement transport, used by tests
        """
        self.url = url
        self.client = httpx.AsyncClient(timeout=timeout, follow_redirects=True, transport=transport)

    async def download(self, dest: Path) -> Path:
        """
        Stream the archive to dest

        Raises:
            DatasetDownloadError: HTTP error status or network failure
        """
        dest = Path(dest)
        dest.parent.mkdir(parents=True, exist_ok=True)
        partial = dest.with_name(dest.name + ".part")
        try:
            async with self.client.stream("GET", self.url) as response:
                response.raise_for_status()
                with open(partial, "wb") as f:
                    async for chunk in response.aiter_bytes():
                        f.write(chunk)
            partial.replace(dest)
            logger.info(f"Downloaded {self.url} to {dest}")
            return dest

        except httpx.HTTPStatusError as e:
            error_msg = f"Failed to download dataset (HTTP {e.response.status_code}): {self.url}"
            logger.error(error_msg)
            raise DatasetDownloadError(error_msg) from e
        except httpx.RequestError as e:
            error_msg = f"Failed to download dataset (Network error): {str(e)}"
            logger.error(error_msg)
            raise DatasetDownloadError(error_msg) from e
        finally:
            if partial.exists():
                partial.unlink()

    async def close(self) -> None:
        await self.client.aclose()


def extract_archive(archive: Path, out_dir: Path) -> Path:
    """
    Unpack the tarball and return the directory holding qa*_train.txt files for en

    Raises:
        DatasetDownloadError: Corrupt archive or no English task files inside
    """
    out_dir = Path(out_dir)
    try:
        with tarfile.open(archive, "r:gz") as tar:
            if hasattr(tarfile, "data_filter"):
                tar.extractall(out_dir, filter="data")
            else:
                tar.extractall(out_dir)
    except (tarfile.TarError, OSError) as e:
        raise DatasetDownloadError(f"Could not unpack {archive}: {e}") from e

    for candidate in sorted(out_dir.rglob("qa1_*_train.txt")):
        if candidate.parent.name == "en":
            logger.info(f"bAbI tasks available in {candidate.parent}")
            return candidate.parent
    raise DatasetDownloadError(f"No en/qa1_*_train.txt found in {archive}")


async def fetch_babi_async(url: str, out_dir: Path, timeout: float = 60.0,
                           transport: Optional[httpx.AsyncBaseTransport] = None) -> Path:
    fetcher = BabiFetcher(url, timeout, transport)
    try:
        archive = await fetcher.download(Path(out_dir) / "babi.tar.gz")
    finally:
        await fetcher.close()
    return extract_archive(archive, out_dir)


def fetch_babi(url: str, out_dir: Path, timeout: float = 60.0) -> Path:
    """Download and extract; returns the English task directory"""
    return asyncio.run(fetch_babi_async(url, out_dir, timeout))
