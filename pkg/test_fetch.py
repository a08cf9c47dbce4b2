"""
Dataset download tests against a mocked HTTP transport
"""

import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent / "src"))

import io
import tarfile

import httpx
import pytest

from hopgate.errors import DatasetDownloadError
from hopgate.fetch import extract_archive, fetch_babi_async

URL = "https://example.invalid/babi.tar.gz"
STORY = "1 Mary went to the garden.\n2 Where is Mary?\tgarden\t1\n"


def _archive(files: dict[str, str]) -> bytes:
    buffer = io.BytesIO()
    with tarfile.open(fileobj=buffer, mode="w:gz") as tar:
        for name, text in files.items():
            data = text.encode("utf-8")
            info = tarfile.TarInfo(name)
            info.size = len(data)
            tar.addfile(info, io.BytesIO(data))
    return buffer.getvalue()


def _transport(status: int, content: bytes = b"") -> httpx.MockTransport:
    def handler(request: httpx.Request) -> httpx.Response:
        assert str(request.url) == URL
        return httpx.Response(status, content=content)
    return httpx.MockTransport(handler)


@pytest.mark.asyncio
async def test_fetch_and_extract(tmp_path):
    archive = _archive({
        "tasks_1-20_v1-2/en/qa1_single-supporting-fact_train.txt": STORY,
        "tasks_1-20_v1-2/en/qa1_single-supporting-fact_test.txt": STORY,
        "tasks_1-20_v1-2/hn/qa1_single-supporting-fact_train.txt": STORY,
    })
    en = await fetch_babi_async(URL, tmp_path, transport=_transport(200, archive))
    assert en.name == "en"
    assert (en / "qa1_single-supporting-fact_train.txt").read_text() == STORY
    assert not (tmp_path / "babi.tar.gz.part").exists()


@pytest.mark.asyncio
async def test_http_error(tmp_path):
    with pytest.raises(DatasetDownloadError) as exc_info:
        await fetch_babi_async(URL, tmp_path, transport=_transport(404))
    assert "404" in str(exc_info.value)
    assert not (tmp_path / "babi.tar.gz").exists()


@pytest.mark.asyncio
async def test_network_error(tmp_path):
    def handler(request: httpx.Request) -> httpx.Response:
        raise httpx.ConnectError("connection refused", request=request)

    with pytest.raises(DatasetDownloadError):
        await fetch_babi_async(URL, tmp_path, transport=httpx.MockTransport(handler))


def test_archive_without_english_tasks(tmp_path):
    archive = tmp_path / "babi.tar.gz"
    archive.write_bytes(_archive({"other/readme.txt": "nothing here"}))
    with pytest.raises(DatasetDownloadError):
        extract_archive(archive, tmp_path / "out")


def test_corrupt_archive(tmp_path):
    archive = tmp_path / "babi.tar.gz"
    archive.write_bytes(b"not a tarball")
    with pytest.raises(DatasetDownloadError):
        extract_archive(archive, tmp_path / "out")
