from tenacity import retry, stop_after_attempt, wait_exponential, retry_if_exception_type
from app.config import settings

TRANSIENT_IO_ERRORS = (BlockingIOError, InterruptedError, TimeoutError)


def io_retry(max_attempts: int = settings.IO_RETRY_ATTEMPTS,
             min_wait: float = settings.IO_RETRY_MIN_WAIT,
             max_wait: float = settings.IO_RETRY_MAX_WAIT):
    return retry(
        stop=stop_after_attempt(max_attempts),
        wait=wait_exponential(multiplier=min_wait, min=min_wait, max=max_wait),
        retry=retry_if_exception_type(TRANSIENT_IO_ERRORS),
        reraise=True,
    )


@io_retry()
def read_bytes(path: str) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


@io_retry()
def write_bytes(path: str, payload: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(payload)
