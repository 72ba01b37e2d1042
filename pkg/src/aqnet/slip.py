"""RFC 1055 SLIP framing as used by tunslip6 on the border-router serial line."""

from __future__ import annotations

import re

END = 0xC0
ESC = 0xDB
ESC_END = 0xDC
ESC_ESC = 0xDD

_END = bytes([END])
_BAD_ESCAPE = re.compile(rb"\xdb(?![\xdc\xdd])", re.DOTALL)


def slip_encode(payload: bytes) -> bytes:
    """Frame ``payload`` with a leading and trailing END byte."""
    if not payload:
        raise ValueError("SLIP payload must be non-empty")
    body = bytes(payload).replace(b"\xdb", b"\xdb\xdd").replace(b"\xc0", b"\xdb\xdc")
    return _END + body + _END


class SlipDecoder:
    """Streaming decoder; feed it arbitrary chunks of the serial byte stream.

    A frame with an invalid escape is dropped whole and counted in
    ``malformed``; decoding restarts cleanly at the next END.
    """

    def __init__(self) -> None:
        self._pending = bytearray()
        self.frames = 0
        self.malformed = 0

    def feed(self, chunk: bytes) -> list[bytes]:
        self._pending += chunk
        out = []
        start = 0
        pending = self._pending
        while True:
            end = pending.find(END, start)
            if end < 0:
                break
            raw = bytes(pending[start:end])
            start = end + 1
            if not raw:
                continue
            # also catches an ESC that ends the frame
            if _BAD_ESCAPE.search(raw):
                self.malformed += 1
                continue
            out.append(raw.replace(b"\xdb\xdc", b"\xc0").replace(b"\xdb\xdd", b"\xdb"))
            self.frames += 1
        del pending[:start]
        return out

    @property
    def residual(self) -> bytes:
        """Bytes of the current, not yet terminated frame."""
        return bytes(self._pending)


def slip_decode(stream: bytes, decoder: SlipDecoder | None = None) -> tuple[list[bytes], SlipDecoder]:
    decoder = decoder or SlipDecoder()
    return decoder.feed(stream), decoder
