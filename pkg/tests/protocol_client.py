"""Minimal raw-socket speaker for the line protocol, used by server tests."""

from __future__ import annotations

import socket


class ProtoClient:
    def __init__(self, port: int, host: str = "127.0.0.1", timeout: float = 30.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.f = self.sock.makefile("rwb")

    def send_raw(self, data: bytes) -> None:
        self.f.write(data)
        self.f.flush()

    def read_line(self) -> bytes:
        return self.f.readline()

    def cmd(self, line: str) -> str:
        """Send one command, return the text response without newline."""
        self.send_raw(line.encode() + b"\n")
        return self.read_line().decode().rstrip("\n")

    def cmd_binary(self, line: str) -> tuple[str, bytes]:
        """Send an image command; returns (header line, payload bytes)."""
        self.send_raw(line.encode() + b"\n")
        header = self.read_line().decode().rstrip("\n")
        if header.startswith("ERR"):
            return header, b""
        parts = header.split()
        nbytes = int(parts[4])
        payload = self.f.read(nbytes)
        return header, payload

    def close(self) -> None:
        try:
            self.f.close()
        finally:
            self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
