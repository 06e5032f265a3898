"""Deterministic run artifacts: CSV tables and a plain-text manifest.

Identical configuration and seed must reproduce identical bytes, so all
floats are printed with 17 significant digits, rows keep a fixed order,
line endings are LF, and nothing time- or host-dependent is written.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

__all__ = ["format_value", "write_csv", "RunManifest", "TOOL_ID"]

TOOL_ID = "heattrack 0.1.0"


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def write_csv(path: str, header, rows) -> str:
    """Write rows deterministically; returns the content sha256."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_value(v) for v in row))
    payload = ("\n".join(lines) + "\n").encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(payload)
    return hashlib.sha256(payload).hexdigest()


@dataclass
class RunManifest:
    """Key-value record of one run: config digest, outputs, assertions."""

    command: str
    config_digest: str
    seed: int
    tolerances: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)      # filename -> sha256
    assertions: dict = field(default_factory=dict)   # name -> (ok, value)
    status: str = "ok"

    def record_output(self, name: str, digest: str):
        self.outputs[name] = digest

    def record_assertion(self, name: str, ok: bool, value: float):
        self.assertions[name] = (bool(ok), float(value))

    @property
    def all_passed(self) -> bool:
        return all(ok for ok, _ in self.assertions.values())

    def render(self) -> str:
        lines = [
            f"tool={TOOL_ID}",
            f"command={self.command}",
            f"config_sha256={self.config_digest}",
            f"seed={self.seed}",
            f"status={self.status}",
        ]
        for key in sorted(self.tolerances):
            lines.append(f"tolerance.{key}={format_value(self.tolerances[key])}")
        for key in sorted(self.outputs):
            lines.append(f"output.{key}={self.outputs[key]}")
        for key in sorted(self.assertions):
            ok, value = self.assertions[key]
            state = "pass" if ok else "fail"
            lines.append(f"assertion.{key}={state} value={format_value(value)}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str, name: str = "manifest.txt") -> str:
        payload = self.render().encode("utf-8")
        with open(os.path.join(out_dir, name), "wb") as handle:
            handle.write(payload)
        return hashlib.sha256(payload).hexdigest()
