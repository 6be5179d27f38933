"""Collects one verdict line per acceptance criterion for the terminal summary."""

from __future__ import annotations

RESULTS: dict[str, tuple[bool, str]] = {}


def record(key: str, passed: bool, detail: str = "") -> bool:
    RESULTS[key] = (bool(passed), detail)
    return bool(passed)


def lines() -> list[str]:
    def order(key):
        head = key.rstrip("abcdefghijklmnopqrstuvwxyz")
        return int(head), key[len(head):]

    return [f"criterion {k:<3} {'PASS' if ok else 'FAIL'}  {detail}"
            for k, (ok, detail) in sorted(RESULTS.items(), key=lambda kv: order(kv[0]))]
