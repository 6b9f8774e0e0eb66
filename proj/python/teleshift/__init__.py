"""Python access to the TeleSHift core: merge, embedding, scenarios and the hub."""

import json

from . import _teleshift
from ._teleshift import TeleshiftError, backoff_delay_ms, sha256_hex

__all__ = [
    "Hub",
    "TeleshiftError",
    "backoff_delay_ms",
    "canonical",
    "embed_assembly",
    "merge_topology",
    "run_scenario",
    "run_scenario_file",
    "sha256_hex",
]


def merge_topology(topology, updates):
    """LWW-merge a list of ArmUpdate dicts into a topology dict.

    Returns a dict with the merged ``topology``, the ``applied`` updates and the
    ``unknown`` substructure ids.
    """
    return json.loads(_teleshift.merge_topology(json.dumps(topology), json.dumps(updates)))


def embed_assembly(topology, anchor):
    """Body centers in mm keyed by substructure id, ``anchor`` at the origin."""
    return {k: tuple(v) for k, v in json.loads(_teleshift.embed_assembly(json.dumps(topology), anchor)).items()}


def run_scenario(scenario, realtime=False):
    """Runs a scenario dict on the virtual clock and returns its report."""
    return json.loads(_teleshift.run_scenario(json.dumps(scenario), realtime))


def run_scenario_file(path):
    return json.loads(_teleshift.run_scenario_file(str(path)))


def canonical(value):
    """Sorted-key, whitespace-free JSON text."""
    return _teleshift.canonical(json.dumps(value))


class Hub:
    """In-process hub. Envelopes go in and come out as dicts."""

    def __init__(self):
        self._hub = _teleshift.Hub()

    def open_connection(self):
        return self._hub.open_connection()

    def close_connection(self, conn):
        self._hub.close_connection(conn)

    def handle(self, conn, envelope, now_ms=0):
        line = envelope if isinstance(envelope, str) else json.dumps(envelope)
        return [(to, json.loads(out)) for to, out in self._hub.handle_line(conn, line, now_ms)]

    def session(self, session_id):
        text = self._hub.session(session_id)
        return None if text is None else json.loads(text)
