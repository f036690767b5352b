"""Desk-scale simulated RFID supply-network platform.

Typed tag templates encoded onto passive-tag memory, ModBus-connected
control gates with history/scripts/alarms, cross-enterprise traceability,
and a deterministic scenario runner. Everything runs against a simulated
clock; no hardware or wall time anywhere.
"""

__version__ = "0.1.0"
