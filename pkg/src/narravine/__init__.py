"""Narravine: a robot-free collaborative storytelling stack.

A supervisor finite-state machine drives a turn-taking story game between a
human participant and a simulated robot narrator.  Modules talk over a small
named-port TCP middleware; perception is simulated from scene scripts or a web
console; story text comes from pluggable generative clients; every session is
logged and scored.
"""

__version__ = "0.1.0"
