"""Trust applications built from scripts plus host-side drivers."""
from .world import ManualClock, Principal, World, load_app, script_path, script_source

__all__ = ["ManualClock", "Principal", "World", "load_app", "script_path", "script_source"]
