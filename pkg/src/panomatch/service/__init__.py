from .app import create_app
from .store import DocumentStore, NotFound, RevisionConflict, UnprocessableEntity

__all__ = [
    "create_app",
    "DocumentStore",
    "NotFound",
    "RevisionConflict",
    "UnprocessableEntity",
]
