"""REST service, sync protocol, and anonymized export."""

from .app import ServiceContext, create_app
from .config import ServiceConfig

__all__ = ["ServiceContext", "create_app", "ServiceConfig"]
