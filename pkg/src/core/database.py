"""
Database connection and session management for the run ledger.

The ledger is an optional SQLite database recording every command run
(see src/core/models/run_manifest.py). Engines are created per database URL
on first use, so importing this module never touches the filesystem.
"""
import logging
from pathlib import Path
from typing import Dict, Iterator, Union

from sqlalchemy import create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import Session, declarative_base, sessionmaker

logger = logging.getLogger(__name__)

DEFAULT_LEDGER = Path("data") / "runs.db"

# Create base class for models
Base = declarative_base()

_engines: Dict[str, Engine] = {}


def ledger_url(path: Union[str, Path] = DEFAULT_LEDGER) -> str:
    """SQLite URL for a ledger file; ``:memory:`` gives an in-memory database."""
    if str(path) == ":memory:":
        return "sqlite://"
    return f"sqlite:///{Path(path)}"


def get_engine(url: str) -> Engine:
    """Engine for ``url``, created once per URL."""
    if url not in _engines:
        if url.startswith("sqlite:///"):
            Path(url[len("sqlite:///"):]).parent.mkdir(parents=True, exist_ok=True)
        _engines[url] = create_engine(url)
        logger.debug(f"Created engine for {url}")
    return _engines[url]


def session_factory(url: str) -> sessionmaker:
    return sessionmaker(autocommit=False, autoflush=False, bind=get_engine(url))


def get_db(url: str) -> Iterator[Session]:
    """Get database session"""
    db = session_factory(url)()
    try:
        yield db
    finally:
        db.close()


def init_db(url: str) -> Engine:
    """Initialize database, creating tables if they don't exist"""
    # Register the models on Base.metadata before creating tables
    import src.core.models  # noqa: F401  pylint: disable=import-outside-toplevel,unused-import

    engine = get_engine(url)
    Base.metadata.create_all(bind=engine)
    return engine
