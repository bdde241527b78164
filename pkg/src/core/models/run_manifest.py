"""
Run ledger models.

This module defines the records kept for every command run when a ledger
database is given:
- RunRecord: One command invocation with its configuration, inputs and outputs
- StageTiming: Wall-clock time of one pipeline stage of a run

The same information is written next to the outputs as ``manifest.json``;
the ledger makes runs queryable across output directories.
"""
import json
from datetime import datetime

from sqlalchemy import Column, DateTime, Float, ForeignKey, Integer, String, Text
from sqlalchemy.orm import relationship

from src.core.database import Base


class RunRecord(Base):
    """
    SQLAlchemy model representing one command run.

    Attributes:
        id (int): Primary key
        command (str): Command name, e.g. "project" or "eval"
        config_name (str): Preset name or config file path
        seed (str): Seed the run used, in decimal (unsigned 64-bit values exceed SQLite INTEGER)
        inputs_json (str): JSON list of input paths
        output_dir (str): Directory the outputs were written to
        exit_code (int): Process exit status
        created_at (datetime): When the run was recorded
        timings (List[StageTiming]): Per-stage timings

    Example:
        >>> run = RunRecord(command="project", config_name="scannet", seed="0", output_dir="out")
        >>> run.inputs = ["scene.json"]
    """

    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, index=True)
    command = Column(String, nullable=False, index=True)
    config_name = Column(String, nullable=False)
    seed = Column(String(20), default="0")
    inputs_json = Column(Text, default="[]")
    output_dir = Column(String, nullable=False)
    exit_code = Column(Integer, default=0)
    created_at = Column(DateTime, default=datetime.now)

    # Relationships
    timings = relationship("StageTiming", back_populates="run", cascade="all, delete-orphan",
                           order_by="StageTiming.position")

    def __repr__(self):
        return f"<RunRecord(id={self.id}, command='{self.command}', config='{self.config_name}')>"

    @property
    def inputs(self):
        return json.loads(self.inputs_json or "[]")

    @inputs.setter
    def inputs(self, paths):
        self.inputs_json = json.dumps([str(p) for p in paths])

    @property
    def total_ms(self) -> float:
        """Sum of all stage timings in milliseconds."""
        return sum(t.duration_ms for t in self.timings)


class StageTiming(Base):
    """
    SQLAlchemy model representing the duration of one stage of a run.

    Attributes:
        id (int): Primary key
        run_id (int): Foreign key to the run
        position (int): Order of the stage within the run
        stage (str): Stage name, e.g. "project" or "aggregate"
        duration_ms (float): Wall-clock duration in milliseconds
    """

    __tablename__ = "stage_timings"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(Integer, ForeignKey("runs.id"), nullable=False)
    position = Column(Integer, nullable=False, default=0)
    stage = Column(String, nullable=False)
    duration_ms = Column(Float, nullable=False)

    run = relationship("RunRecord", back_populates="timings")

    def __repr__(self):
        return f"<StageTiming(stage='{self.stage}', duration_ms={self.duration_ms:.1f})>"
